from pathlib import Path

import polars as pl
import pytest

import cohort_forge as cf

FIXTURES = Path(__file__).parent / "fixtures"
TASKS_DIR = FIXTURES / "tasks"

HOUR_US = 3_600_000_000
DAY_US = 24 * HOUR_US

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def hours(n) -> int:
    return int(n * HOUR_US)


def make_fixture_records() -> list[cf.EventRecord]:
    """Three-subject hand-built dataset for the 48h mortality task.

    Subject 1 survives all filters (death at 72h -> label 1); subject 2 is
    discharged inside the 48h gap; subject 3 has too few input events.
    """
    rec = cf.EventRecord
    rows = [rec(1, hours(0), "event_type//ADMISSION")]
    rows += [rec(1, hours(h), "LAB//hr", 80.0) for h in (2, 4, 6, 8, 10)]
    rows += [rec(1, hours(72), "event_type//DEATH")]
    rows += [rec(2, hours(0), "event_type//ADMISSION")]
    rows += [rec(2, hours(h), "LAB//hr", 80.0) for h in (1, 3, 5, 7, 9)]
    rows += [rec(2, hours(36), "event_type//DISCHARGE")]
    rows += [rec(3, hours(0), "event_type//ADMISSION")]
    rows += [rec(3, hours(h), "LAB//hr", 80.0) for h in (1, 2)]
    rows += [rec(3, hours(100), "event_type//DISCHARGE")]
    return rows


def records_to_frame(records: list[cf.EventRecord]) -> pl.DataFrame:
    """EventRecords as a file-schema frame (time as datetime[us])."""
    return pl.DataFrame(
        {
            "subject_id": [r.subject_id for r in records],
            "time": [r.time for r in records],
            "code": [r.code for r in records],
            "numeric_value": [r.numeric_value for r in records],
        },
        schema={
            "subject_id": pl.Int64,
            "time": pl.Int64,
            "code": pl.Utf8,
            "numeric_value": pl.Float64,
        },
    ).with_columns(pl.col("time").cast(pl.Datetime("us")))


def write_records(records: list[cf.EventRecord], path: Path) -> Path:
    records_to_frame(records).write_parquet(path)
    return path


@pytest.fixture(scope="session")
def mortality_config_text() -> str:
    return (TASKS_DIR / "first_48h_in_hospital_mortality.yaml").read_text()


@pytest.fixture(scope="session")
def mortality_config(mortality_config_text) -> cf.TaskConfig:
    return cf.parse_task_config(mortality_config_text)


@pytest.fixture(scope="session")
def fixture_records() -> list[cf.EventRecord]:
    return make_fixture_records()


@pytest.fixture(scope="session")
def fixture_source(mortality_config, fixture_records) -> cf.CohortSource:
    return cf.build_timeline(fixture_records, mortality_config)


@pytest.fixture(scope="session")
def subject1_timeline(fixture_source) -> cf.SubjectTimeline:
    return fixture_source.timelines[1]


@pytest.fixture(scope="session")
def task_corpus_paths() -> list[Path]:
    paths = sorted(TASKS_DIR.glob("*.yaml"))
    assert len(paths) == 9
    return paths
