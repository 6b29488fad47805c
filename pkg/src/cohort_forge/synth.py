"""Seeded synthetic event-stream generator.

Produces admission -> labs -> discharge/death episodes per subject, with
ambulatory visits (labs, ECGs, echo measurements, diagnoses) between
episodes, so that every bundled task fixture finds its predicates. The
point is to exercise query semantics, not clinical realism.

Randomness comes from numpy's PCG64, one stream per subject spawned from
``SeedSequence(seed)``; identical specs produce byte-identical files. The
generator choice and seed are recorded in a ``<file>.meta.json`` sidecar.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import polars as pl

from .config import TaskConfig
from .ingest import CohortSource, Provenance, source_from_events_frame

GENERATOR_NAME = "numpy-pcg64"
EPOCH_2020_US = 1_577_836_800 * 1_000_000  # 2020-01-01T00:00:00Z
DAY_US = 86_400_000_000

EVENTS_SCHEMA = {
    "subject_id": pl.Int64,
    "time": pl.Datetime("us"),
    "code": pl.Utf8,
    "numeric_value": pl.Float64,
}


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_subjects: int
    event_rate: float = 4.0  # mean in-stay lab events per day
    admission_prob: float = 0.85  # chance an episode opportunity is an inpatient stay
    discharge_delay_range: tuple[float, float] = (1.0, 8.0)  # stay length, days
    death_prob: float = 0.08  # chance an inpatient stay ends in death
    horizon_days: int = 90

    def __post_init__(self):
        if self.n_subjects < 0:
            raise ValueError("n_subjects must be nonnegative")
        for name in ("admission_prob", "death_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.discharge_delay_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"bad discharge_delay_range {self.discharge_delay_range}")
        if self.horizon_days <= 0 or self.event_rate < 0:
            raise ValueError("horizon_days must be positive and event_rate nonnegative")


def _stay_lab(rng) -> tuple[str, float | None]:
    roll = rng.random()
    if roll < 0.5:
        return "LAB//hr", float(rng.normal(80.0, 12.0))
    if roll < 0.8:
        return "LAB//creatinine", float(abs(rng.normal(1.1, 0.6)) + 0.2)
    return "LAB//eGFR", float(max(5.0, rng.normal(70.0, 25.0)))


def _ambulatory(rng) -> tuple[str, float | None]:
    roll = rng.random()
    if roll < 0.35:
        return "LAB//eGFR", float(max(5.0, rng.normal(70.0, 25.0)))
    if roll < 0.6:
        return "procedure//ECG", None
    if roll < 0.8:
        return "echo//LVEF", float(rng.uniform(15.0, 75.0))
    return "LAB//hr", float(rng.normal(80.0, 12.0))


def _subject_events(rng: np.random.Generator, spec: SynthSpec) -> list[tuple[float, str, float | None]]:
    """(day offset, code, value) triples for one subject, time-sorted.

    Each admission strictly precedes its in-stay events, which strictly
    precede the terminal discharge/death; a death ends the record.
    """
    events: list[tuple[float, str, float | None]] = []
    horizon = float(spec.horizon_days)
    day = float(rng.uniform(0.0, 3.0))
    while day < horizon:
        day += float(rng.exponential(12.0))
        if day >= horizon:
            break
        if rng.random() < spec.admission_prob:
            stay = float(rng.uniform(*spec.discharge_delay_range))
            events.append((day, "event_type//ADMISSION", None))
            n_labs = int(rng.poisson(spec.event_rate * stay))
            for off in np.sort(rng.uniform(0.01 * stay, 0.99 * stay, size=n_labs)):
                code, value = _stay_lab(rng)
                events.append((day + float(off), code, value))
            if rng.random() < 0.35:
                icu_in = day + float(rng.uniform(0.01, 0.3)) * stay
                icu_out = icu_in + float(rng.uniform(0.2, 0.6)) * stay
                events.append((icu_in, "icu//ADMISSION", None))
                events.append((min(icu_out, day + 0.99 * stay), "icu//DISCHARGE", None))
            for code, p in (
                ("diagnosis//MI", 0.10),
                ("diagnosis//DIABETES", 0.15),
                ("diagnosis//CKD", 0.06),
            ):
                if rng.random() < p:
                    events.append((day + float(rng.uniform(0.01, 0.99)) * stay, code, None))
            if rng.random() < spec.death_prob:
                events.append((day + stay, "event_type//DEATH", None))
                break
            events.append((day + stay, "event_type//DISCHARGE", None))
            day += stay + 0.05  # recovery floor keeps episodes disjoint
        else:
            for _ in range(1 + int(rng.poisson(max(spec.event_rate * 0.25, 0.1)))):
                code, value = _ambulatory(rng)
                events.append((day + float(rng.uniform(0.0, 0.5)), code, value))
    if not events:  # every subject must have at least one observed event
        code, value = _ambulatory(rng)
        events.append((min(1.0, horizon / 2.0), code, value))
    events.sort(key=lambda e: (e[0], e[1]))
    return events


def generate_events(spec: SynthSpec) -> pl.DataFrame:
    """Deterministic MEDS-like events frame, sorted by subject then time."""
    sids: list[int] = []
    times: list[int] = []
    codes: list[str] = []
    values: list[float | None] = []
    for i, seq in enumerate(np.random.SeedSequence(spec.seed).spawn(max(spec.n_subjects, 0))):
        rng = np.random.Generator(np.random.PCG64(seq))
        for day, code, value in _subject_events(rng, spec):
            sids.append(i + 1)
            times.append(EPOCH_2020_US + int(round(day * DAY_US)))
            codes.append(code)
            values.append(value)
    df = pl.DataFrame(
        {"subject_id": sids, "time": times, "code": codes, "numeric_value": values},
        schema={**EVENTS_SCHEMA, "time": pl.Int64},
    )
    return df.with_columns(pl.col("time").cast(pl.Datetime("us")))


def write_events(df: pl.DataFrame, path: str | Path, spec: SynthSpec | None = None) -> Path:
    """Write an events frame (parquet, or CSV by suffix) plus generation metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".csv":
        df.write_csv(path)
    else:
        df.write_parquet(path, compression="zstd")
    if spec is not None:
        meta = {
            "generator": GENERATOR_NAME,
            "seed": spec.seed,
            "spec": dataclasses.asdict(spec),
            "rows": df.height,
            "subjects": spec.n_subjects,
        }
        Path(f"{path}.meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return path


def generate_synthetic(spec: SynthSpec, path: str | Path, config: TaskConfig) -> CohortSource:
    """Generate, persist, and load one synthetic dataset.

    The returned CohortSource is indexed against ``config``'s predicates;
    repeated calls with the same spec write byte-identical files.
    """
    df = generate_events(spec)
    path = write_events(df, path, spec)
    canonical = df.with_columns(pl.col("time").cast(pl.Int64).alias("time_us")).drop("time")
    return source_from_events_frame(canonical, config, Provenance(str(path), "meds"))
