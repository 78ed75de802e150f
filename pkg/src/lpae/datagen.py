"""Synthetic operating-theatre scenarios, their LPs and feature encodings.

Two presets are available:

``hospital``
    Daily scheduling scenario with sampled staff/equipment counts and
    procedure durations.  The LP has 4 variables (blocks of three elective
    types and one emergency type) and 11 rows: doctor-, nurse- and
    machine-hour capacities, one block cap per type, and the sign
    constraints written out as -z_k <= 0 so the violation penalty sees
    them.  Features: 8.
``real-scale``
    A synthetic stand-in with 136 variables, 57 constraints and 64 features
    (57 capacity levels plus a one-hot weekday).  The constraint matrix is
    random, nonnegative and shared by all records; capacities vary per day.
"""
from __future__ import annotations

import csv
import hashlib
import json
import statistics
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError
from .lp import LinearProgram, format_lp, read_lp_lines

SHIFT_HOURS = 8.0
DOCTORS = (4, 12)
NURSES = (8, 24)
MACHINES = (2, 8)
TRI_LOW, TRI_MODE, TRI_HIGH = 1.0, 3.0, 5.0
EM_LOG_MEAN, EM_LOG_STD = 1.1, 0.4
EM_CLIP_QUANTILE = 0.999
SHIFT_RANGE = (0.0, 24.0)
NURSES_PER_BLOCK = 2.0

REAL_N, REAL_M, REAL_D = 136, 57, 64
PRESETS = ("hospital", "real-scale")
FILE_MAGIC = "# lpae-dataset v1"


@dataclass(frozen=True)
class HospitalScenario:
    doctors: int
    nurses: int
    machines: int
    elective_durations: tuple[float, float, float]
    emergency_duration: float
    shift_limit: float = SHIFT_HOURS

    @property
    def durations(self) -> np.ndarray:
        return np.array([*self.elective_durations, self.emergency_duration])

    def to_row(self) -> list[float]:
        return [self.doctors, self.nurses, self.machines, *self.elective_durations,
                self.emergency_duration, self.shift_limit]

    @classmethod
    def from_row(cls, row) -> "HospitalScenario":
        d, nu, ma, t1, t2, t3, tem, shift = row
        return cls(int(d), int(nu), int(ma), (float(t1), float(t2), float(t3)),
                   float(tem), float(shift))


def triangular_inv_cdf(u, low=TRI_LOW, mode=TRI_MODE, high=TRI_HIGH):
    u = np.asarray(u, dtype=np.float64)
    split = (mode - low) / (high - low)
    left = low + np.sqrt(u * (high - low) * (mode - low))
    right = high - np.sqrt((1.0 - u) * (high - low) * (high - mode))
    return np.where(u < split, left, right)


def emergency_clip() -> float:
    """Upper scaling bound for the (unbounded) lognormal emergency duration."""
    z = statistics.NormalDist().inv_cdf(EM_CLIP_QUANTILE)
    return float(np.exp(EM_LOG_MEAN + EM_LOG_STD * z))


def sample_scenario(rng: np.random.Generator) -> HospitalScenario:
    doctors = int(rng.integers(DOCTORS[0], DOCTORS[1] + 1))
    nurses = int(rng.integers(NURSES[0], NURSES[1] + 1))
    machines = int(rng.integers(MACHINES[0], MACHINES[1] + 1))
    elective = triangular_inv_cdf(rng.random(3))
    emergency = float(np.exp(EM_LOG_MEAN + EM_LOG_STD * rng.standard_normal()))
    return HospitalScenario(doctors, nurses, machines,
                            tuple(float(t) for t in elective), emergency)


def scenario_to_lp(s: HospitalScenario, nurses_per_block: float = NURSES_PER_BLOCK
                   ) -> LinearProgram:
    """Continuous block-scheduling LP: maximize total blocks.

    Every running block occupies one doctor, ``nurses_per_block`` nurses and
    one machine for its duration; each resource offers ``shift_limit`` hours
    per unit.  A per-type cap (machine-hours / duration) bounds each variable.
    The rows -z_k <= 0 duplicate z >= 0 so the penalty covers them too.
    """
    T = s.durations
    H = s.shift_limit
    n = T.size
    A = np.vstack([T, T, T, np.eye(n), -np.eye(n)])
    b = np.concatenate([
        [H * s.doctors, H * s.nurses / nurses_per_block, H * s.machines],
        H * s.machines / T,
        np.zeros(n),
    ])
    return LinearProgram(A, b, np.ones(n))


def hospital_bounds() -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([DOCTORS[0], NURSES[0], MACHINES[0], TRI_LOW, TRI_LOW, TRI_LOW,
                   0.0, SHIFT_RANGE[0]])
    hi = np.array([DOCTORS[1], NURSES[1], MACHINES[1], TRI_HIGH, TRI_HIGH, TRI_HIGH,
                   emergency_clip(), SHIFT_RANGE[1]])
    return lo, hi


def scenario_to_features(s: HospitalScenario, bounds=None) -> np.ndarray:
    lo, hi = hospital_bounds() if bounds is None else bounds
    raw = np.array(s.to_row(), dtype=np.float64)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def features_to_scenario(x, bounds=None) -> HospitalScenario:
    """Inverse of :func:`scenario_to_features` (exact up to clipping/rounding)."""
    lo, hi = hospital_bounds() if bounds is None else bounds
    raw = lo + np.asarray(x, dtype=np.float64) * (hi - lo)
    raw[:3] = np.rint(raw[:3])
    return HospitalScenario.from_row(raw)


# --------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True, eq=False)
class Record:
    features: np.ndarray
    lp: LinearProgram
    scenario: Optional[HospitalScenario] = None


@dataclass(eq=False)
class Dataset:
    records: list[Record]
    preset: str = "hospital"
    seed: int = 0
    bounds: tuple[np.ndarray, np.ndarray] = field(default_factory=hospital_bounds)

    def __len__(self):
        return len(self.records)

    @property
    def d(self) -> int:
        return self.records[0].features.size

    @property
    def n(self) -> int:
        return self.records[0].lp.n

    @property
    def m(self) -> int:
        return self.records[0].lp.m

    @property
    def features(self) -> np.ndarray:
        return np.stack([r.features for r in self.records])

    @property
    def lps(self) -> list[LinearProgram]:
        return [r.lp for r in self.records]

    def subset(self, indices) -> "Dataset":
        return replace(self, records=[self.records[int(i)] for i in indices])

    def with_features(self, X) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        recs = [replace(r, features=x.copy()) for r, x in zip(self.records, X)]
        return replace(self, records=recs)


def _real_scale_structure(seed: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CA1E]))
    A = rng.uniform(0.0, 1.0, (REAL_M, REAL_N)) * (rng.random((REAL_M, REAL_N)) < 0.3)
    empty = ~A.any(axis=0)
    A[rng.integers(0, REAL_M, empty.sum()), np.flatnonzero(empty)] = rng.uniform(
        0.1, 1.0, empty.sum())
    c = rng.uniform(0.5, 1.5, REAL_N)
    A.flags.writeable = False
    c.flags.writeable = False
    return A, c


def _real_scale_record(rng: np.random.Generator, A: np.ndarray, c: np.ndarray) -> Record:
    level = rng.random(REAL_M)
    day = int(rng.integers(0, 7))
    weekday = np.zeros(7)
    weekday[day] = 1.0
    factor = 0.6 if day >= 5 else 1.0
    b = A.sum(axis=1) * (0.05 + 0.15 * level) * factor
    return Record(np.concatenate([level, weekday]), LinearProgram(A, b, c))


def generate_dataset(count: int, seed: int, preset: str = "hospital") -> Dataset:
    """Sample ``count`` independent records; identical for identical seeds.

    Each record draws from its own child of ``SeedSequence(seed)``, so
    records can be generated in any order or in parallel with the same
    result.
    """
    if count < 1:
        raise ContractError("count must be >= 1")
    if preset not in PRESETS:
        raise ContractError(f"unknown preset {preset!r}; choose from {PRESETS}")
    children = np.random.SeedSequence(seed).spawn(count)
    if preset == "hospital":
        bounds = hospital_bounds()
        records = []
        for child in children:
            s = sample_scenario(np.random.default_rng(child))
            records.append(Record(scenario_to_features(s, bounds), scenario_to_lp(s), s))
        return Dataset(records, preset, seed, bounds)
    A, c = _real_scale_structure(seed)
    records = [_real_scale_record(np.random.default_rng(ch), A, c) for ch in children]
    return Dataset(records, preset, seed, (np.zeros(REAL_D), np.ones(REAL_D)))


# --------------------------------------------------------------------------
# Corruptions


def _record_key(rec: Record) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(rec.features.tobytes())
    h.update(rec.lp.b.tobytes())
    h.update(rec.lp.c.tobytes())
    return int.from_bytes(h.digest(), "little")


def _record_rng(seed: int, rec: Record, salt: int) -> np.random.Generator:
    key = _record_key(rec)
    return np.random.default_rng(np.random.SeedSequence([seed, salt, key]))


def _check_fraction(fraction: float) -> None:
    if not 0.0 <= fraction <= 1.0:
        raise ContractError(f"fraction must lie in [0, 1], got {fraction}")


def corrupt_noise(ds: Dataset, snr_db: float, fraction: float, seed: int) -> Dataset:
    """Add Gaussian noise at the given SNR to ``floor(fraction * N)`` records.

    Noise variance per feature is the feature's variance over the dataset
    divided by 10**(snr_db / 10).  Which records are hit, and the noise they
    receive, depend only on the record contents and ``seed``; reordering the
    dataset therefore reorders the output identically.
    """
    _check_fraction(fraction)
    N = len(ds)
    k = int(np.floor(fraction * N))
    if k == 0 or np.isposinf(snr_db):
        return ds
    keys = [_record_key(r) for r in ds.records]
    canon = sorted(range(N), key=lambda i: (keys[i], i))
    X = ds.features
    signal_var = X[canon].var(axis=0)
    noise_std = np.sqrt(signal_var / 10.0 ** (snr_db / 10.0))
    ranks = sorted(range(N), key=lambda i: (_mix(keys[i], seed), i))
    hit = set(ranks[:k])
    out = []
    for i, rec in enumerate(ds.records):
        if i in hit:
            rng = _record_rng(seed, rec, 1)
            x = rec.features + noise_std * rng.standard_normal(rec.features.size)
            rec = replace(rec, features=np.clip(x, 0.0, 1.0))
        out.append(rec)
    return replace(ds, records=out)


def _mix(key: int, seed: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(key.to_bytes(8, "little"))
    h.update(int(seed).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def mask_count(fraction: float, d: int, rng: np.random.Generator) -> int:
    """Stochastic rounding of fraction * d: floor plus a Bernoulli remainder."""
    target = fraction * d
    base = int(np.floor(target))
    return min(d, base + int(rng.random() < target - base))


def mask_features(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Zero out a random ``fraction`` of feature components in every record.

    With ``fraction * d`` non-integral the count per record is its floor or
    ceiling, chosen so the expected masked fraction is exact.
    """
    _check_fraction(fraction)
    if fraction == 0.0:
        return ds
    out = []
    for rec in ds.records:
        rng = _record_rng(seed, rec, 2)
        d = rec.features.size
        k = mask_count(fraction, d, rng)
        x = rec.features.copy()
        x[rng.permutation(d)[:k]] = 0.0
        out.append(replace(rec, features=x))
    return replace(ds, records=out)


# --------------------------------------------------------------------------
# File formats


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_dataset(ds: Dataset, path) -> None:
    """Header line (JSON) followed by one block per record.

    Each block is ``features ...``, ``scenario ...`` (or ``scenario -``) and
    the record's LP in the plain LP text format.
    """
    header = {
        "d": ds.d, "n": ds.n, "m": ds.m, "count": len(ds), "preset": ds.preset,
        "seed": ds.seed, "bounds_lo": [float(v) for v in ds.bounds[0]],
        "bounds_hi": [float(v) for v in ds.bounds[1]],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FILE_MAGIC + "\n")
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in ds.records:
            fh.write("features " + _fmt(rec.features) + "\n")
            if rec.scenario is None:
                fh.write("scenario -\n")
            else:
                fh.write("scenario " + _fmt(rec.scenario.to_row()) + "\n")
            fh.write(format_lp(rec.lp))


def read_header(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != FILE_MAGIC:
            raise ContractError(f"{path}: not an lpae dataset file")
        return json.loads(fh.readline())


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FILE_MAGIC:
        raise ContractError(f"{path}: not an lpae dataset file")
    header = json.loads(lines[1])
    pos = 2
    records = []
    shared: dict[bytes, np.ndarray] = {}
    for _ in range(header["count"]):
        tag, _, rest = lines[pos].partition(" ")
        if tag != "features":
            raise ContractError(f"{path}:{pos + 1}: expected features line")
        x = np.array([float(t) for t in rest.split()])
        tag, _, rest = lines[pos + 1].partition(" ")
        if tag != "scenario":
            raise ContractError(f"{path}:{pos + 2}: expected scenario line")
        scen = None if rest.strip() == "-" else HospitalScenario.from_row(
            [float(t) for t in rest.split()])
        lp, used = read_lp_lines(lines[pos + 2:])
        # share identical constraint matrices between records to save memory
        A = shared.setdefault(lp.A.tobytes(), lp.A)
        if A is not lp.A:
            lp = LinearProgram(A, lp.b, lp.c)
        records.append(Record(x, lp, scen))
        pos += 2 + used
    bounds = (np.array(header["bounds_lo"]), np.array(header["bounds_hi"]))
    return Dataset(records, header["preset"], header["seed"], bounds)


def export_features_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(ds.d)])
        for rec in ds.records:
            w.writerow([repr(float(v)) for v in rec.features])
