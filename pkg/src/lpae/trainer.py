"""Training loop, baselines, metrics and experiment sweeps."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .datagen import Dataset, corrupt_noise, generate_dataset, mask_features
from .errors import ContractError, DivergenceError, SolverError
from .hybrid import AnnealSchedule, HybridLossConfig, LossBreakdown, LpBatch, \
    batch_hybrid_grad, lambda_at
from .lp import LinearProgram, frank_wolfe_projection, solve_simplex
from .net import AdamState, Mlp, adam_step, forward, xavier_init

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
TIMING_REPS = 5
THROUGHPUT_BATCH = 1000


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-4
    lambda0: float = 1.0
    alpha: float = 1.5
    lambda_max: float = 1e3
    mu: float = 0.1
    latent_dim: Optional[int] = None
    hidden: int = 64
    seed: int = 0
    weight_decay: float = 1e-5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        if self.lambda0 < 0 or self.mu < 0:
            raise ContractError("lambda0 and mu must be >= 0")

    @property
    def penalized(self) -> bool:
        return self.lambda0 > 0

    def schedule(self) -> AnnealSchedule:
        return AnnealSchedule(self.lambda0, self.alpha, self.lambda_max)

    def lam(self, epoch: int) -> float:
        return lambda_at(self.schedule(), epoch) if self.penalized else 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochLog:
    epoch: int
    lam: float
    loss: LossBreakdown
    probe_feasibility_pct: float = float("nan")
    probe_violation: float = float("nan")


@dataclass
class TrainResult:
    encoder: Mlp
    decoder: Mlp
    logs: list[EpochLog]
    config: TrainConfig


# --------------------------------------------------------------------------
# Helpers


def pad_lp(lp: LinearProgram, width: int) -> LinearProgram:
    """Append free latent coordinates (zero columns, zero cost)."""
    if width == lp.n:
        return lp
    if width < lp.n:
        raise ContractError(f"latent_dim {width} smaller than LP dimension {lp.n}")
    extra = width - lp.n
    return LinearProgram(np.hstack([lp.A, np.zeros((lp.m, extra))]), lp.b,
                         np.concatenate([lp.c, np.zeros(extra)]))


def _lp_batch(ds: Dataset, width: int) -> LpBatch:
    batch = LpBatch.from_lps(ds.lps)
    if width == ds.n:
        return batch
    if width < ds.n:
        raise ContractError(f"latent_dim {width} smaller than LP dimension {ds.n}")
    pad = width - ds.n
    A = np.concatenate([batch.A, np.zeros(batch.A.shape[:-1] + (pad,))], axis=-1)
    c = np.concatenate([batch.c, np.zeros(batch.c.shape[:-1] + (pad,))], axis=-1)
    return LpBatch(A, batch.b, c)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def train_eval_split(ds: Dataset, eval_every: int = 5) -> tuple[Dataset, Dataset]:
    """Deterministic 80/20 split: a record is held out iff hash(index) % 5 == 0."""
    held = [i for i in range(len(ds)) if _splitmix64(i) % eval_every == 0]
    held_set = set(held)
    kept = [i for i in range(len(ds)) if i not in held_set]
    return ds.subset(kept), ds.subset(held)


def _feasible_mask(lps: LpBatch, Z: np.ndarray, n: int, tol: float) -> np.ndarray:
    ok = np.all(lps.residual(Z) <= tol, axis=1)
    return ok & np.all(Z[:, :n] >= -tol, axis=1)


# --------------------------------------------------------------------------
# Training


def train(ds: Dataset, cfg: TrainConfig, probe: Optional[Dataset] = None,
          tol: float = FEAS_TOL) -> TrainResult:
    """Penalty-annealed autoencoder training.

    Per epoch t: lam = min(lambda0 * alpha**t, lambda_max); the records are
    shuffled with a per-epoch seed, and every mini-batch takes one Adam step
    on the batch-mean hybrid loss.  With ``lambda0 == 0`` the penalty is
    switched off and, together with ``mu == 0``, this is a plain autoencoder.
    """
    if len(ds) == 0:
        raise ContractError("empty dataset")
    width = cfg.latent_dim or ds.n
    X = ds.features
    lps = _lp_batch(ds, width)
    probe_X = probe.features if probe is not None and len(probe) else None
    probe_lps = _lp_batch(probe, width) if probe_X is not None else None

    init_enc, init_dec, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    enc = xavier_init([ds.d, cfg.hidden, width], init_enc)
    dec = xavier_init([width, cfg.hidden, ds.d], init_dec)
    enc_state = AdamState.for_mlp(enc, cfg.learning_rate, cfg.weight_decay)
    dec_state = AdamState.for_mlp(dec, cfg.learning_rate, cfg.weight_decay)
    epoch_seqs = shuffle_seq.spawn(cfg.epochs)

    logs = []
    N = len(ds)
    for t in range(cfg.epochs):
        lam = cfg.lam(t)
        loss_cfg = HybridLossConfig(lam, cfg.mu)
        order = np.random.default_rng(epoch_seqs[t]).permutation(N)
        sums = np.zeros(4)
        for k, start in enumerate(range(0, N, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                res = batch_hybrid_grad(X[idx], enc, dec, lps.take(idx), loss_cfg)
                enc, enc_state = adam_step(enc, res.encoder_grads, enc_state)
                dec, dec_state = adam_step(dec, res.decoder_grads, dec_state)
            except DivergenceError as exc:
                raise DivergenceError(f"diverged at epoch {t}, batch {k}: {exc}",
                                      epoch=t, batch=k) from exc
            br = res.breakdown
            sums += len(idx) * np.array([br.rec, br.viol, br.obj, br.total])
        rec, viol, obj, _ = sums / N
        entry = EpochLog(t, lam, LossBreakdown(rec, viol, obj,
                                               rec + lam * viol - cfg.mu * obj))
        if probe_X is not None:
            Z = enc(probe_X)
            entry.probe_feasibility_pct = 100.0 * float(
                _feasible_mask(probe_lps, Z, probe.n, tol).mean())
            entry.probe_violation = float(probe_lps.violation(Z).mean())
        logs.append(entry)
        log.debug("epoch %d lam=%g total=%.4g feas=%.1f", t, lam, entry.loss.total,
                  entry.probe_feasibility_pct)
    return TrainResult(enc, dec, logs, cfg)


# --------------------------------------------------------------------------
# Evaluation


@dataclass
class Metrics:
    feasibility_pct: float
    cost_gap_pct: float
    cost_gap_all_pct: float
    mse: Optional[float]
    violation_mean: float
    time_ms: float
    throughput_ms: float = float("nan")
    min_gap_pct: float = float("nan")
    n_eval: int = 0
    gap_bound_violation_pct: float = float("nan")

    TIMING_FIELDS = ("time_ms", "throughput_ms")

    def as_row(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=1 << 16)
def lp_optimum(lp: LinearProgram) -> float:
    sol = solve_simplex(lp)
    if not sol.optimal:
        raise SolverError(f"record LP not solvable: {sol.status.value}")
    return sol.objective


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _score(ds: Dataset, Z: np.ndarray, Xh: Optional[np.ndarray], tol: float) -> dict:
    n = ds.n
    lps = LpBatch.from_lps(ds.lps)
    Zn = Z[:, :n]
    feas = _feasible_mask(lps, Zn, n, tol)
    opt = np.array([lp_optimum(lp) for lp in ds.lps])
    gap = 100.0 * (opt - lps.objective(Zn)) / opt
    return dict(
        feasibility_pct=100.0 * float(feas.mean()),
        cost_gap_pct=float(gap[feas].mean()) if feas.any() else float("nan"),
        cost_gap_all_pct=float(gap.mean()),
        mse=None if Xh is None else float(np.mean((Xh - ds.features) ** 2)),
        violation_mean=float(lps.violation(Zn).mean()),
        min_gap_pct=float(gap[feas].min()) if feas.any() else float("nan"),
        n_eval=len(ds),
    )


def _throughput(enc: Mlp, X: np.ndarray, reps: int) -> float:
    """Median wall-clock (ms) of one batched encoder pass over 1000 inputs."""
    reps_needed = -(-THROUGHPUT_BATCH // len(X))
    Xb = np.tile(X, (reps_needed, 1))[:THROUGHPUT_BATCH]
    return 1e3 * _median_time(lambda: forward(enc, Xb), reps)


def evaluate(encoder: Mlp, decoder: Mlp, ds: Dataset, tol: float = FEAS_TOL,
             timing_reps: int = TIMING_REPS) -> Metrics:
    """Feasibility, cost gap, reconstruction MSE and inference time on ``ds``.

    ``time_ms`` is the per-instance latency of batch-1 encoder passes (median
    over ``timing_reps`` sweeps); ``throughput_ms`` times one batch of 1000.
    """
    X = ds.features
    Z = encoder(X)
    Xh = decoder(Z)
    scores = _score(ds, Z, Xh, tol)
    rows = [x[None, :] for x in X]

    def per_instance():
        for x in rows:
            forward(encoder, x)

    time_ms = 1e3 * _median_time(per_instance, timing_reps) / len(X)
    return Metrics(**scores, time_ms=time_ms,
                   throughput_ms=_throughput(encoder, X, timing_reps))


def evaluate_projected(encoder: Mlp, decoder: Mlp, ds: Dataset, tol: float = FEAS_TOL,
                       fw_iters: int = 500, fw_tol: float = 1e-6) -> Metrics:
    """Metrics after replacing each latent by its Frank-Wolfe projection.

    MSE is that of the unprojected autoencoder.  Timing covers the encoder
    pass plus the projection of each instance, measured in a single sweep.
    """
    X = ds.features
    Xh = decoder(encoder(X))
    n = ds.n
    Z = np.empty((len(ds), n))
    t0 = time.perf_counter()
    for i, (x, lp) in enumerate(zip(X, ds.lps)):
        z = encoder(x)[:n]
        Z[i] = frank_wolfe_projection(lp, z, fw_iters, fw_tol).z
    elapsed = time.perf_counter() - t0
    scores = _score(ds, Z, Xh, tol)
    return Metrics(**scores, time_ms=1e3 * elapsed / len(ds))


def gap_bound_violations(encoder: Mlp, ds: Dataset, loss: HybridLossConfig) -> float:
    """Percent of records where c'z* - c'z_hat exceeds (lam / mu) * phi(A z_hat - b).

    The inequality is reported, never assumed; NaN when mu == 0.
    """
    if loss.mu <= 0:
        return float("nan")
    lps = LpBatch.from_lps(ds.lps)
    Z = encoder(ds.features)[:, :ds.n]
    bound = loss.lam / loss.mu * lps.violation(Z)
    opt = np.array([lp_optimum(lp) for lp in ds.lps])
    true_gap = opt - lps.objective(Z)
    return 100.0 * float(np.mean(true_gap > bound + 1e-9))


def baseline_ae_project(train_ds: Dataset, eval_ds: Dataset, cfg: TrainConfig,
                        tol: float = FEAS_TOL) -> tuple[Metrics, TrainResult]:
    """Plain autoencoder (lam = mu = 0) with post-hoc projection of the latent."""
    res = train(train_ds, replace(cfg, lambda0=0.0, mu=0.0))
    return evaluate_projected(res.encoder, res.decoder, eval_ds, tol), res


def baseline_lp(ds: Dataset, tol: float = FEAS_TOL) -> Metrics:
    """Exact per-record simplex solves; the reference for gap and latency."""
    Z = np.empty((len(ds), ds.n))
    t0 = time.perf_counter()
    for i, lp in enumerate(ds.lps):
        sol = solve_simplex(lp)
        if not sol.optimal:
            raise SolverError(f"record {i}: {sol.status.value}")
        Z[i] = sol.x
    elapsed = time.perf_counter() - t0
    scores = _score(ds, Z, None, tol)
    return Metrics(**scores, time_ms=1e3 * elapsed / len(ds),
                   throughput_ms=1e3 * elapsed * THROUGHPUT_BATCH / len(ds))


# --------------------------------------------------------------------------
# Experiments

METHODS = ("lpae", "ae_proj", "lp")
CORRUPTIONS = ("clean", "noise", "mask")

DEFAULT_EXPERIMENT = {
    "dataset": {"preset": "hospital", "count": 500, "seed": 0},
    "train": {},
    "methods": ["lpae", "ae_proj", "lp"],
    "corruptions": ["clean"],
    "seeds": [0, 1, 2],
    "sweep": {},
    "noise": {"snr_db": 5.0, "fraction": 0.2},
    "mask": {"fraction": 0.3},
    "tol": FEAS_TOL,
    "output_dir": None,
}
SWEEP_AXES = ("lambda_max", "alpha", "lambda0", "latent_dim", "mu")


def load_experiment_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return resolve_experiment_config(json.load(fh))


def resolve_experiment_config(cfg: dict) -> dict:
    """Fill defaults and validate an experiment description."""
    unknown = set(cfg) - set(DEFAULT_EXPERIMENT)
    if unknown:
        raise ContractError(f"unknown experiment keys: {sorted(unknown)}")
    out = json.loads(json.dumps(DEFAULT_EXPERIMENT))
    for key, val in cfg.items():
        if isinstance(out.get(key), dict) and isinstance(val, dict):
            out[key].update(val)
        else:
            out[key] = val
    bad = [m for m in out["methods"] if m not in METHODS]
    if bad:
        raise ContractError(f"unknown methods {bad}; choose from {METHODS}")
    bad = [c for c in out["corruptions"] if c not in CORRUPTIONS]
    if bad:
        raise ContractError(f"unknown corruptions {bad}; choose from {CORRUPTIONS}")
    bad = [a for a in out["sweep"] if a not in SWEEP_AXES]
    if bad:
        raise ContractError(f"unknown sweep axes {bad}; choose from {SWEEP_AXES}")
    TrainConfig.from_dict(out["train"])
    return out


@dataclass
class Cell:
    method: str
    corruption: str
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        parts = [self.method, self.corruption]
        parts += [f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                  for k, v in sorted(self.params.items())]
        parts.append(f"seed={self.seed}")
        return "_".join(parts)


def experiment_cells(cfg: dict) -> list[Cell]:
    axes = sorted(cfg["sweep"])
    cells = []
    for method in cfg["methods"]:
        # only the penalized model responds to penalty-schedule axes
        used = axes if method == "lpae" else [a for a in axes if a == "latent_dim"]
        if method == "lp":
            used = []
        combos = itertools.product(*(cfg["sweep"][a] for a in used))
        for combo in combos:
            for corruption in cfg["corruptions"]:
                for seed in cfg["seeds"]:
                    cells.append(Cell(method, corruption, seed, dict(zip(used, combo))))
    return cells


CSV_FIELDS = ["cell", "method", "corruption", *SWEEP_AXES, "seed", "status",
              "feasibility_pct", "cost_gap_pct", "cost_gap_all_pct", "mse",
              "violation_mean", "min_gap_pct", "time_ms", "throughput_ms", "n_eval",
              "gap_bound_violation_pct", "error"]
TABLE_COLUMNS = ("Feas.(%)", "Cost Gap(%)", "MSE", "Time(ms)")


def corrupt(ds: Dataset, corruption: str, cfg: dict) -> Dataset:
    if corruption == "noise":
        return corrupt_noise(ds, cfg["noise"]["snr_db"], cfg["noise"]["fraction"],
                             ds.seed + 101)
    if corruption == "mask":
        return mask_features(ds, cfg["mask"]["fraction"], ds.seed + 202)
    return ds


@dataclass
class Report:
    rows: list[dict]
    summary: str
    epoch_logs: dict[str, list[EpochLog]] = field(default_factory=dict)


def run_cell(cell: Cell, train_ds: Dataset, eval_ds: Dataset, cfg: dict
             ) -> tuple[Metrics, Optional[TrainResult]]:
    tol = cfg["tol"]
    tcfg = TrainConfig.from_dict({**cfg["train"], **cell.params, "seed": cell.seed})
    # models train on clean data; corruption hits the held-out inputs only
    eval_c = corrupt(eval_ds, cell.corruption, cfg)
    if cell.method == "lp":
        return baseline_lp(eval_c, tol), None
    if cell.method == "ae_proj":
        metrics, res = baseline_ae_project(train_ds, eval_c, tcfg, tol)
        return metrics, res
    res = train(train_ds, tcfg, probe=eval_c, tol=tol)
    metrics = evaluate(res.encoder, res.decoder, eval_c, tol)
    final = HybridLossConfig(res.logs[-1].lam, tcfg.mu)
    metrics.gap_bound_violation_pct = gap_bound_violations(res.encoder, eval_c, final)
    return metrics, res


def _epoch_rows(logs: list[EpochLog]) -> list[dict]:
    return [dict(epoch=e.epoch, lam=e.lam, rec=e.loss.rec, viol=e.loss.viol,
                 obj=e.loss.obj, total=e.loss.total,
                 probe_feasibility_pct=e.probe_feasibility_pct,
                 probe_violation=e.probe_violation) for e in logs]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_experiment(cfg: dict, output_dir=None, progress=None) -> Report:
    """Run methods x sweep values x corruptions x seeds and tabulate.

    A failing cell is recorded with status ``error`` and the sweep goes on.
    With an output directory, ``metrics.csv`` is appended and flushed one row
    per finished cell and a ``RUNNING`` marker exists until the sweep ends;
    an interrupted run therefore leaves a partial CSV next to the marker.
    """
    cfg = resolve_experiment_config(cfg)
    out = Path(output_dir or cfg["output_dir"]) if (output_dir or cfg["output_dir"]) \
        else None
    cells = experiment_cells(cfg)
    rows: list[dict] = []
    epoch_logs: dict[str, list[EpochLog]] = {}
    fh = writer = marker = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        marker = out / "RUNNING"
        marker.write_text(f"{len(cells)} cells\n")
        fh = open(out / "metrics.csv", "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        fh.flush()
    try:
        if cells:
            ds = generate_dataset(cfg["dataset"]["count"], cfg["dataset"]["seed"],
                                  cfg["dataset"]["preset"])
            train_ds, eval_ds = train_eval_split(ds)
        for k, cell in enumerate(cells):
            row = {"cell": cell.name, "method": cell.method,
                   "corruption": cell.corruption, "seed": cell.seed, **cell.params}
            try:
                metrics, res = run_cell(cell, train_ds, eval_ds, cfg)
                row.update(metrics.as_row(), status="ok")
                if res is not None:
                    epoch_logs[cell.name] = res.logs
            except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
                log.exception("cell %s failed", cell.name)
                row.update(status="error", error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
            if writer is not None:
                writer.writerow({k: _fmt(row.get(k)) for k in CSV_FIELDS})
                fh.flush()
                if cell.name in epoch_logs:
                    _write_csv(out / f"epochs_{cell.name}.csv",
                               _epoch_rows(epoch_logs[cell.name]))
            if progress is not None:
                progress(k + 1, len(cells), row)
    finally:
        if fh is not None:
            fh.close()
    summary = summarize(rows)
    if out is not None:
        (out / "summary.txt").write_text(summary, encoding="utf-8")
        marker.unlink()
    return Report(rows, summary, epoch_logs)


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def group_rows(rows: list[dict]) -> dict[tuple, list[dict]]:
    """Group successful rows by everything except the seed, in first-seen order."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r.get("status") != "ok":
            continue
        key = (r["method"], r["corruption"],
               *((a, r[a]) for a in SWEEP_AXES if r.get(a) not in (None, "")))
        groups.setdefault(key, []).append(r)
    return groups


def _mean_std(values) -> str:
    vals = [float(v) for v in values if v not in (None, "") and np.isfinite(float(v))]
    if not vals:
        return "—"
    arr = np.array(vals)
    return f"{arr.mean():.4g} ± {arr.std(ddof=1) if arr.size > 1 else 0.0:.2g}"


def summarize(rows: list[dict]) -> str:
    """Table-style summary: mean ± std over seeds for each configuration."""
    header = ["Method", *TABLE_COLUMNS, "seeds"]
    lines = []
    for key, group in group_rows(rows).items():
        label = " ".join([key[0], key[1], *(f"{a}={v}" for a, v in key[2:])])
        lines.append([
            label,
            _mean_std(r["feasibility_pct"] for r in group),
            _mean_std(r["cost_gap_pct"] for r in group),
            _mean_std(r["mse"] for r in group) if group[0]["method"] != "lp" else "—",
            _mean_std(r["time_ms"] for r in group),
            str(len(group)),
        ])
    failed = sum(1 for r in rows if r.get("status") != "ok")
    widths = [max(len(str(x)) for x in col) for col in zip(header, *lines)] if lines \
        else [len(h) for h in header]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    text = [fmt.format(*header)] + [fmt.format(*ln) for ln in lines]
    flagged = sum(1 for r in rows if r.get("status") == "ok"
                  and float(r.get("gap_bound_violation_pct") or "nan") > 0)
    if flagged:
        text.append(f"{flagged} cell(s) where the true gap exceeded (lambda/mu)*phi "
                    "on some records; see gap_bound_violation_pct")
    if failed:
        text.append(f"{failed} cell(s) failed; see metrics.csv")
    return "\n".join(text) + "\n"
