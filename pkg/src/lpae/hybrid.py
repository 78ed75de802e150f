"""Hybrid loss: reconstruction + lambda * violation - mu * LP objective.

Each sample may carry its own LP.  Batched evaluation stacks the LPs into an
:class:`LpBatch`; the batch loss is the mean of per-sample losses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DivergenceError
from .lp import LinearProgram, phi, solve_simplex
from .net import Gradients, Mlp, backward, forward


@dataclass(frozen=True)
class HybridLossConfig:
    lam: float = 1.0
    mu: float = 0.1

    def __post_init__(self):
        for name in ("lam", "mu"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class AnnealSchedule:
    lambda0: float = 1.0
    alpha: float = 1.5
    lambda_max: float = 1e3

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ContractError("lambda0 must be > 0")
        if not self.alpha >= 1:
            raise ContractError("alpha must be >= 1")
        if not self.lambda_max >= self.lambda0:
            raise ContractError("lambda_max must be >= lambda0")


def lambda_at(schedule: AnnealSchedule, epoch: int) -> float:
    """Geometric penalty weight lambda0 * alpha**epoch, capped at lambda_max."""
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    # log-space comparison avoids overflow for large epochs
    if schedule.alpha > 1 and epoch * np.log(schedule.alpha) >= np.log(
            schedule.lambda_max / schedule.lambda0):
        return float(schedule.lambda_max)
    return float(min(schedule.lambda0 * schedule.alpha ** epoch, schedule.lambda_max))


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    viol: float
    obj: float
    total: float


def _combine(rec, viol, obj, cfg: HybridLossConfig) -> LossBreakdown:
    return LossBreakdown(rec, viol, obj, rec + cfg.lam * viol - cfg.mu * obj)


class LpBatch:
    """Stacked constraint data for a batch of LPs with equal (m, n).

    ``A`` is (B, m, n), or (m, n) when every sample shares it; ``b`` is
    (B, m) and ``c`` is (B, n) or (n,).
    """

    def __init__(self, A, b, c):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        self.c = np.asarray(c, dtype=np.float64)

    @classmethod
    def from_lps(cls, lps: Sequence[LinearProgram]) -> "LpBatch":
        if not lps:
            raise ContractError("empty LP list")
        shape = lps[0].A.shape
        if any(lp.A.shape != shape for lp in lps):
            raise ContractError("all LPs in a batch must share (m, n)")
        first = lps[0]
        shared_A = all(lp.A is first.A or np.array_equal(lp.A, first.A) for lp in lps)
        shared_c = all(lp.c is first.c or np.array_equal(lp.c, first.c) for lp in lps)
        A = first.A if shared_A else np.stack([lp.A for lp in lps])
        c = first.c if shared_c else np.stack([lp.c for lp in lps])
        return cls(A, np.stack([lp.b for lp in lps]), c)

    def __len__(self):
        return self.b.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[-1]

    def take(self, idx) -> "LpBatch":
        A = self.A if self.A.ndim == 2 else self.A[idx]
        c = self.c if self.c.ndim == 1 else self.c[idx]
        return LpBatch(A, self.b[idx], c)

    def residual(self, Z: np.ndarray) -> np.ndarray:
        if self.A.ndim == 2:
            return Z @ self.A.T - self.b
        return np.einsum("bmn,bn->bm", self.A, Z) - self.b

    def at_transpose(self, R: np.ndarray) -> np.ndarray:
        if self.A.ndim == 2:
            return R @ self.A
        return np.einsum("bmn,bm->bn", self.A, R)

    def objective(self, Z: np.ndarray) -> np.ndarray:
        if self.c.ndim == 1:
            return Z @ self.c
        return np.einsum("bn,bn->b", self.c, Z)

    def violation(self, Z: np.ndarray) -> np.ndarray:
        r = np.maximum(self.residual(Z), 0.0)
        return np.einsum("bm,bm->b", r, r)


def _check_nets(encoder: Mlp, decoder: Mlp, d: int, n: int) -> None:
    if encoder.in_dim != d or decoder.out_dim != d:
        raise ContractError(f"autoencoder must map width {d} to itself")
    if encoder.out_dim != n or decoder.in_dim != n:
        raise ContractError(f"latent width must equal LP dimension n={n}")


@dataclass
class BatchResult:
    encoder_grads: Gradients
    decoder_grads: Gradients
    breakdown: LossBreakdown
    per_sample_total: np.ndarray


def batch_hybrid_grad(X, encoder: Mlp, decoder: Mlp, lps: LpBatch,
                      cfg: HybridLossConfig, with_grads: bool = True) -> BatchResult:
    """Mean hybrid loss over a batch and its exact parameter gradients.

    The decoder only sees the reconstruction signal.  At the latent the
    encoder receives the sum of the reconstruction gradient (through the
    decoder), the penalty gradient 2*lam*A'max(0, Az - b) and -mu*c.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B, d = X.shape
    if len(lps) != B:
        raise ContractError(f"{B} inputs but {len(lps)} LPs")
    _check_nets(encoder, decoder, d, lps.n)
    Z, enc_trace = forward(encoder, X)
    Xh, dec_trace = forward(decoder, Z)
    diff = Xh - X
    rec = np.einsum("bd,bd->b", diff, diff)
    hinge = np.maximum(lps.residual(Z), 0.0)
    viol = np.einsum("bm,bm->b", hinge, hinge)
    obj = lps.objective(Z)
    total = rec + cfg.lam * viol - cfg.mu * obj
    if not np.isfinite(total).all():
        raise DivergenceError("non-finite hybrid loss")
    br = _combine(float(rec.mean()), float(viol.mean()), float(obj.mean()), cfg)
    if not with_grads:
        return BatchResult(None, None, br, total)  # type: ignore[arg-type]

    scale = 1.0 / B
    dec_grads = backward(decoder, dec_trace, 2.0 * scale * diff)
    c_rows = lps.c if lps.c.ndim == 2 else np.broadcast_to(lps.c, Z.shape)
    g_latent = dec_grads.inputs + scale * (2.0 * cfg.lam * lps.at_transpose(hinge)
                                           - cfg.mu * c_rows)
    enc_grads = backward(encoder, enc_trace, g_latent)
    for g in (*enc_grads.params(), *dec_grads.params()):
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite gradient in hybrid loss")
    return BatchResult(enc_grads, dec_grads, br, total)


def _single(x, lp: LinearProgram):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("expected a single input vector")
    return x[None, :], LpBatch(lp.A, lp.b[None, :], lp.c)


def hybrid_loss(x, encoder: Mlp, decoder: Mlp, lp: LinearProgram,
                cfg: HybridLossConfig) -> LossBreakdown:
    """Loss terms for one sample: ||x - g(f(x))||^2, phi(Af(x) - b), c'f(x)."""
    X, batch = _single(x, lp)
    return batch_hybrid_grad(X, encoder, decoder, batch, cfg, with_grads=False).breakdown


def hybrid_grad(x, encoder: Mlp, decoder: Mlp, lp: LinearProgram, cfg: HybridLossConfig):
    """Return (encoder_grads, decoder_grads, breakdown) for one sample."""
    X, batch = _single(x, lp)
    res = batch_hybrid_grad(X, encoder, decoder, batch, cfg)
    return res.encoder_grads, res.decoder_grads, res.breakdown


def gap_bound(lp: LinearProgram, z_hat, cfg: HybridLossConfig) -> float:
    """Diagnostic (lam / mu) * phi(A z_hat - b).

    This is only a reported quantity; it is not a valid bound on the true
    optimality gap in general (a feasible, suboptimal z_hat gives 0).
    """
    if cfg.mu <= 0:
        raise ContractError("gap_bound requires mu > 0")
    z = np.asarray(z_hat, dtype=np.float64)
    return cfg.lam / cfg.mu * phi(lp.A @ z - lp.b)


def gap_report(lp: LinearProgram, z_hat, cfg: HybridLossConfig) -> tuple[float, float]:
    """(bound, true_gap) where true_gap = c'z* - c'z_hat from the simplex solver."""
    sol = solve_simplex(lp)
    if not sol.optimal:
        raise ContractError(f"LP not solvable: {sol.status.value}")
    return gap_bound(lp, z_hat, cfg), sol.objective - lp.objective(z_hat)
