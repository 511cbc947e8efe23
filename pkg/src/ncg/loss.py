"""Coarse-graining objectives and the information quantities behind them.

All logarithms are natural (nats).

The discrete objective is

    Q = -H(<s>) + < CE(s_{t+delta}, shat_t) >

where ``<s>`` is the class distribution averaged over batch and time and
``CE(p, q) = -sum_k p_k ln q_k``. A transform that emits the uniform
distribution everywhere, with a uniform prediction, sits at Q = 0; the
best attainable value for K classes is ``-ln K``.

The continuous objective compares the Gaussian entropy of the
coarse-grained signal with that of the prediction residual,

    Q_reg = ln det cov(y) - ln det cov(eps)

and is maximized during training (i.e. the training loss is ``-Q_reg``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_FLOOR = 1e-12
RIDGE = 1e-6


@dataclass
class ClassDistributionSeries:
    """Per-timestep class distributions ``values[batch, K, time]``.

    ``time_offset`` is the raw-signal index (relative to the start of the
    input window) that output index 0 is anchored to.
    """

    values: Tensor
    time_offset: int = 0

    def __post_init__(self):
        if not isinstance(self.values, Tensor):
            self.values = Tensor(self.values)
        if self.values.ndim != 3:
            raise ValueError(f"class distributions need shape [batch, K, time], got {self.values.shape}")

    @property
    def K(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[2]

    def numpy(self) -> np.ndarray:
        return self.values.data

    def check(self, atol: float = 1e-9) -> None:
        v = self.values.data
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("class distributions must lie in [0, 1]")
        if not np.allclose(v.sum(axis=1), 1.0, atol=atol, rtol=0):
            raise ValueError("class distributions must sum to 1 over the class axis")


@dataclass
class ResidualSeries:
    """Prediction residuals ``values[batch, D, time]`` for the continuous loss."""

    values: Tensor

    def __post_init__(self):
        if not isinstance(self.values, Tensor):
            self.values = Tensor(self.values)
        if not np.all(np.isfinite(self.values.data)):
            raise ValueError("residuals must be finite")


# -- plain numeric quantities -------------------------------------------------

def _prob(p, name: str, check_sum: bool = True) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError(f"{name}: negative probability")
    if check_sum and abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name}: probabilities sum to {p.sum()}, not 1")
    return p


def entropy(p) -> float:
    """Shannon entropy ``-sum p ln p`` with ``0 ln 0 = 0``."""
    p = _prob(p, "entropy")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def cross_entropy(s, shat) -> float:
    """``-sum s ln shat``, with ``shat`` floored at 1e-12."""
    s = _prob(s, "cross_entropy")
    shat = _prob(shat, "cross_entropy")
    if s.shape != shat.shape:
        raise ValueError(f"cross_entropy: length mismatch {s.shape} vs {shat.shape}")
    nz = s > 0
    return float(-(s[nz] * np.log(np.maximum(shat[nz], PROB_FLOOR))).sum())


def kl(s, shat) -> float:
    """Kullback-Leibler divergence ``sum s ln(s / shat)``."""
    s = _prob(s, "kl")
    shat = _prob(shat, "kl")
    if s.shape != shat.shape:
        raise ValueError(f"kl: length mismatch {s.shape} vs {shat.shape}")
    nz = s > 0
    return float((s[nz] * (np.log(s[nz]) - np.log(np.maximum(shat[nz], PROB_FLOOR)))).sum())


# -- differentiable objectives ------------------------------------------------

def _as_series(x) -> ClassDistributionSeries:
    return x if isinstance(x, ClassDistributionSeries) else ClassDistributionSeries(x)


def aligned_pairs(s: ClassDistributionSeries, shat: ClassDistributionSeries, delta: int) -> tuple[int, int, int]:
    """Index ranges pairing ``shat`` with the target ``s`` ``delta`` raw steps later.

    Returns ``(target_start, pred_start, n)`` such that ``shat[pred_start + i]``
    predicts ``s[target_start + i]`` for ``i < n``.
    """
    shift = shat.time_offset + delta - s.time_offset
    pred_start = max(0, -shift)
    target_start = pred_start + shift
    n = min(shat.length - pred_start, s.length - target_start)
    if n <= 0:
        raise ValueError(
            f"no overlap between predictions and targets (len(s)={s.length}, "
            f"len(shat)={shat.length}, delta={delta})")
    return target_start, pred_start, n


def ncg_loss(s, shat, delta: int, stop_target_grad: bool = False) -> Tensor:
    """Discrete coarse-graining loss Q (a scalar :class:`Tensor`).

    ``shat`` at time t is scored against ``s`` at raw time ``t + delta``
    using the ``time_offset`` of both series. The entropy of the average
    class usage is taken over the full ``s`` of the batch.
    ``stop_target_grad`` blocks the gradient through the target ``s`` in
    the cross-entropy (ablation only).
    """
    s, shat = _as_series(s), _as_series(shat)
    if s.K != shat.K:
        raise ValueError(f"class count mismatch: s has K={s.K}, shat has K={shat.K}")
    if s.values.shape[0] != shat.values.shape[0]:
        raise ValueError("batch size mismatch between s and shat")
    t0, p0, n = aligned_pairs(s, shat, delta)

    avg = ad.mean(s.values, axis=(0, 2))
    neg_entropy = ad.sum(avg * ad.log(avg, floor=PROB_FLOOR))
    target = ad.slice_time(Tensor(s.values.data) if stop_target_grad else s.values, t0, t0 + n)
    pred = ad.slice_time(shat.values, p0, p0 + n)
    ce = ad.neg(ad.mean(ad.sum(target * ad.log(pred, floor=PROB_FLOOR), axis=1)))
    return neg_entropy + ce


def _covariance(z: Tensor, ridge: float) -> Tensor:
    # z[B, D, T] -> D x D sample covariance over batch and time
    B, D, T = z.shape
    flat = ad.reshape(ad.transpose(z, (1, 0, 2)), (D, B * T))
    centered = flat - ad.mean(flat, axis=1, keepdims=True)
    cov = ad.matmul(centered, ad.transpose(centered, (1, 0))) * (1.0 / (B * T - 1))
    return cov + ridge * np.eye(D, dtype=z.dtype)


def ncg_loss_continuous(y, eps, ridge: float = RIDGE) -> Tensor:
    """Continuous coarse-graining objective ``ln det cov(y) - ln det cov(eps)``."""
    y = y if isinstance(y, Tensor) else Tensor(y)
    e = eps.values if isinstance(eps, ResidualSeries) else (eps if isinstance(eps, Tensor) else Tensor(eps))
    if y.ndim != 3 or e.ndim != 3:
        raise ValueError("y and eps need shape [batch, D, time]")
    if y.shape[1] != e.shape[1]:
        raise ValueError(f"dimension mismatch: y has D={y.shape[1]}, eps has D={e.shape[1]}")
    D = y.shape[1]
    for name, z in (("y", y), ("eps", e)):
        if z.shape[0] * z.shape[2] <= D:
            raise ValueError(f"{name}: need more than D={D} samples for a covariance")
    cy, ce = _covariance(y, ridge), _covariance(e, ridge)
    if not (np.all(np.isfinite(cy.data)) and np.all(np.isfinite(ce.data))):
        raise FloatingPointError("non-finite covariance")
    return ad.logdet(cy) - ad.logdet(ce)
