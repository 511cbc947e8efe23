"""Central finite-difference checks for every differentiable operation.

Each case builds a scalar function of a few random float64 arrays in
[-2, 2]; the tape gradient is compared with ``(f(x+h) - f(x-h)) / 2h``.
An element passes if its relative error is below ``rtol`` or, where the
analytic gradient is tiny (< 1e-6), its absolute error is below ``atol``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import loss as L
from . import model as M
from .autodiff import Tape, Tensor
from .rng import stream

H = 1e-5
RTOL = 1e-4
ATOL = 1e-7


@dataclass
class CheckResult:
    op: str
    instances: int
    max_rel_err: float
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.op:<22} n={self.instances:<4d} max_rel_err={self.max_rel_err:.3e}"


def element_errors(analytic: np.ndarray, numeric: np.ndarray, atol: float = ATOL):
    """Per-element relative error and pass mask under the absolute fallback."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
    small = np.abs(analytic) < 1e-6
    ok = np.where(small, diff < atol, rel < RTOL)
    return np.where(small, 0.0, rel), ok


def check_function(fn: Callable[[list[Tensor]], Tensor], arrays: list[np.ndarray], h: float = H,
                   mask: list[np.ndarray] | None = None) -> tuple[float, bool]:
    """Compare tape and finite-difference gradients of ``fn`` at ``arrays``.

    ``mask`` optionally marks the elements to check (e.g. away from kinks).
    """
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(leaves)
    tape.backward(out)
    worst, ok_all = 0.0, True
    for idx, (a, leaf) in enumerate(zip(arrays, leaves)):
        g = leaf.grad if leaf.grad is not None else np.zeros_like(a)
        num = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            if mask is not None and not mask[idx][i]:
                continue
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[idx][i] += h
            minus[idx][i] -= h
            with ad.no_tape():
                fp = float(fn([Tensor(x) for x in plus]).data)
                fm = float(fn([Tensor(x) for x in minus]).data)
            num[i] = (fp - fm) / (2 * h)
        rel, ok = element_errors(g, num)
        if mask is not None:
            rel, ok = rel[mask[idx]], ok[mask[idx]]
        if rel.size:
            worst = max(worst, float(rel.max()))
        ok_all &= bool(np.all(ok))
    return worst, ok_all


def _u(rng, *shape):
    return rng.uniform(-2.0, 2.0, shape)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ad.sum(ad.mul(out, w))


def _simplex(rng, B, K, T):
    z = rng.uniform(-2.0, 2.0, (B, K, T))
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# Each case: rng -> (fn, arrays, mask or None)

def _case_conv1d(rng):
    B, C, T, O, W = 2, 2, 7, 3, 3
    w = rng.standard_normal((B, O, T - W + 1))
    return (lambda t: _weighted(ad.conv1d(t[0], t[1], t[2]), w),
            [_u(rng, B, C, T), _u(rng, O, C, W), _u(rng, O)], None)


def _case_leaky_relu(rng):
    x = _u(rng, 3, 4)
    w = rng.standard_normal(x.shape)
    return lambda t: _weighted(ad.leaky_relu(t[0], 0.05), w), [x], [np.abs(x) > 1e-3]


def _case_batch_norm(rng):
    B, C, T = 2, 3, 4
    w = rng.standard_normal((B, C, T))
    return (lambda t: _weighted(ad.batch_norm(t[0], t[1], t[2], "train"), w),
            [_u(rng, B, C, T), _u(rng, C), _u(rng, C)], None)


def _case_batch_norm_infer(rng):
    B, C, T = 2, 3, 4
    stats = ad.BatchNormStats(rng.uniform(-1, 1, C), rng.uniform(0.5, 2, C), steps=1)
    w = rng.standard_normal((B, C, T))
    return (lambda t: _weighted(ad.batch_norm(t[0], t[1], t[2], "infer", stats), w),
            [_u(rng, B, C, T), _u(rng, C), _u(rng, C)], None)


def _case_dropout(rng):
    x = _u(rng, 3, 5)
    w = rng.standard_normal(x.shape)
    seed = int(rng.integers(1 << 31))
    return lambda t: _weighted(ad.dropout(t[0], 0.3, "train", np.random.default_rng(seed)), w), [x], None


def _case_softmax(rng):
    x = _u(rng, 2, 4, 3)
    w = rng.standard_normal(x.shape)
    return lambda t: _weighted(ad.softmax(t[0], axis=1), w), [x], None


def _case_log(rng):
    x = rng.uniform(0.1, 2.0, (3, 4))
    w = rng.standard_normal(x.shape)
    return lambda t: _weighted(ad.log(t[0], floor=1e-12), w), [x], None


def _case_reductions(rng):
    x = _u(rng, 2, 3, 4)
    w1 = rng.standard_normal((2, 4))
    w2 = rng.standard_normal((3,))
    return (lambda t: _weighted(ad.sum(t[0], axis=1), w1) + _weighted(ad.mean(t[0], axis=(0, 2)), w2),
            [x], None)


def _case_linear(rng):
    a, b = _u(rng, 3, 4), _u(rng, 4, 2)
    w = rng.standard_normal((2, 3))
    c = rng.standard_normal(6)
    return (lambda t: _weighted(ad.transpose(ad.matmul(t[0], t[1]), (1, 0)), w)
            + ad.sum(ad.reshape(ad.slice_time(t[0], 1, 3), (6,)) * c),
            [a, b], None)


def _case_logdet(rng):
    A = _u(rng, 3, 3)
    return lambda t: ad.logdet(ad.matmul(t[0], ad.transpose(t[0], (1, 0))) + 0.5 * np.eye(3)), [A], None


def _case_ncg_loss(rng):
    B, K, T, delta = 2, 3, 8, 3
    zs, zh = _u(rng, B, K, T), _u(rng, B, K, T - 2)

    def fn(t):
        s = L.ClassDistributionSeries(ad.softmax(t[0], axis=1), 0)
        shat = L.ClassDistributionSeries(ad.softmax(t[1], axis=1), 1)
        return L.ncg_loss(s, shat, delta)
    return fn, [zs, zh], None


def _case_ncg_loss_continuous(rng):
    y, e = _u(rng, 2, 2, 6), _u(rng, 2, 2, 6)
    return lambda t: L.ncg_loss_continuous(t[0], t[1]), [y, e], None


def _tiny_spec():
    return M.ModelSpec(
        transformer=(M.LayerSpec(3, 3, batchnorm=True), M.LayerSpec(1, 2)),
        predictor=(M.LayerSpec(3, 3, batchnorm=True), M.LayerSpec(1, 2)),
        K=2, delta=3, allow_overlap=True)


def _case_ncg_forward(rng):
    spec = _tiny_spec()
    state = M.build(spec, rng)
    names = list(state.params)
    x = _u(rng, 2, 1, 14)

    def fn(t):
        st = M.ModelState(spec, dict(zip(names, t[:-1])), {k: ad.BatchNormStats.zeros(3) for k in state.bn})
        return M.ncg_forward(st, t[-1], "train")[2]
    arrays = [state.params[k].data * 2.0 for k in names] + [x]
    return fn, arrays, None


CASES: dict[str, Callable] = {
    "conv1d": _case_conv1d,
    "leaky_relu": _case_leaky_relu,
    "batch_norm[train]": _case_batch_norm,
    "batch_norm[infer]": _case_batch_norm_infer,
    "dropout": _case_dropout,
    "softmax": _case_softmax,
    "log": _case_log,
    "sum/mean": _case_reductions,
    "matmul/reshape/slice": _case_linear,
    "logdet": _case_logdet,
    "ncg_loss": _case_ncg_loss,
    "ncg_loss_continuous": _case_ncg_loss_continuous,
    "ncg_forward": _case_ncg_forward,
}


def run(instances: int = 100, seed: int = 0, ops=None) -> list[CheckResult]:
    """Run ``instances`` random checks for each op (all ops by default)."""
    results = []
    for name in ops or CASES:
        rng = stream(seed, "gradcheck", name)
        worst, failures = 0.0, 0
        for _ in range(instances):
            fn, arrays, mask = CASES[name](rng)
            err, ok = check_function(fn, arrays, mask=mask)
            worst = max(worst, err)
            failures += not ok
        results.append(CheckResult(name, instances, worst, failures))
    return results


def report(results: list[CheckResult]) -> str:
    lines = [r.line() for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{'ALL PASS' if n_fail == 0 else f'{n_fail} FAILED'} ({len(results)} ops)")
    return "\n".join(lines)
