"""Evaluation of learned coarse-grainings and exact information measures.

Exact quantities are computed by enumerating the joint distribution of a
small stationary Markov chain ``X`` and a deterministic coarse-graining
``Y = f(X)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .loss import ClassDistributionSeries


# -- correlation with ground truth -------------------------------------------

def pearson(a, b) -> float:
    """Sample Pearson correlation coefficient."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"pearson: length mismatch {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("pearson: need at least two samples")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if sa == 0 or sb == 0:
        raise ValueError("pearson: zero variance input")
    return float(np.clip((da * db).sum() / (sa * sb), -1.0, 1.0))


def class_series(model, samples) -> ClassDistributionSeries:
    """Run ``model`` (a ModelState or callable) on a whole signal in inference mode."""
    from . import model as M
    from .autodiff import no_tape

    if isinstance(model, M.ModelState):
        with no_tape():
            return M.transform(model, samples, "infer")
    out = model(samples)
    return out if isinstance(out, ClassDistributionSeries) else ClassDistributionSeries(out)


def class_correlations(s: ClassDistributionSeries, truth) -> np.ndarray:
    """Pearson r of each class probability with ``truth`` on aligned indices."""
    truth = np.asarray(truth, dtype=np.float64)
    v = s.numpy()[0]
    start = s.time_offset
    psi = truth[start:start + v.shape[1]]
    if psi.shape[0] != v.shape[1]:
        raise ValueError("truth is shorter than the aligned class series")
    out = np.zeros(v.shape[0])
    for k in range(v.shape[0]):
        out[k] = pearson(v[k], psi) if np.ptp(v[k]) > 0 else 0.0
    return out


def eval_envelope_correlation(model, signal, class_index: int | None = None) -> float:
    """Largest ``|r|`` between a class probability and the true envelope.

    ``class_index`` restricts the search to one class. Class labels are
    arbitrary, hence the absolute value.
    """
    if signal.truth is None:
        raise ValueError("signal has no ground-truth envelope")
    r = np.abs(class_correlations(class_series(model, signal.samples), signal.truth))
    return float(r[class_index] if class_index is not None else r.max())


# -- transition graphs ---------------------------------------------------------

@dataclass
class TransitionGraph:
    matrix: np.ndarray
    labels: list[str]
    threshold: float = 0.2
    counts: np.ndarray | None = None

    def edges(self) -> list[tuple[int, int, float]]:
        """Edges ``(src, dst, p)`` with ``p > threshold``."""
        K = self.matrix.shape[0]
        return [(i, j, float(self.matrix[i, j])) for i in range(K) for j in range(K)
                if self.matrix[i, j] > self.threshold]

    def to_json(self, path=None) -> str:
        d = {"labels": self.labels, "threshold": self.threshold,
             "matrix": self.matrix.tolist(),
             "edges": [{"from": i, "to": j, "p": p} for i, j, p in self.edges()]}
        if self.counts is not None:
            d["counts"] = self.counts.astype(int).tolist()
        text = json.dumps(d, indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dot(self, path=None) -> str:
        lines = ["digraph transitions {"]
        lines += [f'  {i} [label="{lab}"];' for i, lab in enumerate(self.labels)]
        lines += [f'  {i} -> {j} [label="{p:.3f}", weight={p:.6f}];' for i, j, p in self.edges()]
        lines.append("}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def argmax_classes(s) -> np.ndarray:
    if isinstance(s, ClassDistributionSeries):
        v = s.numpy()
        return v.argmax(axis=1).ravel() if v.shape[0] == 1 else v.argmax(axis=1)
    return np.asarray(s).argmax(axis=0)


def transition_graph(s, threshold: float = 0.2, K: int | None = None) -> TransitionGraph:
    """Empirical first-order transition matrix of the argmax class sequence.

    ``s`` is a :class:`ClassDistributionSeries` (batch rows are treated as
    separate sequences) or an integer class sequence. Rows of classes that
    never occur (as a source) are left at zero.
    """
    if isinstance(s, ClassDistributionSeries):
        K = s.K
        seqs = s.numpy().argmax(axis=1)
    else:
        seqs = np.atleast_2d(np.asarray(s, dtype=np.int64))
        K = K if K is not None else int(seqs.max()) + 1
    if seqs.shape[-1] < 2:
        raise ValueError("transition_graph needs a sequence of length >= 2")
    counts = np.zeros((K, K))
    for seq in seqs:
        np.add.at(counts, (seq[:-1], seq[1:]), 1)
    rows = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    return TransitionGraph(matrix, [str(k) for k in range(K)], threshold, counts)


# -- exact information measures -------------------------------------------------

def _H(p) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def stationary_distribution(P: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Stationary distribution by power iteration, falling back to an eigen-solve."""
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ P
        if np.abs(nxt - pi).max() < tol:
            return nxt / nxt.sum()
        pi = nxt
    w, v = np.linalg.eig(P.T)
    vec = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    vec = np.abs(vec)
    return vec / vec.sum()


@dataclass
class DiscreteProcess:
    """Stationary Markov chain ``X`` with kernel ``P`` and coarse-graining ``f``."""

    P: np.ndarray
    f: np.ndarray | None = None
    pi: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        n = self.P.shape[0]
        if self.P.shape != (n, n) or np.any(self.P < 0):
            raise ValueError("kernel must be a square non-negative matrix")
        if np.abs(self.P.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("kernel rows must sum to 1")
        self.f = np.arange(n) if self.f is None else np.asarray(self.f, dtype=np.int64)
        if self.f.shape != (n,) or self.f.min() < 0:
            raise ValueError("f must map each of the states to a class index")
        if self.pi is None:
            self.pi = stationary_distribution(self.P)
        if np.abs(self.pi @ self.P - self.pi).max() > 1e-10:
            raise ValueError("pi is not stationary for P")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.f.max()) + 1

    @classmethod
    def random(cls, n_states: int, n_classes: int, rng: np.random.Generator) -> DiscreteProcess:
        P = rng.dirichlet(np.ones(n_states), size=n_states)
        P /= P.sum(axis=1, keepdims=True)
        return cls(P, rng.integers(0, n_classes, size=n_states))


def predictive_information(proc: DiscreteProcess) -> float:
    """``H(X_{t+1}) - H(X_{t+1} | X_t)`` of the stationary chain."""
    joint = proc.pi[:, None] * proc.P           # p(x, x')
    return _H(joint.sum(axis=0)) - (_H(joint) - _H(proc.pi))


def _joint_x_y_ynext(proc: DiscreteProcess) -> np.ndarray:
    # p(x, y, y') with y = f(x), y' = f(x')
    nx, ny = proc.n_states, proc.n_classes
    J = np.zeros((nx, ny, ny))
    for x in range(nx):
        for x2 in range(nx):
            J[x, proc.f[x], proc.f[x2]] += proc.pi[x] * proc.P[x, x2]
    return J


def ntic(proc: DiscreteProcess) -> float:
    """``I(X_t : Y_{t+1}) - I(Y_{t+1} : X_t | Y_t)`` by full enumeration."""
    J = _joint_x_y_ynext(proc)
    p_x = J.sum(axis=(1, 2))
    p_y = J.sum(axis=(0, 2))
    p_yn = J.sum(axis=(0, 1))
    p_x_yn = J.sum(axis=1)
    p_x_y = J.sum(axis=2)
    p_y_yn = J.sum(axis=0)
    mi = _H(p_x) + _H(p_yn) - _H(p_x_yn)
    cmi = _H(p_y_yn) + _H(p_x_y) - _H(p_y) - _H(J)
    return mi - cmi


def coarse_predictive_information(proc: DiscreteProcess) -> float:
    """``H(Y_{t+1}) - H(Y_{t+1} | Y_t)`` from the coarse-grained pair law."""
    ny = proc.n_classes
    pair = np.zeros((ny, ny))
    for x in range(proc.n_states):
        for x2 in range(proc.n_states):
            pair[proc.f[x], proc.f[x2]] += proc.pi[x] * proc.P[x, x2]
    return _H(pair.sum(axis=0)) - (_H(pair) - _H(pair.sum(axis=1)))


def empirical_ntic(classes) -> float:
    """Plug-in ``H(Y') - H(Y' | Y)`` from unigram/bigram class counts (no bias correction)."""
    y = np.asarray(classes, dtype=np.int64).ravel()
    if y.size < 2:
        raise ValueError("empirical_ntic needs at least two symbols")
    K = int(y.max()) + 1
    pair = np.zeros((K, K))
    np.add.at(pair, (y[:-1], y[1:]), 1)
    pair /= pair.sum()
    return _H(pair.sum(axis=0)) - (_H(pair) - _H(pair.sum(axis=1)))
