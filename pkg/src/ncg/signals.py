"""Synthetic noise-segmentation benchmarks and CSV ingestion.

Every noise source has zero mean and unit variance. A benchmark signal
mixes two sources under a slow envelope::

    x_t = psi(t) a_t + (1 - psi(t)) b_t,   psi(t) = (1 + tanh(sin(2 pi t / tau))) / 2

and keeps ``psi`` as ground truth.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

KINDS = ("ar1", "gaussian", "binary", "ternary_balanced", "ternary_unbalanced")

LEVELS = {
    "binary": np.array([-1.0, 1.0]),
    "ternary_balanced": np.array([-math.sqrt(1.5), 0.0, math.sqrt(1.5)]),
    "ternary_unbalanced": np.array([-(1 + math.sqrt(3)) / 2, (math.sqrt(3) - 1) / 2, 1.0]),
}

DEFAULT_TAU = 2000
DEFAULT_N = 500_000


@dataclass(frozen=True)
class NoiseSpec:
    """A zero-mean, unit-variance noise source.

    For ``kind="ar1"`` exactly one of ``theta`` (radians) or ``cos_theta``
    must be given.
    """

    kind: str
    theta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "ar1":
            if self.theta is None or not (0 < self.theta <= math.pi / 2):
                raise ValueError(f"ar1 needs 0 < theta <= pi/2, got {self.theta}")

    @classmethod
    def ar1(cls, theta: float | None = None, cos_theta: float | None = None) -> NoiseSpec:
        if (theta is None) == (cos_theta is None):
            raise ValueError("give exactly one of theta or cos_theta")
        if cos_theta is not None:
            if not 0 <= cos_theta < 1:
                raise ValueError(f"cos_theta must be in [0, 1), got {cos_theta}")
            theta = math.acos(cos_theta)
        return cls("ar1", theta)

    @classmethod
    def from_dict(cls, d: dict) -> NoiseSpec:
        d = dict(d)
        kind = d.pop("kind")
        if kind == "ar1":
            return cls.ar1(theta=d.get("theta"), cos_theta=d.get("cos_theta"))
        if d:
            raise ValueError(f"noise kind {kind!r} takes no parameters, got {sorted(d)}")
        return cls(kind)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "ar1":
            d["theta"] = self.theta
        return d


@dataclass
class Signal:
    samples: np.ndarray
    truth: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("signal samples must be finite")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=np.float64)
            if self.truth.shape[-1] != self.samples.shape[-1]:
                raise ValueError("truth and samples differ in length")

    def __len__(self) -> int:
        return self.samples.shape[-1]


def gen_ar1(theta: float, n: int, rng: np.random.Generator) -> Signal:
    """Stationary AR(1): ``x_t = cos(theta) x_{t-1} + sin(theta) eta_t``.

    ``x_0`` is drawn from the stationary law N(0, 1).
    """
    if not (0 < theta <= math.pi / 2):
        raise ValueError(f"theta must be in (0, pi/2], got {theta}")
    if n < 1:
        raise ValueError("n must be >= 1")
    c, s = math.cos(theta), math.sin(theta)
    eta = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = eta[0]
    if n > 1:
        x[1:], _ = lfilter([s], [1.0, -c], eta[1:], zi=[c * x[0]])
    return Signal(x, meta={"noise": NoiseSpec("ar1", theta).to_dict()})


def gen_discrete(kind: str, n: int, rng: np.random.Generator) -> Signal:
    """IID uniform draws from the level set of ``kind``."""
    if kind not in LEVELS:
        raise ValueError(f"unknown discrete noise kind {kind!r}; expected one of {sorted(LEVELS)}")
    levels = LEVELS[kind]
    return Signal(levels[rng.integers(0, len(levels), size=n)], meta={"noise": {"kind": kind}})


def gen_noise(spec: NoiseSpec, n: int, rng: np.random.Generator) -> Signal:
    if spec.kind == "ar1":
        return gen_ar1(spec.theta, n, rng)
    if spec.kind == "gaussian":
        return Signal(rng.standard_normal(n), meta={"noise": {"kind": "gaussian"}})
    return gen_discrete(spec.kind, n, rng)


def envelope(t, tau: float = DEFAULT_TAU):
    """``(1 + tanh(sin(2 pi t / tau))) / 2``; works on scalars and arrays."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return 0.5 * (1.0 + np.tanh(np.sin(2.0 * np.pi * np.asarray(t, dtype=np.float64) / tau)))


def gen_mixture(spec_a: NoiseSpec, spec_b: NoiseSpec, tau: float = DEFAULT_TAU,
                n: int = DEFAULT_N, rng: np.random.Generator | None = None,
                psi: np.ndarray | None = None) -> Signal:
    """Envelope-weighted mix of two noise sources; ``truth`` is the envelope.

    ``psi`` overrides the envelope (used to pin degenerate cases in tests).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        raise ValueError("gen_mixture needs an explicit rng")
    a = gen_noise(spec_a, n, rng).samples
    b = gen_noise(spec_b, n, rng).samples
    w = envelope(np.arange(n), tau) if psi is None else np.broadcast_to(np.asarray(psi, float), (n,)).copy()
    meta = {"a": spec_a.to_dict(), "b": spec_b.to_dict(), "tau": tau, "n": n}
    return Signal(w * a + (1.0 - w) * b, truth=w, meta=meta)


# -- file I/O -----------------------------------------------------------------

def _parse_float(text: str, path, line: int, column) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"{path}: row {line}: column {column!r} is not numeric: {text!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"{path}: row {line}: column {column!r} is not finite: {text!r}")
    return v


def _looks_numeric(cells: list[str]) -> bool:
    try:
        [float(c) for c in cells]
        return True
    except ValueError:
        return False


def read_csv_columns(path) -> tuple[list[str] | None, np.ndarray]:
    """Read a numeric CSV (optional header) into ``array[channels, time]``."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = None
    first_line, first = rows[0]
    if not _looks_numeric(first):
        header = [c.strip() for c in first]
        rows = rows[1:]
    width = len(header) if header else len(first)
    names = header or [str(i) for i in range(width)]
    data = np.empty((width, len(rows)))
    for j, (line, r) in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {line}: expected {width} fields, got {len(r)}")
        for c in range(width):
            data[c, j] = _parse_float(r[c].strip(), path, line, names[c])
    return header, data


def ingest_csv(path, column: str | int | None = 0, multichannel: bool = False) -> Signal:
    """Load one column (by name or position) or, with ``multichannel``, all columns."""
    header, data = read_csv_columns(path)
    if multichannel:
        return Signal(data, meta={"source": str(path), "columns": header})
    if isinstance(column, str) and not column.lstrip("-").isdigit():
        if header is None or column not in header:
            raise ValueError(f"{path}: no column named {column!r} (header: {header})")
        idx = header.index(column)
    else:
        idx = int(column or 0)
        if not 0 <= idx < data.shape[0]:
            raise ValueError(f"{path}: column index {idx} out of range ({data.shape[0]} columns)")
    return Signal(data[idx], meta={"source": str(path), "column": column})


def _write_column(path: Path, name: str, values: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        fh.write(name + "\n")
        fh.writelines(f"{v!r}\n" for v in values.tolist())


def save_dataset(out_dir, train: Signal, test: Signal, meta: dict) -> dict[str, Path]:
    """Write ``train.csv``, ``test.csv``, ``truth.csv`` and ``meta.json``.

    ``truth.csv`` holds two columns, ``train`` and ``test``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.csv" for k in ("train", "test", "truth")}
    paths["meta"] = out / "meta.json"
    _write_column(paths["train"], "x", train.samples)
    _write_column(paths["test"], "x", test.samples)
    if train.truth is not None and test.truth is not None:
        with paths["truth"].open("w", newline="") as fh:
            fh.write("train,test\n")
            fh.writelines(f"{a!r},{b!r}\n" for a, b in zip(train.truth.tolist(), test.truth.tolist()))
    else:
        paths.pop("truth")
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


def load_dataset(data_dir) -> tuple[Signal, Signal]:
    """Inverse of :func:`save_dataset`."""
    d = Path(data_dir)
    for name in ("train.csv", "test.csv"):
        if not (d / name).exists():
            raise FileNotFoundError(f"missing data file {d / name}")
    train = ingest_csv(d / "train.csv", "x")
    test = ingest_csv(d / "test.csv", "x")
    if (d / "truth.csv").exists():
        _, truth = read_csv_columns(d / "truth.csv")
        train.truth, test.truth = truth[0], truth[1]
    if (d / "meta.json").exists():
        meta = json.loads((d / "meta.json").read_text())
        train.meta.update(meta)
        test.meta.update(meta)
    return train, test
