"""Adam training loop for coarse-graining models."""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .autodiff import Tape, Tensor, no_tape
from .rng import stream
from .signals import Signal

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 200
    batch_size: int = 50_000
    chunk_length: int = 1000
    seed: int = 0
    precision: str = "f64"
    clip_norm: float | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.chunk_length < 1 or self.epochs < 0:
            raise ValueError("batch_size and chunk_length must be >= 1, epochs >= 0")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def chunks_per_batch(self) -> int:
        return max(1, self.batch_size // self.chunk_length)


def har_config(**kw) -> TrainConfig:
    base = dict(lr=5e-3, epochs=510, chunk_length=120, batch_size=120 * 32)
    base.update(kw)
    return TrainConfig(**base)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; ``state`` is the last good model."""

    def __init__(self, msg, state, log_):
        super().__init__(msg)
        self.state = state
        self.log = log_


# -- Adam ---------------------------------------------------------------------

def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], moments: dict,
              t: int, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place.

    ``moments`` holds ``{"m": {...}, "v": {...}}``; ``t`` is the 1-based step.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {k!r}")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k!r}")
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for k, g in grads.items():
        m = moments["m"].setdefault(k, np.zeros_like(params[k]))
        v = moments["v"].setdefault(k, np.zeros_like(params[k]))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        params[k] -= (cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)).astype(params[k].dtype)


# -- run log ------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_q: float
    test_q: float | None
    seconds: float


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    checkpoint: str | None = None

    def __len__(self):
        return len(self.records)

    @property
    def final_train_q(self):
        return self.records[-1].train_q if self.records else None

    @property
    def final_test_q(self):
        return self.records[-1].test_q if self.records else None

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_Q", "test_Q", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_q), "" if r.test_q is None else repr(r.test_q),
                            f"{r.seconds:.3f}"])

    def summary(self, include_time: bool = True) -> dict:
        d = {"epochs": len(self.records), "final_train_Q": self.final_train_q,
             "final_test_Q": self.final_test_q, "config": self.config, "checkpoint": self.checkpoint}
        if include_time:
            d["wall_seconds"] = float(sum(r.seconds for r in self.records))
        return d

    def to_json(self, path, include_time: bool = True) -> None:
        Path(path).write_text(json.dumps(self.summary(include_time), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> RunLog:
        recs = []
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                recs.append(EpochRecord(int(row["epoch"]), float(row["train_Q"]),
                                        float(row["test_Q"]) if row["test_Q"] else None, float(row["seconds"])))
        return cls(recs)


# -- data ---------------------------------------------------------------------

def make_chunks(samples: np.ndarray, chunk_length: int) -> np.ndarray:
    """Split ``samples[time]`` or ``samples[channels, time]`` into ``[n, channels, chunk_length]``."""
    x = np.asarray(samples)
    if x.ndim == 1:
        x = x[None]
    n = x.shape[1] // chunk_length
    if n == 0:
        raise ValueError(f"signal of length {x.shape[1]} is shorter than one chunk ({chunk_length})")
    return np.ascontiguousarray(x[:, :n * chunk_length].reshape(x.shape[0], n, chunk_length).transpose(1, 0, 2))


def evaluate_q(state: M.ModelState, chunks: np.ndarray, chunks_per_batch: int, mode: str = "infer") -> float:
    """Mean per-batch Q over ``chunks`` (no parameter or running-stat updates)."""
    qs = []
    with no_tape():
        bn_saved = copy.deepcopy(state.bn)
        for i in range(0, len(chunks), chunks_per_batch):
            _, _, q = M.ncg_forward(state, chunks[i:i + chunks_per_batch], mode)
            qs.append(float(q.data))
        state.bn = bn_saved
    return float(np.mean(qs))


def _grad_norm(grads) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def train(state: M.ModelState, data: Signal, cfg: TrainConfig, test: Signal | None = None,
          checkpoint: str | Path | None = None, checkpoint_every: int | None = None,
          callback=None) -> RunLog:
    """Train ``state`` in place on contiguous, shuffled, non-overlapping chunks.

    Each epoch logs the mean train-batch Q and, when ``test`` is given,
    the held-out Q in inference mode. Resumes from ``state.epoch`` and
    ``state.optimizer`` if present.
    """
    if state.dtype != cfg.dtype:
        state.cast(cfg.dtype)
    spec = state.spec
    if cfg.chunk_length < spec.min_window:
        raise ValueError(f"chunk_length {cfg.chunk_length} < minimum window {spec.min_window} for this model")
    chunks = make_chunks(data.samples, cfg.chunk_length).astype(cfg.dtype)
    test_chunks = make_chunks(test.samples, cfg.chunk_length).astype(cfg.dtype) if test is not None else None
    cpb = cfg.chunks_per_batch

    if state.optimizer is None:
        state.optimizer = {"t": 0, "m": {}, "v": {}}
    run = RunLog(config=asdict(cfg))
    last_good = copy.deepcopy(state)
    start = state.epoch
    for epoch in range(start, start + cfg.epochs):
        t0 = time.perf_counter()
        order = stream(cfg.seed, "shuffle", epoch).permutation(len(chunks))
        drop_rng = stream(cfg.seed, "dropout", epoch)
        qs = []
        for b in range(0, len(order), cpb):
            batch = chunks[order[b:b + cpb]]
            try:
                with Tape() as tape:
                    _, _, q = M.ncg_forward(state, batch, "train", drop_rng)
            except FloatingPointError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", last_good, run) from exc
            qv = float(q.data)
            if not math.isfinite(qv):
                raise DivergenceError(f"non-finite Q at epoch {epoch}", last_good, run)
            tape.backward(q)
            grads = {k: p.grad for k, p in state.params.items() if p.grad is not None}
            if cfg.clip_norm is not None:
                norm = _grad_norm(grads)
                if norm > cfg.clip_norm:
                    grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
            state.optimizer["t"] += 1
            try:
                adam_step({k: p.data for k, p in state.params.items()}, grads, state.optimizer,
                          state.optimizer["t"], cfg)
            except FloatingPointError as exc:
                raise DivergenceError(str(exc), last_good, run) from exc
            for p in state.params.values():
                p.grad = None
            qs.append(qv)
        try:
            test_q = evaluate_q(state, test_chunks, cpb) if test_chunks is not None else None
        except FloatingPointError as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}", last_good, run) from exc
        if test_q is not None and not math.isfinite(test_q):
            raise DivergenceError(f"non-finite held-out Q at epoch {epoch}", last_good, run)
        state.epoch = epoch + 1
        rec = EpochRecord(epoch, float(np.mean(qs)), test_q, time.perf_counter() - t0)
        run.records.append(rec)
        log.info("epoch %d train_Q=%.5f test_Q=%s", epoch, rec.train_q, rec.test_q)
        last_good = copy.deepcopy(state)
        if checkpoint is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            M.save(state, checkpoint)
        if callback is not None:
            callback(state, rec)
    if checkpoint is not None:
        M.save(state, checkpoint)
        run.checkpoint = str(checkpoint)
    return run


def uniform_state(spec: M.ModelSpec) -> M.ModelState:
    """A model whose final layers are all-zero, so every output is uniform."""
    st = M.build(spec, np.random.default_rng(0))
    for prefix, stack in (("T", spec.transformer), ("P", spec.predictor)):
        last = f"{prefix}.{len(stack) - 1}"
        for suffix in ("kernel", "bias", "gamma", "beta"):
            k = f"{last}.{suffix}"
            if k in st.params:
                st.params[k] = Tensor(np.zeros_like(st.params[k].data), requires_grad=True)
    return st
