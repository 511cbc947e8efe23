"""Transformer / predictor networks for neural coarse-graining.

Both networks are stacks of valid 1D convolutions. The transformer maps the
raw signal to per-timestep class distributions ``s``; the predictor maps a
neighbourhood of ``s`` to ``shat``, which is scored against ``s`` a fixed
number of raw timesteps ``delta`` later. The same transformer output
serves as predictor input and as target, so the target is trainable too.

Time alignment: every output index is anchored at the centre of its
receptive field, ``(rf - 1) // 2`` samples after its first input.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormStats, Tensor
from .loss import ClassDistributionSeries, ncg_loss

FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    width: int
    channels: int
    batchnorm: bool = False
    dropout: float = 0.0


@dataclass(frozen=True)
class ModelSpec:
    transformer: tuple[LayerSpec, ...]
    predictor: tuple[LayerSpec, ...]
    K: int
    delta: int
    in_channels: int = 1
    alpha: float = 0.05
    allow_overlap: bool = False
    stop_target_grad: bool = False

    def __post_init__(self):
        object.__setattr__(self, "transformer", tuple(_layer(l) for l in self.transformer))
        object.__setattr__(self, "predictor", tuple(_layer(l) for l in self.predictor))
        if self.K < 2:
            raise ValueError("K must be at least 2")
        for name, stack in (("transformer", self.transformer), ("predictor", self.predictor)):
            if not stack:
                raise ValueError(f"{name} needs at least one layer")
            if stack[-1].channels != self.K:
                raise ValueError(f"{name}: final layer must have K={self.K} channels, has {stack[-1].channels}")
            for l in stack:
                if l.width < 1 or l.channels < 1 or not 0 <= l.dropout < 1:
                    raise ValueError(f"{name}: invalid layer {l}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if not self.allow_overlap and self.delta <= self.min_delta - 1:
            raise ValueError(
                f"delta={self.delta} lets predictor input and target overlap in the raw signal; "
                f"need delta >= {self.min_delta} (or allow_overlap=True)")

    @property
    def transformer_rf(self) -> int:
        return receptive_field(l.width for l in self.transformer)

    @property
    def predictor_rf(self) -> int:
        return receptive_field(l.width for l in self.predictor)

    @property
    def transformer_center(self) -> int:
        return (self.transformer_rf - 1) // 2

    @property
    def predictor_center(self) -> int:
        return (self.predictor_rf - 1) // 2

    @property
    def min_delta(self) -> int:
        """Smallest ``delta`` keeping predictor input and target disjoint."""
        return self.predictor_rf - 1 - self.predictor_center + self.transformer_rf

    @property
    def min_window(self) -> int:
        """Shortest raw window that yields at least one scored prediction."""
        return self.transformer_rf + max(self.predictor_rf - 1, self.predictor_center + self.delta)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        return cls(**d)


def _layer(l) -> LayerSpec:
    if isinstance(l, LayerSpec):
        return l
    if isinstance(l, dict):
        return LayerSpec(**l)
    return LayerSpec(*l)


def receptive_field(widths) -> int:
    return sum(w - 1 for w in widths) + 1


def noise_default(hidden: int = 32, transformer_widths=(15, 7, 1), predictor_widths=(5, 1, 1),
                  K: int = 2, delta: int = 50) -> ModelSpec:
    """Noise-segmentation network: batch norm on the first two layers of each stack."""
    def stack(widths):
        n = len(widths)
        return tuple(LayerSpec(w, K if i == n - 1 else hidden, batchnorm=i < 2 and i < n - 1)
                     for i, w in enumerate(widths))
    return ModelSpec(stack(transformer_widths), stack(predictor_widths), K=K, delta=delta)


def har_ucinet(in_channels: int = 516) -> ModelSpec:
    """Activity-recognition network (batch norm everywhere, 30% dropout between layers)."""
    t = (LayerSpec(5, 100, True, 0.3), LayerSpec(3, 100, True, 0.3), LayerSpec(1, 20, True))
    p = (LayerSpec(5, 100, True, 0.3), LayerSpec(1, 100, True, 0.3), LayerSpec(1, 20, True))
    return ModelSpec(t, p, K=20, delta=20, in_channels=in_channels)


PRESETS = {"noise-default": noise_default, "har-ucinet": har_ucinet}


def preset(name: str, **overrides) -> ModelSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**overrides)


@dataclass
class ModelState:
    spec: ModelSpec
    params: dict[str, Tensor]
    bn: dict[str, BatchNormStats]
    epoch: int = 0
    optimizer: dict | None = None
    meta: dict = field(default_factory=dict)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def cast(self, dtype) -> ModelState:
        for k, p in self.params.items():
            self.params[k] = Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
        for st in self.bn.values():
            st.mean = st.mean.astype(dtype)
            st.var = st.var.astype(dtype)
        return self

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


def build(spec: ModelSpec, rng: np.random.Generator, dtype=np.float64) -> ModelState:
    """Initialise weights uniformly in ``+-sqrt(1/fan_in)``; zero biases."""
    params: dict[str, Tensor] = {}
    bn: dict[str, BatchNormStats] = {}
    for prefix, stack, cin in (("T", spec.transformer, spec.in_channels), ("P", spec.predictor, spec.K)):
        for i, l in enumerate(stack):
            fan_in = cin * l.width
            bound = np.sqrt(1.0 / fan_in)
            name = f"{prefix}.{i}"
            params[f"{name}.kernel"] = Tensor(rng.uniform(-bound, bound, (l.channels, cin, l.width)).astype(dtype),
                                              requires_grad=True)
            params[f"{name}.bias"] = Tensor(np.zeros(l.channels, dtype), requires_grad=True)
            if l.batchnorm:
                params[f"{name}.gamma"] = Tensor(np.ones(l.channels, dtype), requires_grad=True)
                params[f"{name}.beta"] = Tensor(np.zeros(l.channels, dtype), requires_grad=True)
                bn[name] = BatchNormStats.zeros(l.channels, dtype)
            cin = l.channels
    meta = {"transformer_rf": spec.transformer_rf, "predictor_rf": spec.predictor_rf,
            "transformer_center": spec.transformer_center, "predictor_center": spec.predictor_center}
    return ModelState(spec, params, bn, meta=meta)


def _run_stack(state: ModelState, prefix: str, stack, x: Tensor, mode: str, rng) -> Tensor:
    p = state.params
    h = x
    for i, l in enumerate(stack):
        name = f"{prefix}.{i}"
        h = ad.conv1d(h, p[f"{name}.kernel"], p[f"{name}.bias"])
        if l.batchnorm:
            h = ad.batch_norm(h, p[f"{name}.gamma"], p[f"{name}.beta"], mode, state.bn[name])
        if i == len(stack) - 1:
            h = ad.softmax(h, axis=1)
        else:
            h = ad.leaky_relu(h, state.spec.alpha)
            if l.dropout > 0:
                h = ad.dropout(h, l.dropout, mode, rng)
    return h


def _as_input(state: ModelState, x) -> Tensor:
    if isinstance(x, Tensor) and x.ndim == 3 and x.dtype == state.dtype:
        if x.shape[1] != state.spec.in_channels:
            raise ValueError(f"input must be [batch, {state.spec.in_channels}, time], got {x.shape}")
        return x
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim == 1:
        arr = arr[None, None, :]
    elif arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != state.spec.in_channels:
        raise ValueError(f"input must be [batch, {state.spec.in_channels}, time], got {arr.shape}")
    return Tensor(arr.astype(state.dtype, copy=False))


def transform(state: ModelState, x, mode: str = "infer", rng=None) -> ClassDistributionSeries:
    """Raw window ``x[batch, channels, time]`` (or 1-d) to class distributions."""
    x = _as_input(state, x)
    rf = state.spec.transformer_rf
    if x.shape[2] < rf:
        raise ValueError(f"window of length {x.shape[2]} is shorter than the transformer receptive field {rf}")
    s = _run_stack(state, "T", state.spec.transformer, x, mode, rng)
    return ClassDistributionSeries(s, time_offset=state.spec.transformer_center)


def predict(state: ModelState, s: ClassDistributionSeries, mode: str = "infer", rng=None) -> ClassDistributionSeries:
    """Predicted distributions; ``shat[t]`` targets ``s`` at raw time ``t + delta``."""
    rf = state.spec.predictor_rf
    if s.length < rf:
        raise ValueError(f"class series of length {s.length} is shorter than the predictor receptive field {rf}")
    shat = _run_stack(state, "P", state.spec.predictor, s.values, mode, rng)
    return ClassDistributionSeries(shat, time_offset=s.time_offset + state.spec.predictor_center)


def ncg_forward(state: ModelState, x, mode: str = "train", rng=None):
    """Transform, predict and score a raw window; returns ``(s, shat, Q)``."""
    s = transform(state, x, mode, rng)
    shat = predict(state, s, mode, rng)
    q = ncg_loss(s, shat, state.spec.delta, stop_target_grad=state.spec.stop_target_grad)
    return s, shat, q


def target_raw_index(spec: ModelSpec, k: int) -> tuple[int, int]:
    """Raw anchors ``(prediction, target)`` for prediction index ``k`` (pure bookkeeping)."""
    pred_anchor = k + spec.transformer_center + spec.predictor_center
    target_s_index = k + spec.predictor_center + spec.delta
    return pred_anchor, target_s_index + spec.transformer_center


# -- checkpoints --------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save(state: ModelState, path) -> Path:
    """Write a checkpoint as an ``.npz`` archive with fixed zip metadata.

    Layout: ``__header__`` (JSON: format version, spec, epoch, meta),
    ``param/<name>``, ``bn/<name>/{mean,var,steps}`` and, when present,
    ``opt/{t,m/<name>,v/<name>}``. Identical states give identical bytes.
    """
    path = Path(path)
    header = {"format_version": FORMAT_VERSION, "spec": state.spec.to_dict(),
              "epoch": state.epoch, "meta": state.meta}
    arrays: dict[str, np.ndarray] = {
        "__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for k, p in state.params.items():
        arrays[f"param/{k}"] = p.data
    for k, st in state.bn.items():
        arrays[f"bn/{k}/mean"] = st.mean
        arrays[f"bn/{k}/var"] = st.var
        arrays[f"bn/{k}/steps"] = np.array(st.steps, dtype=np.int64)
    if state.optimizer is not None:
        arrays["opt/t"] = np.array(state.optimizer["t"], dtype=np.int64)
        for which in ("m", "v"):
            for k, a in state.optimizer[which].items():
                arrays[f"opt/{which}/{k}"] = a
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for k in sorted(arrays):
            info = zipfile.ZipInfo(k + ".npy", date_time=_ZIP_DATE)
            info.external_attr = 0o644 << 16
            zf.writestr(info, _npy_bytes(arrays[k]))
    return path


def load(path) -> ModelState:
    with np.load(path, allow_pickle=False) as z:
        files = {k: z[k] for k in z.files}
    header = json.loads(files.pop("__header__").tobytes().decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format_version')}")
    spec = ModelSpec.from_dict(header["spec"])
    params, bn, opt = {}, {}, None
    for k, a in files.items():
        if k.startswith("param/"):
            params[k[6:]] = Tensor(a, requires_grad=True)
    for name in {k.split("/")[1] for k in files if k.startswith("bn/")}:
        bn[name] = BatchNormStats(files[f"bn/{name}/mean"], files[f"bn/{name}/var"],
                                  files[f"bn/{name}/steps"].item())
    if "opt/t" in files:
        opt = {"t": files["opt/t"].item(), "m": {}, "v": {}}
        for k, a in files.items():
            if k.startswith("opt/m/"):
                opt["m"][k[6:]] = a
            elif k.startswith("opt/v/"):
                opt["v"][k[6:]] = a
    # keep the parameter order of a freshly built model
    order = [k for k in build(spec, np.random.default_rng(0)).params]
    params = {k: params[k] for k in order}
    return ModelState(spec, params, bn, epoch=header["epoch"], optimizer=opt, meta=header.get("meta", {}))


def with_spec(state: ModelState, **changes) -> ModelState:
    return replace(state, spec=replace(state.spec, **changes))
