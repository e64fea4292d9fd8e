"""Multi-head networks partitioned by feature-map scale.

A network is a stem followed by stages. Every stage runs at one spatial
resolution (a downsampling stage halves it with 2x2 average pooling first),
so each stage is one *part*. Decision heads (optional batchnorm, optional
ReLU, global average pooling, linear, softmax) attach to the last ``m``
parts. Head outputs are ordered by joint-decision index: index 0 is always
the deepest head, i.e. the network's original classifier.
"""

from __future__ import annotations

import math
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

BLOCK_KINDS = ("plain", "residual")
HEAD_ORDERS = ("deep-first", "shallow-first")


@dataclass(frozen=True)
class StageSpec:
    channels: int
    blocks: int = 1
    kind: str = "residual"
    downsample: bool = False


@dataclass(frozen=True)
class HeadOptions:
    use_batchnorm: bool = True
    use_activation: bool = True


@dataclass(frozen=True)
class ArchSpec:
    name: str
    stages: tuple
    num_classes: int = 3
    in_channels: int = 3
    head_options: HeadOptions = field(default_factory=HeadOptions)

    def __post_init__(self):
        if not self.stages:
            raise ConfigurationError("architecture needs at least one stage")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        for st in self.stages:
            if st.channels < 1 or st.blocks < 1:
                raise ConfigurationError(f"bad stage {st}")
            if st.kind not in BLOCK_KINDS:
                raise ConfigurationError(f"unknown block kind {st.kind!r}")

    @property
    def num_parts(self) -> int:
        return len(self.stages)

    @property
    def stem_channels(self) -> int:
        return self.stages[0].channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            name=d["name"],
            stages=tuple(StageSpec(**s) for s in d["stages"]),
            num_classes=d["num_classes"],
            in_channels=d["in_channels"],
            head_options=HeadOptions(**d["head_options"]),
        )


def vgg_tiny(widths=(16, 32, 64), num_classes=3, head_options=HeadOptions()) -> ArchSpec:
    stages = tuple(
        StageSpec(c, blocks=2, kind="plain", downsample=i > 0) for i, c in enumerate(widths)
    )
    return ArchSpec("vgg-tiny", stages, num_classes, head_options=head_options)


def res_tiny(widths=(16, 32, 64), num_classes=3, head_options=HeadOptions()) -> ArchSpec:
    stages = tuple(
        StageSpec(c, blocks=1, kind="residual", downsample=i > 0) for i, c in enumerate(widths)
    )
    return ArchSpec("res-tiny", stages, num_classes, head_options=head_options)


def resnet18_like(num_classes=10) -> ArchSpec:
    """CIFAR-style ResNet-18 layout; used only for parameter accounting."""
    stages = tuple(
        StageSpec(c, blocks=2, kind="residual", downsample=i > 0)
        for i, c in enumerate((64, 128, 256, 512))
    )
    return ArchSpec("resnet18-like", stages, num_classes)


ARCHITECTURES = {"vgg-tiny": vgg_tiny, "res-tiny": res_tiny}


def make_arch(name: str, num_classes: int = 3, head_options=HeadOptions()) -> ArchSpec:
    try:
        factory = ARCHITECTURES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown arch {name!r}; choose from {sorted(ARCHITECTURES)}"
        ) from None
    return factory(num_classes=num_classes, head_options=head_options)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def scale_channels(spec: ArchSpec, factor: float) -> ArchSpec:
    """Multiply every stage width by ``factor`` (round half up, floor at 1)."""
    if not 0 < factor <= 1:
        raise ConfigurationError(f"scaling factor must be in (0, 1], got {factor}")
    stages = tuple(replace(st, channels=max(1, round_half_up(st.channels * factor))) for st in spec.stages)
    return replace(spec, stages=stages)


# ---------------------------------------------------------------------------
# parameter layout


def _conv_bn(prefix, cin, cout, ksize):
    yield f"{prefix}.conv", (cout, cin, ksize, ksize)
    yield f"{prefix}.bn.gamma", (cout,)
    yield f"{prefix}.bn.beta", (cout,)


def _head_parts(spec: ArchSpec, m: int) -> list:
    """Part indices (0 = shallowest) carrying a head, in joint-decision order."""
    if not 1 <= m <= spec.num_parts:
        raise ConfigurationError(f"m={m} but the architecture has {spec.num_parts} parts")
    deepest = spec.num_parts - 1
    return [deepest - i for i in range(m)]


def parameter_shapes(spec: ArchSpec, m: int) -> "OrderedDict[str, tuple]":
    shapes: OrderedDict[str, tuple] = OrderedDict()
    shapes.update(_conv_bn("stem", spec.in_channels, spec.stem_channels, 3))
    cin = spec.stem_channels
    for si, st in enumerate(spec.stages):
        for bi in range(st.blocks):
            p = f"stage{si}.block{bi}"
            if st.kind == "plain":
                shapes.update(_conv_bn(f"{p}.a", cin, st.channels, 3))
            else:
                shapes.update(_conv_bn(f"{p}.a", cin, st.channels, 3))
                shapes.update(_conv_bn(f"{p}.b", st.channels, st.channels, 3))
                if cin != st.channels:
                    shapes.update(_conv_bn(f"{p}.short", cin, st.channels, 1))
            cin = st.channels
    for part in sorted(_head_parts(spec, m)):
        c = spec.stages[part].channels
        if spec.head_options.use_batchnorm:
            shapes[f"head{part}.bn.gamma"] = (c,)
            shapes[f"head{part}.bn.beta"] = (c,)
        shapes[f"head{part}.fc.weight"] = (spec.num_classes, c)
        shapes[f"head{part}.fc.bias"] = (spec.num_classes,)
    return shapes


def count_parameters(spec: ArchSpec, m: int = 1) -> int:
    return int(np.sum([math.prod(s) for s in parameter_shapes(spec, m).values()]))


def _init_param(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".beta", ".bias")):
        return np.zeros(shape)
    fan_in = math.prod(shape[1:])
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


# ---------------------------------------------------------------------------


class MultiHeadNetwork:
    """Parameters, batchnorm buffers, and the forward pass for one network."""

    def __init__(self, spec: ArchSpec, m: int, head_order: str = "deep-first"):
        if head_order not in HEAD_ORDERS:
            raise ConfigurationError(f"head_order must be one of {HEAD_ORDERS}")
        self.spec = spec
        self.m = m
        self.head_order = head_order
        self.head_parts = _head_parts(spec, m)
        if head_order == "shallow-first" and m > 1:
            # index 0 stays the original classifier; auxiliaries run shallow -> deep
            self.head_parts = [self.head_parts[0]] + sorted(self.head_parts[1:])
        self.params: OrderedDict[str, Tensor] = OrderedDict(
            (name, Tensor(np.zeros(shape), requires_grad=True, name=name))
            for name, shape in parameter_shapes(spec, m).items()
        )
        self.buffers: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, t in self.params.items():
            if name.endswith(".gamma"):
                base = name[: -len(".gamma")]
                self.buffers[f"{base}.running_mean"] = np.zeros(t.shape)
                self.buffers[f"{base}.running_var"] = np.ones(t.shape)

    def __repr__(self):
        return f"MultiHeadNetwork({self.spec.name}, m={self.m}, params={self.num_parameters()})"

    def num_parameters(self) -> int:
        return int(np.sum([t.size for t in self.params.values()]))

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((n, t.data) for n, t in self.params.items())
        out.update(self.buffers)
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        for name, t in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: stored {arr.shape}, expected {t.shape}")
            t.data = arr.copy()
        for name, buf in self.buffers.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != buf.shape:
                raise DimensionError(f"{name}: stored {arr.shape}, expected {buf.shape}")
            self.buffers[name] = arr.copy()

    # -- forward -----------------------------------------------------------

    def _bn(self, prefix: str, x: Tensor, training: bool) -> Tensor:
        return T.batchnorm(
            x,
            self.params[f"{prefix}.gamma"],
            self.params[f"{prefix}.beta"],
            self.buffers[f"{prefix}.running_mean"],
            self.buffers[f"{prefix}.running_var"],
            training,
        )

    def _conv_bn(self, prefix: str, x: Tensor, training: bool) -> Tensor:
        w = self.params[f"{prefix}.conv"]
        pad = w.shape[2] // 2
        return self._bn(f"{prefix}.bn", T.conv2d(x, w, 1, pad), training)

    def _block(self, p: str, st: StageSpec, x: Tensor, training: bool) -> Tensor:
        if st.kind == "plain":
            return T.relu(self._conv_bn(f"{p}.a", x, training))
        y = T.relu(self._conv_bn(f"{p}.a", x, training))
        y = self._conv_bn(f"{p}.b", y, training)
        short = self._conv_bn(f"{p}.short", x, training) if f"{p}.short.conv" in self.params else x
        return T.relu(T.add(y, short))

    def _head(self, part: int, feat: Tensor, training: bool) -> Tensor:
        opts = self.spec.head_options
        h = feat
        if opts.use_batchnorm:
            h = self._bn(f"head{part}.bn", h, training)
        if opts.use_activation:
            h = T.relu(h)
        logits = T.linear(
            T.global_avg_pool(h),
            self.params[f"head{part}.fc.weight"],
            self.params[f"head{part}.fc.bias"],
        )
        return T.softmax(logits)

    def forward_all_heads(self, batch, training: bool = False) -> list:
        """Return the m head probability matrices, deepest head first."""
        x = batch if isinstance(batch, Tensor) else Tensor._wrap(np.asarray(batch, dtype=np.float64), False, "batch")
        if x.data.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(
                f"expected [N,{self.spec.in_channels},H,W] input, got {x.shape}"
            )
        wanted = set(self.head_parts)
        feats = {}
        h = T.relu(self._conv_bn("stem", x, training))
        for si, st in enumerate(self.spec.stages):
            if st.downsample:
                h = T.avg_pool2d(h, 2)
            for bi in range(st.blocks):
                h = self._block(f"stage{si}.block{bi}", st, h, training)
            if si in wanted:
                feats[si] = h
        return [self._head(part, feats[part], training) for part in self.head_parts]

    def predict_proba(self, images: np.ndarray, batch_size: int = 256) -> list:
        """Inference-mode head outputs as arrays, batched over ``images``."""
        chunks = [
            [o.data for o in self.forward_all_heads(images[i : i + batch_size], training=False)]
            for i in range(0, len(images), batch_size)
        ]
        if not chunks:
            return [np.zeros((0, self.spec.num_classes)) for _ in range(self.m)]
        return [np.concatenate([c[h] for c in chunks]) for h in range(self.m)]


def build_multihead(
    spec: ArchSpec, m: int, rng: np.random.Generator, head_order: str = "deep-first"
) -> MultiHeadNetwork:
    """Build and He-initialize a network with heads on its last ``m`` parts.

    Each parameter draws from its own stream keyed by name, so networks that
    differ only in ``m`` share identical initial values for common parameters.
    """
    net = MultiHeadNetwork(spec, m, head_order)
    base = int(rng.integers(0, 2**63))
    for name, t in net.params.items():
        sub = np.random.default_rng([base, zlib.crc32(name.encode())])
        t.data = _init_param(name, t.shape, sub)
    return net


def forward_all_heads(net: MultiHeadNetwork, batch, training: bool = False) -> list:
    return net.forward_all_heads(batch, training)
