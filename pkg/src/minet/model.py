"""The multi-scale interactive module, the five-stage backbone, the
decoder with deep-supervision heads, and checkpoint serialization.

The MI module runs four dilated 3x3 depthwise convolutions (dilations
1/2/4/8), interleaves the four scale maps so same-index channels become
adjacent, fuses each 4-channel bundle with a grouped 1x1 convolution,
mixes channels with a final 1x1 convolution, and closes with a residual
add + ReLU. Ablation variants replace individual pieces (see MIVariant).
"""
from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from minet import tensor as T
from minet.nn import (BatchNorm2d, Conv2d, ConvBNReLU, ConvSpec, DSConv, Module,
                      ParamStore, conv2d, dropout)
from minet.tensor import ShapeError, Tensor


class MIVariant(enum.Enum):
    STANDARD = "standard"
    UNIFORM_DILATION = "uniform-dilation"   # all four branches at dilation 1
    SUM_FUSION = "sum-fusion"               # sum replaces regroup + grouped 1x1
    NO_CHANNEL_INTERACTION = "no-channel-interaction"  # final 1x1 is per-channel
    CONCAT_DSCONV = "concat-dsconv"         # four full DSConvs + concat + 1x1 reduce
    SUM_DSCONV = "sum-dsconv"               # four full DSConvs + elementwise sum

    @classmethod
    def from_string(cls, s):
        try:
            return cls(s.lower())
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown MI variant {s!r}; expected one of: {valid}") from None


MI_DILATIONS = (1, 2, 4, 8)


def regroup_channels(features) -> Tensor:
    """Interleave four equally shaped maps by channel index: output
    channels [4j .. 4j+3] are (F1 ch j, F2 ch j, F3 ch j, F4 ch j)."""
    features = list(features)
    if len(features) != 4:
        raise ShapeError(f"regroup_channels: expected 4 feature maps, got {len(features)}")
    ref = features[0].shape
    for f in features[1:]:
        if f.shape != ref:
            raise ShapeError(f"regroup_channels: shape mismatch {ref} vs {f.shape}")
    n, c, h, w = ref
    data = np.stack([f.data for f in features], axis=2).reshape(n, 4 * c, h, w)
    out = Tensor.from_op(data, features, None)
    if out.requires_grad:
        def bwd(g):
            gs = g.reshape(n, c, 4, h, w)
            for k, f in enumerate(features):
                if f.requires_grad:
                    f.accumulate_grad(np.ascontiguousarray(gs[:, :, k]))
        out._backward_fn = bwd
    return out


def inverse_regroup(x: Tensor):
    """Split a (n,4c,h,w) interleaved tensor back into its four sources."""
    n, c4, h, w = x.shape
    if c4 % 4:
        raise ShapeError(f"inverse_regroup: channel count {c4} not divisible by 4")
    c = c4 // 4
    parts = []
    for k in range(4):
        data = np.ascontiguousarray(x.data.reshape(n, c, 4, h, w)[:, :, k])
        parts.append(Tensor(data))
    return parts


class MIModule(Module):
    """One multi-scale interactive unit; preserves shape for every variant."""

    def __init__(self, c, variant: MIVariant, rng, dtype=np.float32):
        super().__init__()
        self.c = c
        self.variant = variant
        dilations = (1, 1, 1, 1) if variant is MIVariant.UNIFORM_DILATION else MI_DILATIONS
        self.dilations = dilations
        for i, d in enumerate(dilations):
            spec = ConvSpec(c, c, 3, dilation=d, padding=d, groups=c)
            self.add_child(f"dw{i}", Conv2d(spec, rng, dtype))
        if variant in (MIVariant.CONCAT_DSCONV, MIVariant.SUM_DSCONV):
            for i in range(4):
                self.add_child(f"pw{i}", Conv2d(ConvSpec(c, c, 1), rng, dtype))
            if variant is MIVariant.CONCAT_DSCONV:
                self.add_child("reduce", Conv2d(ConvSpec(4 * c, c, 1), rng, dtype))
            return
        if variant is not MIVariant.SUM_FUSION:
            self.add_child("group_pw", Conv2d(ConvSpec(4 * c, c, 1, groups=c), rng, dtype))
        if variant is MIVariant.NO_CHANNEL_INTERACTION:
            self.add_child("mix_pw", Conv2d(ConvSpec(c, c, 1, groups=c), rng, dtype))
        else:
            self.add_child("mix_pw", Conv2d(ConvSpec(c, c, 1), rng, dtype))

    def __call__(self, x: Tensor, train=False) -> Tensor:
        if x.shape[1] != self.c:
            raise ShapeError(f"MI module built for {self.c} channels, input has {x.shape[1]}")
        branches = [self._children[f"dw{i}"](x) for i in range(4)]
        v = self.variant
        if v in (MIVariant.CONCAT_DSCONV, MIVariant.SUM_DSCONV):
            branches = [self._children[f"pw{i}"](b) for i, b in enumerate(branches)]
            if v is MIVariant.CONCAT_DSCONV:
                fused = self._children["reduce"](T.concat_channels(branches))
            else:
                fused = branches[0] + branches[1] + branches[2] + branches[3]
        elif v is MIVariant.SUM_FUSION:
            fused = self._children["mix_pw"](
                branches[0] + branches[1] + branches[2] + branches[3])
        else:
            enhanced = self._children["group_pw"](regroup_channels(branches))
            fused = self._children["mix_pw"](enhanced)
        return (fused + x).relu()


@dataclass
class MINetConfig:
    input_channels: int = 1
    stage_widths: tuple = (16, 32, 64, 96, 128)
    mi_counts: tuple = (3, 4, 6, 3)    # stages 2..5
    variant: str = MIVariant.STANDARD.value
    input_resolution: int = 368
    train_resolution: int = 336

    def __post_init__(self):
        self.stage_widths = tuple(int(v) for v in self.stage_widths)
        self.mi_counts = tuple(int(v) for v in self.mi_counts)
        if len(self.stage_widths) != 5:
            raise ValueError("stage_widths must list five encoder widths")
        if len(self.mi_counts) != 4:
            raise ValueError("mi_counts must list counts for stages 2..5")
        if any(w < 1 for w in self.stage_widths) or any(m < 1 for m in self.mi_counts):
            raise ValueError("stage widths and MI counts must be positive")
        if any(a > b for a, b in zip(self.stage_widths, self.stage_widths[1:])):
            raise ValueError("stage widths must be non-decreasing")
        MIVariant.from_string(self.variant)

    def to_dict(self):
        return {
            "input_channels": self.input_channels,
            "stage_widths": list(self.stage_widths),
            "mi_counts": list(self.mi_counts),
            "variant": self.variant,
            "input_resolution": self.input_resolution,
            "train_resolution": self.train_resolution,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def decoder_out_widths(self):
        # block i reduces encoder width c_i to c_{i-1}; block 1 keeps c_1,
        # so the element-wise decoder sums are shape-legal
        w = self.stage_widths
        return (w[0], w[0], w[1], w[2], w[3])


class Backbone(Module):
    """Five encoder stages: a strided 3x3 conv entry, then four stages of
    one strided DSConv followed by a run of MI modules."""

    def __init__(self, cfg: MINetConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        w = cfg.stage_widths
        variant = MIVariant.from_string(cfg.variant)
        self.add_child("stage1", ConvBNReLU(
            ConvSpec(cfg.input_channels, w[0], 3, stride=2, padding=1), rng, dtype))
        for s in range(2, 6):
            entry = DSConv(w[s - 2], w[s - 1], rng, stride=2, dtype=dtype)
            self.add_child(f"stage{s}_entry", entry)
            for m in range(cfg.mi_counts[s - 2]):
                self.add_child(f"stage{s}_mi{m}", MIModule(w[s - 1], variant, rng, dtype))

    def __call__(self, x: Tensor, train=False):
        if x.shape[1] != self.cfg.input_channels:
            raise ShapeError(f"backbone expects {self.cfg.input_channels} input channels, "
                             f"got {x.shape[1]}")
        if x.shape[2] < 32 or x.shape[3] < 32:
            raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} too small for five "
                             "stride-2 stages (needs >= 32)")
        feats = []
        y = self._children["stage1"](x, train)
        feats.append(y)
        for s in range(2, 6):
            y = self._children[f"stage{s}_entry"](y, train)
            for m in range(self.cfg.mi_counts[s - 2]):
                y = self._children[f"stage{s}_mi{m}"](y, train)
            feats.append(y)
        return feats


class DecoderBlock(Module):
    """Two DSConvs: dilation 2 at constant width, then dilation 1 reducing
    to the next shallower encoder width."""

    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        super().__init__()
        self.add_child("ds1", DSConv(c_in, c_in, rng, dilation=2, dtype=dtype))
        self.add_child("ds2", DSConv(c_in, c_out, rng, dilation=1, dtype=dtype))

    def __call__(self, x, train=False):
        return self._children["ds2"](self._children["ds1"](x, train), train)


class OutputHead(Module):
    """dropout(0.1) -> 1x1 conv to one channel (with bias) -> sigmoid."""

    def __init__(self, c_in, rng, dtype=np.float32, rate=0.1):
        super().__init__()
        self.rate = rate
        self.add_child("conv", Conv2d(ConvSpec(c_in, 1, 1, bias=True), rng, dtype))

    def __call__(self, x, train=False, rng=None):
        y = dropout(x, self.rate, rng, train)
        return self._children["conv"](y).sigmoid()


class MINet(Module):
    def __init__(self, cfg: MINetConfig, seed=0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng(seed + 1)
        self.add_child("encoder", Backbone(cfg, rng, dtype))
        outs = cfg.decoder_out_widths
        for i in range(1, 6):
            self.add_child(f"decoder{i}",
                           DecoderBlock(cfg.stage_widths[i - 1], outs[i - 1], rng, dtype))
            self.add_child(f"head{i}", OutputHead(outs[i - 1], rng, dtype))
        self._store = None

    def param_store(self) -> ParamStore:
        if self._store is None:
            self._store = ParamStore()
            for name, p in self.named_params():
                self._store.register(name, p)
        return self._store

    def backbone_forward(self, x: Tensor, train=False):
        return self._children["encoder"](x, train)

    def forward(self, x: Tensor, train=False):
        """Full network: returns saliency maps S1..S5 in [0,1], each at the
        input's spatial resolution. S1 is the final prediction."""
        feats = self.backbone_forward(x, train)
        h_in, w_in = x.shape[2], x.shape[3]
        decoded = [None] * 5
        d = self._children["decoder5"](feats[4], train)
        decoded[4] = d
        for i in range(4, 0, -1):
            up = T.resize_bilinear(d, feats[i - 1].shape[2], feats[i - 1].shape[3])
            d = self._children[f"decoder{i}"](feats[i - 1] + up, train)
            decoded[i - 1] = d
        outs = []
        for i in range(1, 6):
            s = self._children[f"head{i}"](decoded[i - 1], train, self.dropout_rng)
            outs.append(T.resize_bilinear(s, h_in, w_in))
        return outs

    __call__ = forward


# -- checkpoint serialization -------------------------------------------------

CHECKPOINT_MAGIC = b"MNET"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _named_tensors(net: MINet):
    for name, p in net.named_params():
        yield name, p.data
    for name, b in net.named_buffers():
        yield name, b


def save_checkpoint(net: MINet, path):
    buf = io.BytesIO()
    entries = list(_named_tensors(net))
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
    for name, arr in entries:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    echo = json.dumps(net.cfg.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(echo)))
    buf.write(echo)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _read_exact(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return b


def load_checkpoint(path, expected_config: MINetConfig | None = None,
                    dtype=np.float32) -> MINet:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a MINet checkpoint (bad magic)")
        version, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version} != "
                                  f"supported {CHECKPOINT_VERSION}")
        table = {}
        order = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
            n_elem = int(np.prod(dims)) if rank else 1
            raw = _read_exact(f, 4 * n_elem, f"data of {name}")
            table[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
            order.append(name)
        (clen,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        cfg_dict = json.loads(_read_exact(f, clen, "config echo").decode("utf-8"))

    cfg = MINetConfig.from_dict(cfg_dict)
    if expected_config is not None and cfg.to_dict() != expected_config.to_dict():
        raise CheckpointError("checkpoint config does not match the requested config: "
                              f"{cfg.to_dict()} vs {expected_config.to_dict()}")
    net = MINet(cfg, seed=0, dtype=dtype)
    for name, p in net.named_params():
        if name not in table:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        if table[name].shape != p.data.shape:
            raise CheckpointError(f"parameter {name!r}: checkpoint shape "
                                  f"{table[name].shape} != model shape {p.data.shape}")
        p.data = table[name].astype(dtype)
    for name, b in net.named_buffers():
        if name not in table:
            raise CheckpointError(f"checkpoint is missing buffer {name!r}")
        b[...] = table[name]
    return net
