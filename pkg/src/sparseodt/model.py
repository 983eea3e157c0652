"""Two-branch magnitude/phase reconstruction network.

Tensor naming follows ``{branch}.group{g}.layer{l}.{block}.{param}``; e.g.
``mag.group0.layer1.rcab0.conv1.weight`` or ``phase.group2.layer0.ars.A_log``.
Top-level tensors are ``{mag,phase}.{encoder,upsample,head}.*``,
``fusion.group{g}.*``, ``roi.feature.*`` and ``yhead.conv{0,1}.*``.

Every residual branch ends in a zero-initialised projection, so a freshly
built block is the identity map.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Module, Parameter, Tensor, ops, trunc_normal
from .autodiff.nn import ModuleList
from .scan import MODES, scan_op

# SiLU(ROI_BIAS) == 1, so a fresh ROI mask starts as the unmasked scan
ROI_BIAS = 1.2784645427610738
SILU_MIN = -0.27846454276107380


@dataclass(frozen=True)
class ModelConfig:
    n_groups: int = 4
    layers: int = 6
    channels: int = 60
    delta: int = 8
    state: int = 16
    heads: int = 6
    ffn_expand: int = 2
    ca_reduction: int = 4
    scan_mode: str = "sequential"

    def __post_init__(self):
        if min(self.n_groups, self.layers, self.channels, self.delta, self.state, self.heads) < 1:
            raise ValueError("model sizes must be positive")
        if self.channels % self.heads:
            raise ValueError(f"channels={self.channels} not divisible by heads={self.heads}")
        if self.channels < self.ca_reduction:
            raise ValueError("ca_reduction larger than channel count")
        if self.scan_mode not in MODES:
            raise ValueError(f"scan_mode must be one of {MODES}")

    @property
    def inner(self) -> int:
        return 2 * self.channels

    @property
    def dt_rank(self) -> int:
        return max(1, math.ceil(self.channels / 16))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


FULL_MODEL = ModelConfig()
DESK_MODEL = ModelConfig(n_groups=2, layers=1, channels=16, state=8, heads=2)


# ---------------------------------------------------------------------------
# layers


class Conv2d(Module):
    def __init__(self, rng, cin: int, cout: int, kernel=(3, 3), zero: bool = False):
        kh, kw = kernel
        shape = (cout, cin, kh, kw)
        if zero:
            w = np.zeros(shape)
        elif kh == kw == 1:
            w = trunc_normal(rng, shape)
        else:
            bound = 1.0 / math.sqrt(cin * kh * kw)
            w = rng.uniform(-bound, bound, size=shape)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias)


class DepthwiseConv(Module):
    def __init__(self, rng, channels: int, kernel):
        kh, kw = kernel
        bound = 1.0 / math.sqrt(kh * kw)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(channels, kh, kw)))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return ops.depthwise_conv2d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int):
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias)


# ---------------------------------------------------------------------------
# magnitude branch


class RCAB(Module):
    """Residual block with squeeze-excite channel attention."""

    def __init__(self, rng, channels: int, reduction: int):
        mid = max(1, channels // reduction)
        self.conv1 = Conv2d(rng, channels, channels)
        self.conv2 = Conv2d(rng, channels, channels, zero=True)
        self.ca_down = Conv2d(rng, channels, mid, (1, 1))
        self.ca_up = Conv2d(rng, mid, channels, (1, 1))

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(ops.silu(self.conv1(x)))
        s = ops.sigmoid(self.ca_up(ops.silu(self.ca_down(ops.global_avg_pool(h)))))
        return x + h * s


class MagnitudeLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.rcab0 = RCAB(rng, cfg.channels, cfg.ca_reduction)
        self.rcab1 = RCAB(rng, cfg.channels, cfg.ca_reduction)

    def forward(self, x: Tensor) -> Tensor:
        return self.rcab1(self.rcab0(x))


class Fusion(Module):
    """Squeeze-expand exchange between the two branches."""

    def __init__(self, rng, channels: int):
        self.squeeze = Conv2d(rng, 2 * channels, channels, (1, 1))
        self.expand = Conv2d(rng, channels, 2 * channels, (1, 1), zero=True)

    def forward(self, m: Tensor, p: Tensor) -> tuple[Tensor, Tensor]:
        f = self.expand(ops.silu(self.squeeze(ops.concat([m, p], axis=1))))
        fm, fp = ops.split(f, 2, axis=1)
        return m + fm, p + fp


# ---------------------------------------------------------------------------
# phase branch


class ARSBlock(Module):
    """Selective state-space block scanning each A-line under an ROI mask."""

    def __init__(self, rng, cfg: ModelConfig):
        c, ci, n, r = cfg.channels, cfg.inner, cfg.state, cfg.dt_rank
        self.state = n
        self.dt_rank = r
        self.mode = cfg.scan_mode
        self.norm = LayerNorm(c)
        self.roi = Conv2d(rng, c, ci, (1, 1))
        self.roi.bias.data[:] = ROI_BIAS
        self.in_proj = Conv2d(rng, c, 2 * ci, (1, 1))
        self.conv = DepthwiseConv(rng, ci, (3, 1))
        self.x_proj = Conv2d(rng, ci, r + 2 * n, (1, 1))
        self.dt_proj = Conv2d(rng, r, ci, (1, 1))
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=ci))
        self.dt_proj.bias.data[:] = dt + np.log(-np.expm1(-dt))  # softplus^-1
        self.A_log = Parameter(np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (ci, 1))))
        self.D = Parameter(np.ones(ci))
        self.out_proj = Conv2d(rng, ci, c, (1, 1), zero=True)

    def roi_mask(self, feature: Tensor) -> Tensor:
        return ops.silu(self.roi(feature))

    def forward(self, x: Tensor, feature: Tensor) -> Tensor:
        R = self.roi_mask(feature)
        main, gate = ops.split(self.in_proj(self.norm(x)), 2, axis=1)
        main = ops.silu(self.conv(main))
        proj = self.x_proj(main)
        r, n = self.dt_rank, self.state
        delta = ops.softplus(self.dt_proj(proj[:, :r]))
        Bt, Ct = proj[:, r : r + n], proj[:, r + n :]
        # [B, ch, depth, width] -> [B, width, depth, ch]: scan runs along depth
        to_scan = lambda t: ops.transpose(t, (0, 3, 2, 1))  # noqa: E731
        A = -ops.exp(self.A_log)
        y = scan_op(to_scan(main), to_scan(delta), A, to_scan(Bt), to_scan(Ct), self.D, to_scan(R), self.mode)
        y = ops.transpose(y, (0, 3, 2, 1)) * ops.silu(gate)
        return x + self.out_proj(y)


def b_self_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head attention along every B-line row independently.

    Inputs are ``[B, C, D, W]``; each (depth, head) pair attends over the ``W``
    positions of its row.
    """
    b, c, d, w = q.shape
    hd = c // heads

    def split_heads(t):
        return ops.transpose(ops.reshape(t, (b, heads, hd, d, w)), (0, 1, 3, 4, 2))

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
    scores = ops.matmul(qh, ops.transpose(kh, (0, 1, 2, 4, 3))) * (1.0 / math.sqrt(hd))
    attn = ops.softmax(scores, axis=-1)
    out = ops.matmul(attn, vh)  # [b, heads, d, w, hd]
    return ops.reshape(ops.transpose(out, (0, 1, 4, 2, 3)), (b, c, d, w))


class BPABlock(Module):
    """Phase-difference attention along the B-line."""

    def __init__(self, rng, cfg: ModelConfig):
        c = cfg.channels
        self.heads = cfg.heads
        self.norm = LayerNorm(c)
        self.qkv = Conv2d(rng, c, 3 * c, (1, 1))
        self.dconv_q = DepthwiseConv(rng, c, (1, 3))
        self.dconv_k = DepthwiseConv(rng, c, (1, 3))
        self.v_lin = Conv2d(rng, c, c, (1, 1))
        self.gate = Conv2d(rng, c, c, (1, 1))
        self.out_proj = Conv2d(rng, c, c, (1, 1), zero=True)

    def mix(self, xn: Tensor) -> Tensor:
        """The attention core before gating: ``B-SA(Q_a, K_a, V_b) + shift(V')``."""
        q, k, v = ops.split(self.qkv(xn), 3, axis=1)
        qa = self.dconv_q(ops.abs(ops.b_diff(q)))
        ka = self.dconv_k(ops.abs(ops.b_diff(k)))
        attended = b_self_attention(qa, ka, ops.b_diff(v), self.heads)
        return attended + ops.shift_b(self.v_lin(v))

    def forward(self, x: Tensor) -> Tensor:
        xn = self.norm(x)
        mixed = self.mix(xn) * ops.silu(self.gate(xn))
        return x + self.out_proj(mixed)


class FFN(Module):
    def __init__(self, rng, cfg: ModelConfig):
        c, e = cfg.channels, cfg.ffn_expand
        self.norm = LayerNorm(c)
        self.conv_depth = Conv2d(rng, c, e * c, (3, 1))
        self.conv_bline = Conv2d(rng, e * c, c, (1, 3), zero=True)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv_bline(ops.silu(self.conv_depth(self.norm(x))))


class PhaseLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.ars = ARSBlock(rng, cfg)
        self.bpa = BPABlock(rng, cfg)
        self.ffn = FFN(rng, cfg)

    def forward(self, x: Tensor, feature: Tensor) -> Tensor:
        return self.ffn(self.bpa(self.ars(x, feature)))


class MagnitudeModule(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.layers = ModuleList([MagnitudeLayer(rng, cfg) for _ in range(cfg.layers)], "layer")

    def _children(self):
        yield from self.layers._children()

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class PhaseModule(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.layers = ModuleList([PhaseLayer(rng, cfg) for _ in range(cfg.layers)], "layer")

    def _children(self):
        yield from self.layers._children()

    def forward(self, x: Tensor, feature: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x, feature)
        return x


class Branch(Module):
    """Encoder, per-group modules and the B-shuffle upsampler of one branch."""

    def __init__(self, rng, cfg: ModelConfig, module_cls):
        c = cfg.channels
        self.encoder = Conv2d(rng, 1, c)
        self.groups = ModuleList([module_cls(rng, cfg) for _ in range(cfg.n_groups)], "group")
        self.upsample = Conv2d(rng, c, c * cfg.delta)
        self.head = Conv2d(rng, c, 1)

    def _children(self):
        yield "encoder", self.encoder
        yield from self.groups._children()
        yield "upsample", self.upsample
        yield "head", self.head


class RoiFeature(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.feature = Conv2d(rng, 2, cfg.channels)

    def forward(self, m: Tensor, p: Tensor) -> Tensor:
        return self.feature(ops.concat([m, p], axis=1))


class YHead(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.conv0 = Conv2d(rng, 2 * cfg.channels, cfg.channels)
        self.conv1 = Conv2d(rng, cfg.channels, 1)

    def forward(self, fm: Tensor, fp: Tensor) -> Tensor:
        return self.conv1(ops.silu(self.conv0(ops.concat([fm, fp], axis=1))))


class ASBA(Module):
    """Sparse-to-dense ODT reconstruction network.

    ``forward(M_s, P_s)`` takes ``[B, 1, D, W']`` inputs and returns
    ``(Y_hat, M_hat, P_hat)``, each ``[B, 1, D, W' * delta]``.  ``Y_hat`` is
    unclamped; :meth:`predict` clamps it to ``[0, 1]``.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.roi = RoiFeature(rng, cfg)
        self.mag = Branch(rng, cfg, MagnitudeModule)
        self.phase = Branch(rng, cfg, PhaseModule)
        self.fusion = ModuleList([Fusion(rng, cfg.channels) for _ in range(cfg.n_groups)], "group")
        self.yhead = YHead(rng, cfg)

    def _children(self):
        yield "roi", self.roi
        yield "mag", self.mag
        yield "phase", self.phase
        yield "fusion", self.fusion
        yield "yhead", self.yhead

    def forward(self, M_s: Tensor, P_s: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if M_s.shape != P_s.shape or M_s.ndim != 4 or M_s.shape[1] != 1:
            raise ValueError(f"expected matching [B,1,D,W'] inputs, got {M_s.shape} and {P_s.shape}")
        feature = self.roi(M_s, P_s)
        m = self.mag.encoder(M_s)
        p = self.phase.encoder(P_s)
        for mag_mod, phase_mod, fusion in zip(self.mag.groups, self.phase.groups, self.fusion):
            m_in, p_in = m, p
            m = mag_mod(m)
            p = phase_mod(p, feature)
            m, p = fusion(m, p)
            m, p = m + m_in, p + p_in
        fm = ops.b_shuffle(self.mag.upsample(m), self.cfg.delta)
        fp = ops.b_shuffle(self.phase.upsample(p), self.cfg.delta)
        return self.yhead(fm, fp), self.mag.head(fm), self.phase.head(fp)

    def predict(self, M_s: np.ndarray, P_s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inference on arrays ``[B,1,D,W']`` (or ``[D,W']``); ``Y_hat`` clamped to [0, 1]."""
        from .autodiff import no_grad

        squeeze = M_s.ndim == 2
        if squeeze:
            M_s, P_s = M_s[None, None], P_s[None, None]
        dtype = self.parameters()[0].dtype
        with no_grad():
            y, m, p = self.forward(Tensor(M_s.astype(dtype)), Tensor(P_s.astype(dtype)))
        y, m, p = np.clip(y.data, 0.0, 1.0), m.data, p.data
        if squeeze:
            y, m, p = y[0, 0], m[0, 0], p[0, 0]
        return y, m, p
