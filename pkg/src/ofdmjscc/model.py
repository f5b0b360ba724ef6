"""Joint source-channel coding transceiver models.

A convolutional encoder maps an image straight to a complex subcarrier grid;
the decoder reconstructs the image from what the receiver observed. Three
receiver variants trade DSP structure against learned flexibility:

* ``direct``   — no OFDM at all: the encoder grid is sent as raw time-domain
                 samples (power-normalized, no pilots, no clipping) and the
                 decoder sees the raw channel output.
* ``implicit`` — full OFDM transmit chain; a small learned front-end sees the
                 raw received data grid together with the known and received
                 pilot grids, per subcarrier, and must learn its own channel
                 handling (no estimator or equalizer math in the graph).
* ``explicit`` — OFDM plus in-graph channel estimation and MMSE equalization,
                 each refined by a small residual subnet; the decoder sees
                 only the equalized grid.

Both subnets end in a zero-initialized normalization scale, so at
initialization the explicit path is exactly the plain estimate/equalize
pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import cplx
from .autodiff import Node
from .cplx import CplxNode
from .channel import apply_channel
from .nn import BatchNorm, Conv2d, Dense
from .ofdm import OfdmConfig, TxPacket, assemble_packet, disassemble_packet, \
    make_pilots, normalize_power
from .receiver import equalize_mmse, estimate_channel_mmse

VARIANTS = ("direct", "implicit", "explicit")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "explicit"
    image_h: int = 32
    image_w: int = 32
    image_c: int = 3
    width1: int = 32
    width2: int = 64
    subnet_hidden: int = 8
    head_hidden: int = 256
    front_hidden: int = 32
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.image_h % 4 or self.image_w % 4:
            raise ValueError("image_h and image_w must be multiples of 4 "
                             "(two stride-2 stages)")
        if self.image_c not in (1, 3):
            raise ValueError(f"image_c must be 1 or 3, got {self.image_c}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ofdm"] = asdict(self.ofdm)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["ofdm"] = OfdmConfig(**d["ofdm"])
        return ModelConfig(**d)


class _ResBlock:
    def __init__(self, name: str, width: int, rng):
        self.conv_a = Conv2d(f"{name}.conv_a", 3, 3, width, width, rng, bias=False)
        self.bn_a = BatchNorm(f"{name}.bn_a", width)
        self.conv_b = Conv2d(f"{name}.conv_b", 3, 3, width, width, rng, bias=False)
        self.bn_b = BatchNorm(f"{name}.bn_b", width)

    def __call__(self, x: Node, train: bool) -> Node:
        h = ad.relu(self.bn_a(self.conv_a(x), train))
        h = self.bn_b(self.conv_b(h), train)
        return ad.relu(ad.add(x, h))

    def layers(self):
        return [self.conv_a, self.bn_a, self.conv_b, self.bn_b]


class _Encoder:
    """Image (B, H, W, C) -> complex grid (B, n_s, l_fft)."""

    def __init__(self, cfg: ModelConfig, rng):
        w1, w2 = cfg.width1, cfg.width2
        hb, wb = cfg.image_h // 4, cfg.image_w // 4
        self.grid_shape = (cfg.ofdm.n_s, cfg.ofdm.l_fft)
        self.conv1 = Conv2d("enc.conv1", 3, 3, cfg.image_c, w1, rng, stride=2, bias=False)
        self.bn1 = BatchNorm("enc.bn1", w1)
        self.conv2 = Conv2d("enc.conv2", 3, 3, w1, w2, rng, stride=2, bias=False)
        self.bn2 = BatchNorm("enc.bn2", w2)
        self.res = _ResBlock("enc.res", w2, rng)
        self.head = Dense("enc.head", hb * wb * w2, 2 * cfg.ofdm.n_s * cfg.ofdm.l_fft, rng)

    def __call__(self, x: Node, train: bool) -> CplxNode:
        b = x.value.shape[0]
        h = ad.relu(self.bn1(self.conv1(x), train))
        h = ad.relu(self.bn2(self.conv2(h), train))
        h = self.res(h, train)
        h = self.head(ad.reshape(h, (b, -1)))
        n_s, l_fft = self.grid_shape
        m = n_s * l_fft
        re = ad.reshape(ad.slice_(h, (slice(None), slice(0, m))), (b, n_s, l_fft))
        im = ad.reshape(ad.slice_(h, (slice(None), slice(m, None))), (b, n_s, l_fft))
        return CplxNode(re, im)

    def layers(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2, *self.res.layers(), self.head]


class _DecoderTrunk:
    """Flat receiver features (B, F) -> image (B, H, W, C) in [0, 1].

    The hidden pre-head layer is what lets receivers that only see raw
    symbols (pilots + data, no closed-form stage) synthesize the
    multiplicative channel-inversion relationship before the spatial stack.
    """

    def __init__(self, cfg: ModelConfig, in_dim: int, rng):
        w1, w2 = cfg.width1, cfg.width2
        self.hb, self.wb = cfg.image_h // 4, cfg.image_w // 4
        self.w2 = w2
        self.pre = Dense("dec.pre", in_dim, cfg.head_hidden, rng)
        self.head = Dense("dec.head", cfg.head_hidden, self.hb * self.wb * w2, rng)
        self.bn_in = BatchNorm("dec.bn_in", w2)
        self.res = _ResBlock("dec.res", w2, rng)
        self.conv_up1 = Conv2d("dec.conv_up1", 3, 3, w2, w1, rng, bias=False)
        self.bn_up1 = BatchNorm("dec.bn_up1", w1)
        self.conv_up2 = Conv2d("dec.conv_up2", 3, 3, w1, w1, rng, bias=False)
        self.bn_up2 = BatchNorm("dec.bn_up2", w1)
        self.conv_out = Conv2d("dec.conv_out", 3, 3, w1, cfg.image_c, rng)

    def __call__(self, feat: Node, train: bool) -> Node:
        b = feat.value.shape[0]
        h = ad.relu(self.pre(feat))
        h = ad.reshape(self.head(h), (b, self.hb, self.wb, self.w2))
        h = ad.relu(self.bn_in(h, train))
        h = self.res(h, train)
        h = ad.relu(self.bn_up1(self.conv_up1(ad.upsample2x(h)), train))
        h = ad.relu(self.bn_up2(self.conv_up2(ad.upsample2x(h)), train))
        return ad.sigmoid(self.conv_out(h))

    def layers(self):
        return [self.pre, self.head, self.bn_in, *self.res.layers(), self.conv_up1,
                self.bn_up1, self.conv_up2, self.bn_up2, self.conv_out]


class _Subnet:
    """Conv -> BN -> ReLU -> Conv -> BN residual head; identity at init.

    Operates on (B, H, W, C_in) and returns (B, H, W, 2); 1-D inputs use
    H = 1 with a (1, 3) kernel.
    """

    def __init__(self, name: str, c_in: int, hidden: int, rng, one_d: bool):
        kh = 1 if one_d else 3
        self.conv1 = Conv2d(f"{name}.conv1", kh, 3, c_in, hidden, rng, bias=False)
        self.bn1 = BatchNorm(f"{name}.bn1", hidden)
        self.conv2 = Conv2d(f"{name}.conv2", kh, 3, hidden, 2, rng, bias=False)
        self.bn2 = BatchNorm(f"{name}.bn2", 2, gamma_init=0.0)

    def __call__(self, x: Node, train: bool) -> CplxNode:
        h = ad.relu(self.bn1(self.conv1(x), train))
        h = self.bn2(self.conv2(h), train)
        re = ad.slice_(h, (Ellipsis, slice(0, 1)))
        im = ad.slice_(h, (Ellipsis, slice(1, 2)))
        sq = x.value.shape[:-1]
        return CplxNode(ad.reshape(re, sq), ad.reshape(im, sq))

    def layers(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2]


class _ImplicitFront:
    """Learned per-subcarrier receiver for the implicit variant.

    Sees only raw observations — the equalizer input a hand-designed receiver
    would get (data rows, pilot observations, known pilot values per
    subcarrier) — and maps them to per-subcarrier symbol features with a
    small MLP applied as 1x1 convolutions. Sharing the weights across
    subcarriers means the inversion only has to be learned once, instead of
    independently for every flattened input position.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        o = cfg.ofdm
        self.n_s, self.n_p, self.l_fft = o.n_s, o.n_p, o.l_fft
        c_in = 2 * o.n_s + 4 * o.n_p
        m = cfg.front_hidden
        self.conv1 = Conv2d("front.conv1", 1, 1, c_in, m, rng, bias=False)
        self.bn1 = BatchNorm("front.bn1", m)
        self.conv2 = Conv2d("front.conv2", 1, 1, m, m, rng, bias=False)
        self.bn2 = BatchNorm("front.bn2", m)
        self.conv3 = Conv2d("front.conv3", 1, 1, m, 2 * o.n_s, rng)

    def __call__(self, pilot_rx: CplxNode, data_rx: CplxNode,
                 known: np.ndarray, train: bool) -> CplxNode:
        b, l = pilot_rx.shape[0], self.l_fft
        chans = []
        for grid in (data_rx, pilot_rx):
            for comp in (grid.re, grid.im):
                for r in range(comp.value.shape[1]):
                    row = ad.slice_(comp, (slice(None), r, slice(None)))
                    chans.append(ad.reshape(row, (b, 1, l, 1)))
        kn = np.concatenate([known.real, known.imag], axis=0).T  # (l_fft, 2 n_p)
        chans.append(ad.constant(np.ascontiguousarray(
            np.broadcast_to(kn[None, None], (b, 1, l, kn.shape[1])))))
        h = ad.concat(chans, axis=3)
        h = ad.relu(self.bn1(self.conv1(h), train))
        h = ad.relu(self.bn2(self.conv2(h), train))
        out = self.conv3(h)                                      # (B, 1, L, 2 n_s)
        rows = [ad.reshape(ad.slice_(out, (slice(None), 0, slice(None), j)),
                           (b, 1, l)) for j in range(2 * self.n_s)]
        return CplxNode(ad.concat(rows[:self.n_s], axis=1),
                        ad.concat(rows[self.n_s:], axis=1))

    def layers(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2, self.conv3]


def _flatten_cplx(z: CplxNode) -> list[Node]:
    b = z.shape[0]
    return [ad.reshape(z.re, (b, -1)), ad.reshape(z.im, (b, -1))]


def _stack_last(parts: list[Node]) -> Node:
    b = parts[0].value.shape
    return ad.concat([ad.reshape(p, p.value.shape + (1,)) for p in parts], axis=-1)


class JsccModel:
    """End-to-end transceiver: encoder, channel interface and decoder."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.pilots = make_pilots(cfg.ofdm.pilot_seed, cfg.ofdm.n_p, cfg.ofdm.l_fft)
        self.encoder = _Encoder(cfg, rng)
        n_feat = 2 * cfg.ofdm.n_s * cfg.ofdm.l_fft
        self.trunk = _DecoderTrunk(cfg, n_feat, rng)
        self.front = _ImplicitFront(cfg, rng) if cfg.variant == "implicit" else None
        if cfg.variant == "explicit":
            self.subnet_h = _Subnet("sub_h", 2 + 4 * cfg.ofdm.n_p, cfg.subnet_hidden,
                                    rng, one_d=True)
            self.subnet_eq = _Subnet("sub_eq", 4, cfg.subnet_hidden, rng, one_d=False)
        else:
            self.subnet_h = self.subnet_eq = None

    # -- parameter plumbing ------------------------------------------------

    def _layers(self):
        out = [*self.encoder.layers(), *self.trunk.layers()]
        if self.front is not None:
            out += self.front.layers()
        if self.subnet_h is not None:
            out += [*self.subnet_h.layers(), *self.subnet_eq.layers()]
        return out

    def params(self) -> list[tuple[str, Node]]:
        out = []
        for layer in self._layers():
            out.extend(layer.params())
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for layer in self._layers():
            if isinstance(layer, BatchNorm):
                out.extend(layer.buffers())
        return out

    def n_params(self, prefix: str = "") -> int:
        return sum(p.value.size for name, p in self.params() if name.startswith(prefix))

    def load_state(self, params: list[tuple[str, np.ndarray]],
                   buffers: list[tuple[str, np.ndarray]]) -> None:
        own = self.params()
        if [n for n, _ in own] != [n for n, _ in params]:
            raise ValueError("load_state: parameter names do not match this architecture")
        for (_, node), (_, arr) in zip(own, params):
            ad.assign(node, arr)
        bmap = dict(buffers)
        for layer in self._layers():
            if isinstance(layer, BatchNorm):
                layer.running_mean = np.array(bmap[f"{layer.name}.running_mean"])
                layer.running_var = np.array(bmap[f"{layer.name}.running_var"])

    # -- forward -----------------------------------------------------------

    def encode(self, x: Node, train: bool) -> CplxNode:
        return self.encoder(x, train)

    def explicit_front(self, pilot_rx: CplxNode, data_rx: CplxNode, sigma_sq: float,
                       train: bool, use_subnets: bool = True
                       ) -> tuple[CplxNode, CplxNode]:
        """Estimate + equalize with learned residual refinements.

        Returns ``(h_ref, y_ref)``; with ``use_subnets=False`` (or at
        initialization, where the subnet output is exactly zero) this is the
        plain DSP pipeline.
        """
        b = pilot_rx.shape[0]
        cfg = self.cfg.ofdm
        h_hat = estimate_channel_mmse(pilot_rx, self.pilots, sigma_sq)
        if use_subnets:
            known = cplx.tile(cplx.reshape(cplx.const(self.pilots),
                                           (1, cfg.n_p, cfg.l_fft)), 0, b)
            parts = [h_hat.re, h_hat.im]
            for grid in (known, pilot_rx):
                for i in range(cfg.n_p):
                    row = (slice(None), i, slice(None))
                    parts += [ad.slice_(grid.re, row), ad.slice_(grid.im, row)]
            feat = _stack_last(parts)                          # (B, l_fft, C)
            feat = ad.reshape(feat, (b, 1) + feat.value.shape[1:])
            delta = self.subnet_h(feat, train)                 # (B, 1, l_fft)
            delta = cplx.reshape(delta, (b, cfg.l_fft))
            h_ref = cplx.add(h_hat, delta)
        else:
            h_ref = h_hat
        y_eq = equalize_mmse(data_rx, h_ref, sigma_sq)
        if use_subnets:
            hexp = cplx.tile(cplx.reshape(h_ref, (b, 1, cfg.l_fft)), 1, cfg.n_s)
            feat = _stack_last([y_eq.re, y_eq.im, hexp.re, hexp.im])
            y_ref = cplx.add(y_eq, self.subnet_eq(feat, train))
        else:
            y_ref = y_eq
        return h_ref, y_ref

    def forward(self, x: np.ndarray, taps: np.ndarray, sigma_sq: float,
                clip_ratio: float = math.inf, train: bool = False,
                rng: np.random.Generator | None = None,
                noise: np.ndarray | None = None) -> tuple[Node, TxPacket]:
        """Run the full chain on a batch of images.

        ``taps`` is the per-image channel realization (B, n_taps); ``noise``
        optionally fixes the additive noise (complex, received-signal shape),
        otherwise it is drawn from ``rng``. Returns the reconstruction node
        and the transmitted packet (for power/PAPR reporting).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != (self.cfg.image_h, self.cfg.image_w,
                                          self.cfg.image_c):
            raise ValueError(f"forward: expected (B, {self.cfg.image_h}, "
                             f"{self.cfg.image_w}, {self.cfg.image_c}), got {x.shape}")
        grid = self.encode(ad.constant(x), train)
        b = x.shape[0]
        cfg = self.cfg.ofdm

        if self.cfg.variant == "direct":
            serial = cplx.reshape(grid, (b, cfg.n_s * cfg.l_fft))
            tx = normalize_power(serial)
            pkt = TxPacket(tx=tx, preclip=tx)
        else:
            pkt = assemble_packet(grid, self.pilots, cfg, clip_ratio)

        rx = apply_channel(pkt.tx, taps, 0.0)
        if sigma_sq > 0.0:
            if noise is None:
                if rng is None:
                    raise ValueError("forward: rng or noise required when sigma_sq > 0")
                g = rng.standard_normal(rx.shape + (2,))
                noise = np.sqrt(sigma_sq / 2.0) * (g[..., 0] + 1j * g[..., 1])
            rx = cplx.add(rx, cplx.const(noise))

        if self.cfg.variant == "direct":
            feat = ad.concat(_flatten_cplx(rx), axis=1)
        else:
            pilot_rx, data_rx = disassemble_packet(rx, cfg)
            if self.cfg.variant == "implicit":
                y_front = self.front(pilot_rx, data_rx, self.pilots, train)
                feat = ad.concat(_flatten_cplx(y_front), axis=1)
            else:
                _, y_ref = self.explicit_front(pilot_rx, data_rx, sigma_sq, train)
                feat = ad.concat(_flatten_cplx(y_ref), axis=1)
        return self.trunk(feat, train), pkt


def build_model(cfg: ModelConfig, seed: int) -> JsccModel:
    """Construct a model with the documented init stream (seed, spawn_key=(1,))."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    return JsccModel(cfg, rng)
