"""Training and evaluation loops.

Reproducibility contract: every source of randomness is an
``np.random.Generator`` derived from the experiment seed by a documented
split, ``default_rng(SeedSequence(entropy=seed, spawn_key=key))``:

* ``(1,)``            — model parameter initialization (see ``build_model``)
* ``(2,)``            — the training stream: epoch shuffles, per-batch SNR
                        draws, channel taps and noise, in that order
* ``(3, i, r)``       — evaluation of image ``i``, realization ``r``

Given the same seed and config, training is bitwise deterministic; evaluation
additionally does not depend on batching or worker count because every
(image, realization) pair owns its stream.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .channel import sample_channel, snr_to_sigma_sq
from .metrics import psnr, ssim
from .model import JsccModel
from .ofdm import papr_db

DIVERGENCE_LOSS = 1e8


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key) per the documented split."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def mse_loss(pred: Node, target: np.ndarray) -> Node:
    """Mean squared error over every element of the batch."""
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.value.shape} vs {target.shape}")
    diff = ad.sub(pred, ad.constant(target))
    return ad.mul_const(ad.sum_all(ad.mul(diff, diff)), 1.0 / target.size)


class Adam:
    """ADAM with (beta1, beta2) = (0.5, 0.999) defaults and eps outside the root."""

    def __init__(self, params: list[tuple[str, Node]], beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros(p.value.shape) for _, p in self.params]
        self.v = [np.zeros(p.value.shape) for _, p in self.params]

    def step(self, grads: dict[Node, np.ndarray], lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for i, (name, node) in enumerate(self.params):
            if node not in grads:
                # a parameter the loss cannot reach is a wiring bug, not a no-op
                raise KeyError(f"Adam: no gradient for {name}")
            g = grads[node]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"Adam: non-finite gradient for {name}")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            update = lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            ad.assign(node, node.value - update)

    def state(self) -> dict:
        return {"step": self.step_count, "m": [m.copy() for m in self.m],
                "v": [v.copy() for v in self.v]}

    def load_state(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise ValueError("Adam.load_state: parameter count mismatch")
        self.step_count = int(state["step"])
        self.m = [np.array(m) for m in state["m"]]
        self.v = [np.array(v) for v in state["v"]]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay_start: int = 20
    snr_db: float = 10.0
    snr_db_min: float | None = None   # set both min/max for uniform-random SNR
    snr_db_max: float | None = None
    clip_ratio: float = math.inf
    n_taps: int = 8
    gamma: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.lr_decay_start <= self.epochs:
            raise ValueError("lr_decay_start must be in [0, epochs]")
        if (self.snr_db_min is None) != (self.snr_db_max is None):
            raise ValueError("set both snr_db_min and snr_db_max or neither")
        if self.snr_db_min is not None and self.snr_db_min > self.snr_db_max:
            raise ValueError("snr_db_min > snr_db_max")

    @property
    def random_snr(self) -> bool:
        return self.snr_db_min is not None


def lr_at(tcfg: TrainConfig, epoch: int) -> float:
    """Constant phase, then linear decay reaching 0 one epoch past the last."""
    d, e = tcfg.lr_decay_start, tcfg.epochs
    if epoch < d or e <= d:
        return tcfg.lr
    return tcfg.lr * (e - epoch) / (e - d)


def train(model: JsccModel, images: np.ndarray, tcfg: TrainConfig,
          log=None) -> list[dict]:
    """Train in place; returns one row per epoch (epoch, loss, lr, steps).

    Every batch sees a fresh channel realization and noise per image. A
    non-finite or exploding loss raises ``RuntimeError``.
    """
    n = images.shape[0]
    if n < 1:
        raise ValueError("train: empty dataset")
    rng = rng_stream(tcfg.seed, 2)
    opt = Adam(model.params())
    history = []
    for epoch in range(tcfg.epochs):
        lr = lr_at(tcfg, epoch)
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, tcfg.batch_size):
            idx = perm[start:start + tcfg.batch_size]
            batch = images[idx]
            snr = rng.uniform(tcfg.snr_db_min, tcfg.snr_db_max) if tcfg.random_snr \
                else tcfg.snr_db
            sigma_sq = snr_to_sigma_sq(snr)
            taps = sample_channel(rng, tcfg.n_taps, tcfg.gamma, batch=len(idx))
            recon, _ = model.forward(batch, taps, sigma_sq, tcfg.clip_ratio,
                                     train=True, rng=rng)
            loss = mse_loss(recon, batch)
            lv = float(loss.value)
            if not math.isfinite(lv) or lv > DIVERGENCE_LOSS:
                raise RuntimeError(f"training diverged at epoch {epoch}: loss={lv}")
            grads = ad.backward(loss)
            opt.step(grads, lr)
            total += lv * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "loss": total / seen, "lr": lr, "steps": opt.step_count}
        history.append(row)
        if log is not None:
            log(row)
    model._last_opt = opt  # exposed for checkpointing
    model._last_rng_state = rng.bit_generator.state
    return history


@dataclass
class EvalResult:
    psnr_db: float
    ssim: float
    papr_p99_db: float
    n_images: int
    n_realizations: int
    channel_draws: int
    per_image_psnr_db: np.ndarray


def _eval_one_image(model, img, i, *, sigma_sq, clip_ratio, n_taps, gamma,
                    realizations, seed):
    """All realizations of one image as a single batch; returns per-r metrics."""
    taps = np.empty((realizations, n_taps), dtype=np.complex128)
    noises = None
    for r in range(realizations):
        rng = rng_stream(seed, 3, i, r)
        taps[r] = sample_channel(rng, n_taps, gamma)
        if sigma_sq > 0.0:
            if model.cfg.variant == "direct":
                t_rx = model.cfg.ofdm.n_s * model.cfg.ofdm.l_fft
            else:
                t_rx = model.cfg.ofdm.packet_len
            g = rng.standard_normal((t_rx, 2))
            w = np.sqrt(sigma_sq / 2.0) * (g[:, 0] + 1j * g[:, 1])
            if noises is None:
                noises = np.empty((realizations, t_rx), dtype=np.complex128)
            noises[r] = w
    batch = np.repeat(img[None], realizations, axis=0)
    recon, pkt = model.forward(batch, taps, sigma_sq, clip_ratio,
                               train=False, noise=noises)
    rec = recon.value
    ps = np.array([psnr(img, rec[r]) for r in range(realizations)])
    ss = np.array([ssim(img, rec[r]) for r in range(realizations)])
    pp = np.atleast_1d(papr_db(pkt.tx.value))
    return ps, ss, pp


def evaluate(model: JsccModel, images: np.ndarray, *, snr_db: float,
             clip_ratio: float = math.inf, n_taps: int = 8, gamma: float = 4.0,
             realizations: int = 5, seed: int = 0, workers: int = 1) -> EvalResult:
    """Average PSNR/SSIM over ``realizations`` fresh channels per image.

    Results are independent of ``workers``: each (image, realization) pair
    draws from its own RNG stream and aggregation runs in index order.
    """
    if realizations < 1:
        raise ValueError("evaluate: realizations must be >= 1")
    n = images.shape[0]
    sigma_sq = snr_to_sigma_sq(snr_db)
    kw = dict(sigma_sq=sigma_sq, clip_ratio=clip_ratio, n_taps=n_taps, gamma=gamma,
              realizations=realizations, seed=seed)
    results = [None] * n
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_eval_one_image, model, images[i], i, **kw)
                       for i in range(n)]
            for i, fut in enumerate(futures):
                results[i] = fut.result()
    else:
        for i in range(n):
            results[i] = _eval_one_image(model, images[i], i, **kw)
    all_psnr = np.stack([r[0] for r in results])   # (n, R)
    all_ssim = np.stack([r[1] for r in results])
    all_papr = np.concatenate([r[2] for r in results])
    return EvalResult(
        psnr_db=float(all_psnr.mean()),
        ssim=float(all_ssim.mean()),
        papr_p99_db=float(np.percentile(all_papr, 99)),
        n_images=n,
        n_realizations=realizations,
        channel_draws=n * realizations,
        per_image_psnr_db=all_psnr.mean(axis=1),
    )
