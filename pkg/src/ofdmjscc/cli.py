"""Command-line entry points: train, eval, gradcheck, chain-demo.

All artifacts are CSV files (or a binary checkpoint) under ``--out``;
given the same seed and configuration the bytes are identical run to run.
Diagnostics go to stderr; the exit code is 0 only if everything succeeded.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import cplx, gradcheck
from .channel import apply_channel, freq_response, sample_channel, snr_to_sigma_sq
from .config import ExperimentConfig, format_config, load_config
from .data import load_checkpoint, save_checkpoint, synth_dataset
from .model import ModelConfig, build_model
from .ofdm import OfdmConfig, assemble_packet, dft_matrix, disassemble_packet, \
    make_pilots, papr_db
from .receiver import equalize_mmse, estimate_channel_mmse
from .training import evaluate, rng_stream, train

TRAIN_LOSS_HEADER = ["epoch", "loss", "lr", "steps"]
METRICS_HEADER = ["snr_db", "clip_ratio", "n_taps", "variant", "psnr_db", "ssim",
                  "papr_p99_db", "n_images", "n_realizations"]
CHAIN_HEADER = ["record", "index", "value"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _dataset(cfg_dict: dict) -> tuple[np.ndarray, np.ndarray]:
    """Train/test split: one deterministic pool, first train then test images."""
    n = cfg_dict["train_images"] + cfg_dict["test_images"]
    pool = synth_dataset(n, cfg_dict["image_h"], cfg_dict["image_w"],
                         cfg_dict["image_c"], cfg_dict["dataset_seed"])
    return pool[:cfg_dict["train_images"]], pool[cfg_dict["train_images"]:]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    overrides = {"seed": args.seed}
    if args.snr_db is not None:
        vals = _float_list(args.snr_db)
        if len(vals) != 1:
            raise ValueError("train takes a single --snr-db value")
        overrides["snr_db"] = vals[0]
    if args.clip_ratio is not None:
        vals = _float_list(args.clip_ratio)
        if len(vals) != 1:
            raise ValueError("train takes a single --clip-ratio value")
        overrides["clip_ratio"] = vals[0]
    cfg = load_config(args.config, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train_images, _ = _dataset(cfg.to_dict())
    model = build_model(cfg.model_config(), seed=cfg.seed)
    tcfg = cfg.train_config()
    print(f"training variant={cfg.variant} images={len(train_images)} "
          f"epochs={tcfg.epochs}", file=sys.stderr)
    history = train(model, train_images, tcfg,
                    log=lambda row: print(f"epoch {row['epoch']:4d}  "
                                          f"loss {row['loss']:.6f}", file=sys.stderr))
    _write_csv(out / "train_loss.csv", TRAIN_LOSS_HEADER,
               [[r["epoch"], r["loss"], r["lr"], r["steps"]] for r in history])
    (out / "config.txt").write_text(format_config(cfg))
    opt = model._last_opt
    save_checkpoint(out / "checkpoint.jscc",
                    arch=model.cfg.to_dict(),
                    params=[(n, p.value) for n, p in model.params()],
                    train_config=cfg.to_dict(),
                    opt_state=opt.state(),
                    rng_state=model._last_rng_state,
                    buffers=model.buffers())
    print(f"wrote {out / 'checkpoint.jscc'}", file=sys.stderr)
    return 0


def _load_model(path):
    ck = load_checkpoint(path)
    mcfg = ModelConfig.from_dict(ck["arch"])
    model = build_model(mcfg, seed=int(ck["train_config"]["seed"]))
    model.load_state(ck["params"], ck["buffers"])
    return model, ck


def cmd_eval(args) -> int:
    model, ck = _load_model(args.checkpoint)
    tc = ck["train_config"]
    _, test_images = _dataset(tc)
    seed = tc["seed"] if args.seed is None else args.seed
    snrs = _float_list(args.snr_db) if args.snr_db else [float(tc["snr_db"])]
    clips = _float_list(args.clip_ratio) if args.clip_ratio \
        else [float(tc["clip_ratio"])]
    taps_list = _int_list(args.taps) if args.taps else [int(tc["n_taps"])]
    realizations = args.realizations or int(tc.get("realizations", 5))

    rows = []
    for snr in snrs:
        for rho in clips:
            for n_taps in taps_list:
                res = evaluate(model, test_images, snr_db=snr, clip_ratio=rho,
                               n_taps=n_taps, gamma=float(tc["gamma"]),
                               realizations=realizations, seed=seed,
                               workers=args.workers)
                rows.append([snr, rho, n_taps, model.cfg.variant, res.psnr_db,
                             res.ssim, res.papr_p99_db, res.n_images,
                             res.n_realizations])
                print(f"snr={snr} rho={rho} taps={n_taps}: "
                      f"psnr={res.psnr_db:.2f} dB ssim={res.ssim:.4f}",
                      file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    return 0


def cmd_gradcheck(args) -> int:
    reports = gradcheck.run_all(step=args.step, tol=args.tol)
    for r in reports:
        print(r.line())
    n_fail = sum(not r.passed for r in reports)
    print(f"{len(reports) - n_fail}/{len(reports)} gradient checks passed")
    return 0 if n_fail == 0 else 1


def cmd_chain_demo(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    ocfg = cfg.model_config().ofdm
    snr = _float_list(args.snr_db)[0] if args.snr_db else cfg.snr_db
    rho = _float_list(args.clip_ratio)[0] if args.clip_ratio else cfg.clip_ratio
    sigma_sq = snr_to_sigma_sq(snr)

    rng = rng_stream(cfg.seed, 4)
    z = (rng.standard_normal((1, ocfg.n_s, ocfg.l_fft))
         + 1j * rng.standard_normal((1, ocfg.n_s, ocfg.l_fft))) / math.sqrt(2.0)
    pilots = make_pilots(ocfg.pilot_seed, ocfg.n_p, ocfg.l_fft)
    grid = cplx.const(z)
    pkt = assemble_packet(grid, pilots, ocfg, clip_ratio=rho)
    h = sample_channel(rng, cfg.n_taps, cfg.gamma, batch=1)
    rx = apply_channel(pkt.tx, h, sigma_sq, rng=rng)
    pilot_rx, data_rx = disassemble_packet(rx, ocfg)
    h_hat = estimate_channel_mmse(pilot_rx, pilots, sigma_sq)
    y_eq = equalize_mmse(data_rx, h_hat, sigma_sq)

    # effective per-subcarrier response of the normalized packet: c * H
    frame = np.concatenate([pilots[None], z[0][None].reshape(1, ocfg.n_s, ocfg.l_fft)],
                           axis=1)[0]
    waves = frame @ np.conj(dft_matrix(ocfg.l_fft))
    serial = np.concatenate([waves[:, ocfg.l_fft - ocfg.l_cp:], waves], axis=1).reshape(-1)
    c = 1.0 / math.sqrt(float(np.mean(np.abs(serial) ** 2)))
    h_eff = c * freq_response(h, ocfg.l_fft)[0]

    tx = pkt.tx.value[0]
    pre = pkt.preclip.value[0]
    est_mse = float(np.mean(np.abs(h_hat.value[0] - h_eff) ** 2))
    eq_mse = float(np.mean(np.abs(y_eq.value[0] - z[0]) ** 2))
    rows = [
        ["power_preclip", "", float(np.mean(np.abs(pre) ** 2))],
        ["power_tx", "", float(np.mean(np.abs(tx) ** 2))],
        ["papr_preclip_db", "", float(papr_db(pre))],
        ["papr_tx_db", "", float(papr_db(tx))],
        ["peak_amplitude", "", float(np.abs(tx).max())],
        ["estimation_mse", "", est_mse],
        ["equalized_mse", "", eq_mse],
    ]
    rows += [["abs_h", k, float(np.abs(h_eff[k]))] for k in range(ocfg.l_fft)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "chain.csv", CHAIN_HEADER, rows)
    print(f"snr={snr} dB rho={rho}: papr={rows[3][2]:.2f} dB "
          f"peak={rows[4][2]:.4f} est_mse={est_mse:.3e} eq_mse={eq_mse:.3e}",
          file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ofdmjscc",
                                description="Differentiable OFDM image transceiver")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model and write a checkpoint")
    tr.add_argument("--config", type=Path, default=None, help="key=value config file")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--out", type=Path, required=True)
    tr.add_argument("--snr-db", default=None, help="training SNR (single value)")
    tr.add_argument("--clip-ratio", default=None, help="clipping ratio (single value)")
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint over condition sweeps")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--out", type=Path, required=True)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--snr-db", default=None, help="comma-separated list")
    ev.add_argument("--clip-ratio", default=None, help="comma-separated list (inf ok)")
    ev.add_argument("--taps", default=None, help="comma-separated channel lengths")
    ev.add_argument("--realizations", type=int, default=None)
    ev.add_argument("--workers", type=int, default=1)
    ev.set_defaults(fn=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op")
    gc.add_argument("--step", type=float, default=gradcheck.DEFAULT_STEP)
    gc.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL)
    gc.set_defaults(fn=cmd_gradcheck)

    cd = sub.add_parser("chain-demo", help="run one packet through the DSP chain")
    cd.add_argument("--config", type=Path, default=None)
    cd.add_argument("--seed", type=int, default=None)
    cd.add_argument("--out", type=Path, required=True)
    cd.add_argument("--snr-db", default=None)
    cd.add_argument("--clip-ratio", default=None)
    cd.set_defaults(fn=cmd_chain_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
