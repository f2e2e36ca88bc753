"""Command line entry points.

Every subcommand takes --config/--seed/--out, writes a config echo next
to its artifacts, and is deterministic given (config file, seed).  Model
checkpoints embed the config text, and commands that consume a checkpoint
rebuild their configuration from that block, erroring out if an
explicitly passed --config disagrees.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
from pathlib import Path

import numpy as np

from .analysis import hf_energy_ratio, psnr, ssim, write_metrics_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_config, parse_config_text
from .data import (
    load_dataset,
    load_image_folder,
    load_lr_only,
    save_png,
    write_dataset,
)
from .diffusion import make_schedule
from .filters import classical_guided_filter
from .kernels import bicubic_resize_np, box_mean_filter
from .model import init_model_params
from .optim import Adam
from .tensor import no_grad
from .training import (
    TrainConfig,
    TrainingDiverged,
    fresh_denoiser,
    infer_one,
    pretrain_denoiser,
    stage1_trainables,
    stage2_trainables,
    train_stage1,
    train_stage2,
)

STAGE1_CKPT = "stage1.ckpt"
STAGE2_CKPT = "stage2.ckpt"


class CliError(RuntimeError):
    """User-facing failure: message to stderr, nonzero exit."""


def _echo_config(cfg, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.echo.ini").write_text(cfg.to_text())


def _schedule(cfg):
    d = cfg.values["diffusion"]
    return make_schedule(d["t_max"], d["beta_start"], d["beta_end"])


def _pretrain(cfg, pairs, params, den, mcfg, sched, tc):
    """Run the denoiser warm-start when configured; returns its history."""
    steps = cfg.get("train", "pretrain_steps")
    if not steps:
        return []
    from dataclasses import replace

    history, _ = pretrain_denoiser(
        pairs, params, den, mcfg, sched, replace(tc, steps=steps)
    )
    return history


def _train_config(cfg, steps_key, steps_override=None):
    t = cfg.values["train"]
    steps = t[f"{steps_key}_steps"] if steps_override is None else steps_override
    return TrainConfig(
        steps=steps,
        lr=t["lr"],
        batch=t["batch"],
        patch=t["patch"],
        lr_warmup=t["lr_warmup"],
        lr_tau=t["lr_tau"],
        log_every=t["log_every"],
        seed=cfg.get("run", "seed"),
    )


def _params_into(params, arrays, prefix=""):
    tensors = params.tensors() if hasattr(params, "tensors") else params
    for name, tensor in tensors.items():
        key = prefix + name
        if key not in arrays:
            raise CliError(f"checkpoint missing parameter {key!r}")
        arr = np.asarray(arrays[key], dtype=np.float64)
        if arr.shape != tensor.data.shape:
            raise CliError(
                f"checkpoint shape {arr.shape} != expected "
                f"{tensor.data.shape} for {key!r}"
            )
        tensor.data = arr.copy()


def _model_arrays(params):
    return {k: v.data.copy() for k, v in params.tensors().items()}


def _save_train_ckpt(path, cfg, params, opt, step, stage, den=None):
    arrays = _model_arrays(params)
    if den is not None:
        arrays.update({k: v.data.copy() for k, v in den.tensors(prefix="den").items()})
    arrays.update(opt.state_arrays())
    arrays["meta.step"] = np.array(float(step))
    arrays["meta.stage"] = np.array(float(stage))
    save_checkpoint(path, cfg.to_text(), arrays)


def _strip_seed(text):
    return "\n".join(
        ln for ln in text.splitlines() if not ln.startswith("seed = ")
    )


def _config_from_ckpt(text, cli_cfg, cli_cfg_was_given, seed_override=None):
    """Rebuild config from the checkpoint's embedded block.

    An explicitly passed --config must agree with it (the run seed aside,
    which --seed may override afterwards).
    """
    ckpt_cfg = parse_config_text(text)
    if cli_cfg_was_given and _strip_seed(cli_cfg.to_text()) != _strip_seed(
        ckpt_cfg.to_text()
    ):
        raise CliError("--config disagrees with the checkpoint's embedded config")
    if seed_override is not None:
        ckpt_cfg.values["run"]["seed"] = seed_override
    return ckpt_cfg


def _denoiser_from_arrays(mcfg, arrays, seed):
    den = fresh_denoiser(mcfg, seed)
    _params_into(den.tensors(prefix="den"), arrays)
    return den


def _write_loss_csv(path, history, log_every, append):
    keys = list(history[0]) if history else ["step", "loss"]
    rows = [
        row
        for i, row in enumerate(history)
        if row["step"] % log_every == 0 or i == len(history) - 1
    ]
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        if mode == "w":
            writer.writeheader()
        for row in rows:
            writer.writerow({k: f"{v:.8f}" if k != "step" else v for k, v in row.items()})


def count_params(params, den=None):
    n = sum(t.data.size for t in params.tensors().values())
    if den is not None:
        n += sum(t.data.size for t in den.tensors().values())
    return n


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    out = Path(args.out)
    d = cfg.values["data"]
    manifest = write_dataset(
        out,
        n_train=d["n_train"],
        n_test=d["n_test"],
        scale=cfg.get("model", "scale"),
        hr_size=d["hr_size"],
        degradations=cfg.degradations(),
        params=cfg.rain_params(),
        seed=cfg.get("run", "seed"),
    )
    _echo_config(cfg, out)
    digest = hashlib.sha256(manifest.encode()).hexdigest()
    print(f"wrote {d['n_train']} train + {d['n_test']} test pairs to {out}")
    print(f"manifest sha256 {digest}")
    return 0


def cmd_train(args, cfg):
    out = Path(args.out)
    mcfg = cfg.model_config()
    seed = cfg.get("run", "seed")
    pairs = load_dataset(args.data, "train")
    tc = _train_config(cfg, f"stage{args.stage}", args.steps)

    if args.stage == 1:
        params = init_model_params(mcfg, seed=seed)
        opt, start = None, 0
        ckpt_path = out / STAGE1_CKPT
        if args.resume:
            if not ckpt_path.exists():
                raise CliError(f"--resume: no checkpoint at {ckpt_path}")
            text, arrays = load_checkpoint(ckpt_path)
            _config_from_ckpt(text, cfg, True)
            _params_into(params, arrays)
            start = int(arrays["meta.step"])
            opt = Adam(stage1_trainables(params), lr=tc.lr)
            opt.load_state_arrays(arrays)
        history, opt = train_stage1(pairs, params, mcfg, tc, opt=opt, start_step=start)
        _echo_config(cfg, out)
        _save_train_ckpt(ckpt_path, cfg, params, opt, tc.steps, 1)
        _write_loss_csv(out / "stage1_loss.csv", history, tc.log_every, args.resume)
        if history:
            print(f"stage 1 done: {len(history)} steps, final loss "
                  f"{history[-1]['loss']:.6f}")
        else:
            print("stage 1: checkpoint already at the configured step count")
        return 0

    # stage 2 requires a finished stage-1 checkpoint; fail before any output
    stage1_path = Path(args.ckpt) if args.ckpt else out / STAGE1_CKPT
    if not stage1_path.exists():
        raise CliError(
            f"stage 2 requires a stage-1 checkpoint (none at {stage1_path}); "
            "run `rainsr train --stage 1` first"
        )
    text, arrays = load_checkpoint(stage1_path)
    cfg = _config_from_ckpt(text, cfg, args.config is not None, args.seed)
    mcfg = cfg.model_config()
    seed = cfg.get("run", "seed")
    tc = _train_config(cfg, "stage2", args.steps)
    params = init_model_params(mcfg, seed=seed)
    sched = _schedule(cfg)
    ckpt_path = out / STAGE2_CKPT
    opt, start = None, 0
    if args.resume:
        if not ckpt_path.exists():
            raise CliError(f"--resume: no checkpoint at {ckpt_path}")
        text2, arrays2 = load_checkpoint(ckpt_path)
        _config_from_ckpt(text2, cfg, True)
        _params_into(params, arrays2)
        den = _denoiser_from_arrays(mcfg, arrays2, seed)
        start = int(arrays2["meta.step"])
        opt = Adam(stage2_trainables(params, den), lr=tc.lr)
        opt.load_state_arrays(arrays2)
    else:
        _params_into(params, arrays)  # stage-1 weights, E1 included
        den = fresh_denoiser(mcfg, seed)
        pre_hist = _pretrain(cfg, pairs, params, den, mcfg, sched, tc)
        if pre_hist:
            _write_loss_csv(out / "pretrain_loss.csv", pre_hist, tc.log_every, False)
    history, opt = train_stage2(pairs, params, den, mcfg, sched, tc,
                                opt=opt, start_step=start)
    _echo_config(cfg, out)
    _save_train_ckpt(ckpt_path, cfg, params, opt, tc.steps, 2, den=den)
    _write_loss_csv(out / "stage2_loss.csv", history, tc.log_every, args.resume)
    if history:
        print(f"stage 2 done: {len(history)} steps, final loss "
              f"{history[-1]['loss']:.6f}")
    return 0


def _load_stage2(path, args, cli_cfg):
    if not Path(path).exists():
        raise CliError(f"no checkpoint at {path}")
    text, arrays = load_checkpoint(path)
    cfg = _config_from_ckpt(text, cli_cfg, args.config is not None, args.seed)
    mcfg = cfg.model_config()
    seed = cfg.get("run", "seed")
    params = init_model_params(mcfg, seed=seed)
    _params_into(params, arrays)
    den = _denoiser_from_arrays(mcfg, arrays, seed)
    return cfg, mcfg, params, den


def cmd_infer(args, cfg):
    out = Path(args.out)
    cfg, mcfg, params, den = _load_stage2(args.ckpt, args, cfg)
    sched = _schedule(cfg)
    seed = cfg.get("run", "seed")
    if args.data:
        inputs = [(n, img) for n, img, _s in load_lr_only(args.data, args.split)]
    else:
        inputs = load_image_folder(args.input)
    restored_dir = out / "restored"
    restored_dir.mkdir(parents=True, exist_ok=True)
    for idx, (name, lr_img) in enumerate(inputs):
        sr = infer_one(lr_img, params, den, mcfg, sched, seed=(seed, 4, idx))
        stem = name.rsplit(".", 1)[0]
        save_png(restored_dir / f"{stem}.sr.png", sr)
    _echo_config(cfg, out)
    print(f"restored {len(inputs)} images into {restored_dir}")
    return 0


def cmd_eval(args, cfg):
    out = Path(args.out)
    cfg, mcfg, params, den = _load_stage2(args.ckpt, args, cfg)
    sched = _schedule(cfg)
    seed = cfg.get("run", "seed")
    rows = []
    for idx, pair in enumerate(load_dataset(args.data, "test")):
        up = np.clip(bicubic_resize_np(pair.lr_rainy, pair.scale), 0.0, 1.0)
        sr = infer_one(pair.lr_rainy, params, den, mcfg, sched, seed=(seed, 4, idx))
        rows.append({
            "name": f"pair_{idx:05d}",
            "psnr_bicubic": f"{psnr(up, pair.hr_clean):.4f}",
            "psnr_model": f"{psnr(sr, pair.hr_clean):.4f}",
            "ssim_bicubic": f"{ssim(up, pair.hr_clean):.4f}",
            "ssim_model": f"{ssim(sr, pair.hr_clean):.4f}",
        })
    mean_b = float(np.mean([float(r["psnr_bicubic"]) for r in rows]))
    mean_m = float(np.mean([float(r["psnr_model"]) for r in rows]))
    mean_sb = float(np.mean([float(r["ssim_bicubic"]) for r in rows]))
    mean_sm = float(np.mean([float(r["ssim_model"]) for r in rows]))
    rows.append({
        "name": "mean",
        "psnr_bicubic": f"{mean_b:.4f}",
        "psnr_model": f"{mean_m:.4f}",
        "ssim_bicubic": f"{mean_sb:.4f}",
        "ssim_model": f"{mean_sm:.4f}",
    })
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "eval.csv",
                      ["name", "psnr_bicubic", "psnr_model",
                       "ssim_bicubic", "ssim_model"])
    _echo_config(cfg, out)
    print(f"mean PSNR: bicubic {mean_b:.4f} dB, model {mean_m:.4f} dB "
          f"({mean_m - mean_b:+.4f} dB)")
    return 0


def insight_stages(pair, r, eps, hp_radius, hp_gain):
    """Upsample -> clean-guided filtering -> guide high-pass compensation.

    Returns the three HR images of the pipeline.  Uses ground truth as the
    guide on purpose: it demonstrates how much a clean prior helps, not
    how to restore blind.
    """
    up = np.clip(bicubic_resize_np(pair.lr_rainy, pair.scale), 0.0, 1.0)
    with no_grad():
        guided = classical_guided_filter(up, pair.hr_clean, r, eps).data
        smooth = box_mean_filter(pair.hr_clean, hp_radius).data
    comp = np.clip(guided + hp_gain * (pair.hr_clean - smooth), 0.0, 1.0)
    return up, np.clip(guided, 0.0, 1.0), comp


def cmd_insight(args, cfg):
    out = Path(args.out)
    ins = cfg.values["insight"]
    rows = []
    for idx, pair in enumerate(load_dataset(args.data, "test")):
        up, guided, comp = insight_stages(
            pair, ins["r"], ins["eps"], ins["hp_radius"], ins["hp_gain"]
        )
        gt = pair.hr_clean
        rows.append({
            "name": f"pair_{idx:05d}",
            "psnr_rainy": f"{psnr(up, gt):.4f}",
            "psnr_guided": f"{psnr(guided, gt):.4f}",
            "psnr_comp": f"{psnr(comp, gt):.4f}",
            "hf_rainy": f"{hf_energy_ratio(up):.6f}",
            "hf_guided": f"{hf_energy_ratio(guided):.6f}",
            "hf_comp": f"{hf_energy_ratio(comp):.6f}",
            "hf_gt": f"{hf_energy_ratio(gt):.6f}",
        })
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "insight.csv",
                      ["name", "psnr_rainy", "psnr_guided", "psnr_comp",
                       "hf_rainy", "hf_guided", "hf_comp", "hf_gt"])
    _echo_config(cfg, out)
    n_up = sum(
        float(r["psnr_guided"]) > float(r["psnr_rainy"]) for r in rows
    )
    print(f"guided stage raised PSNR on {int(n_up)}/{len(rows)} pairs")
    return 0


ABLATIONS = [
    ("full", {}, "both"),
    ("no_prior", {"use_prior": False}, "stage1"),
    ("no_diffusion", {}, "no_chain"),
    ("feature_map_diffusion", None, "unsupported"),
    ("no_gfm", {"use_gfm": False}, "both"),
    ("no_highpass", {"use_highpass": False}, "both"),
    ("no_attention", {"use_attention": False}, "both"),
]


def cmd_ablate(args, cfg):
    from dataclasses import replace

    out = Path(args.out)
    train_pairs = load_dataset(args.data, "train")
    test_pairs = load_dataset(args.data, "test")
    seed = cfg.get("run", "seed")
    base_mcfg = cfg.model_config()
    sched = _schedule(cfg)
    tc1 = _train_config(cfg, "stage1")
    tc2 = _train_config(cfg, "stage2")
    rows = []
    for name, overrides, mode in ABLATIONS:
        if mode == "unsupported":
            rows.append({"variant": name, "params": "", "psnr": "", "ssim": "",
                         "note": "unsupported: diffusion runs on vector priors, "
                                 "not feature maps"})
            continue
        mcfg = replace(base_mcfg, **overrides)
        params = init_model_params(mcfg, seed=seed)
        train_stage1(train_pairs, params, mcfg, tc1)
        den = fresh_denoiser(mcfg, seed)
        chain = mode != "no_chain"
        note = ""
        if mode == "stage1":
            note = "stage 2 skipped (prior disabled)"
            n_params = count_params(params)
        else:
            if chain:
                _pretrain(cfg, train_pairs, params, den, mcfg, sched, tc2)
            train_stage2(train_pairs, params, den, mcfg, sched, tc2, chain=chain)
            n_params = count_params(params, den)
            if mode == "no_chain":
                note = "prior regressed from condition, no reverse chain"
        ps, ss = [], []
        for idx, pair in enumerate(test_pairs):
            sr = infer_one(pair.lr_rainy, params, den, mcfg, sched,
                           seed=(seed, 4, idx), chain=chain and mode != "stage1")
            ps.append(psnr(sr, pair.hr_clean))
            ss.append(ssim(sr, pair.hr_clean))
        rows.append({"variant": name, "params": n_params,
                     "psnr": f"{np.mean(ps):.4f}", "ssim": f"{np.mean(ss):.4f}",
                     "note": note})
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "ablate.csv",
                      ["variant", "params", "psnr", "ssim", "note"])
    _echo_config(cfg, out)
    scored = [r for r in rows if r["psnr"]]
    best = max(scored, key=lambda r: float(r["psnr"]))
    full = next(r for r in rows if r["variant"] == "full")
    verdict = "best" if best is full else f"behind {best['variant']}"
    print(f"ablation table: {len(rows)} rows; full model is {verdict} by PSNR")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rainsr",
        description="Rain-degraded image super-resolution: data synthesis, "
                    "two-stage training, inference, and analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="override run seed")
        p.add_argument("--out", required=True, help="artifact directory")

    p = sub.add_parser("synth", help="generate a synthetic paired corpus")
    common(p)

    p = sub.add_parser("train", help="train one stage")
    common(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--ckpt", default=None,
                   help="stage-1 checkpoint for --stage 2 (default OUT/stage1.ckpt)")
    p.add_argument("--resume", action="store_true",
                   help="continue from OUT's checkpoint for this stage")
    p.add_argument("--steps", type=int, default=None,
                   help="override the configured step count (e.g. to stop early "
                        "and resume later)")

    p = sub.add_parser("infer", help="restore degraded images (no ground truth)")
    common(p)
    p.add_argument("--ckpt", required=True, help="stage-2 checkpoint")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--input", help="folder of degraded PNG inputs")
    group.add_argument("--data", help="dataset directory (reads LR tensors only)")
    p.add_argument("--split", default="test", choices=("train", "test"))

    p = sub.add_parser("eval", help="metrics of a checkpoint on the test split")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("insight", help="clean-guided filtering diagnostic")
    common(p)
    p.add_argument("--data", required=True)

    p = sub.add_parser("ablate", help="train and score component-toggle variants")
    common(p)
    p.add_argument("--data", required=True)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "insight": cmd_insight,
    "ablate": cmd_ablate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.values["run"]["seed"] = args.seed
        return COMMANDS[args.command](args, cfg)
    except (CliError, ConfigError, TrainingDiverged, ValueError, OSError) as e:
        print(f"rainsr {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
