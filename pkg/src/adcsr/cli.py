"""Command-line surface wiring every module into end-to-end pipelines.

Option precedence: hyperparameter/settings file < environment variables
prefixed ADCSR_ < explicit command-line flags. Exit codes: 0 success,
1 validation or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import SCHEMA_VERSION, __version__, seeding
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .cost import (
    CostError,
    compare,
    count_macs,
    count_params,
    default_aux_path,
    load_aux_sizes,
)
from .degrade import (
    DegradeError,
    RECIPE_PRESETS,
    recipe_from_json,
    recipe_hash,
    recipe_to_json,
    synth_pair,
)
from .evalkit import EvalError, evaluate_dir, run_external_metric
from .imaging import Image, ImagingError, load_png, save_png
from .models.config import (
    INPUT_UNSHUFFLE,
    ArchConfig,
    ConfigError,
    from_json as config_from_json,
)
from .models.networks import BuildError, Network, build_network
from .models.pipelines import (
    PipelineError,
    student_forward_image,
    teacher_forward_image,
    vae_reconstruct,
)
from .models.store import WeightStoreError
from .presets import PRESETS, default_plan, get_preset
from .surgery import SurgeryError, SurgeryPlan, apply_plan, plan_from_json, plan_to_json
from .train import (
    FeatureDiscriminator,
    Stage1Hyper,
    Stage2Hyper,
    TrainError,
    images_to_tensor,
    run_stage1,
    run_stage2,
    stage1_config,
)

USER_ERRORS = (
    BuildError,
    CheckpointError,
    ConfigError,
    CostError,
    DegradeError,
    EvalError,
    ImagingError,
    PipelineError,
    SurgeryError,
    TrainError,
    WeightStoreError,
    FileNotFoundError,
    NotADirectoryError,
    IsADirectoryError,
    PermissionError,
)


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Option resolution: file < ADCSR_* environment < flag


def _load_values_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: settings file must hold a JSON object")
    return doc


class Resolver:
    """Resolves one option through the three precedence layers."""

    def __init__(self, args: argparse.Namespace, file_values: dict):
        self.args = args
        self.file_values = file_values

    def get(self, name: str, default=None, cast=None, required: bool = False):
        value = getattr(self.args, name, None)
        source = "flag"
        if value is None:
            env_key = "ADCSR_" + name.upper()
            if env_key in os.environ:
                value, source = os.environ[env_key], "env"
        if value is None and name in self.file_values:
            value, source = self.file_values[name], "file"
        if value is None:
            if required:
                raise UsageError(f"missing required option --{name.replace('_', '-')}")
            return default
        if cast is not None:
            try:
                value = cast(value)
            except (TypeError, ValueError) as e:
                raise UsageError(f"bad value for {name} (from {source}): {e}") from e
        return value


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_hw(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        hw = (int(h), int(w))
    except ValueError as e:
        raise UsageError(f"size must look like 128x128, got {text!r}") from e
    if hw[0] < 1 or hw[1] < 1:
        raise UsageError(f"size must be positive, got {text!r}")
    return hw


def _load_config_arg(name_or_path: str) -> tuple[str, ArchConfig]:
    if name_or_path in PRESETS:
        return name_or_path, get_preset(name_or_path)
    p = Path(name_or_path)
    if p.exists():
        return p.stem, config_from_json(p.read_text())
    raise UsageError(
        f"unknown config {name_or_path!r}; presets: {', '.join(sorted(PRESETS))}"
    )


def _load_recipe_arg(name_or_path: str):
    p = Path(name_or_path)
    if p.exists():
        return recipe_from_json(p.read_text())
    if name_or_path in RECIPE_PRESETS:
        return RECIPE_PRESETS[name_or_path]()
    raise UsageError(
        f"unknown recipe {name_or_path!r}; presets: {', '.join(sorted(RECIPE_PRESETS))}"
    )


def _load_network(path) -> tuple[Network, Checkpoint]:
    ck = load_checkpoint(path)
    net = build_network(ck.config)
    net.load_weights(ck.weights)
    return net, ck


def _require_seed(res: Resolver) -> int:
    seed = res.get("seed", cast=int)
    if seed is None:
        raise UsageError("this command is randomized and requires --seed")
    return seed


def _pair_dir_images(data_dir) -> tuple[list[Image], list[Image]]:
    root = Path(data_dir)
    lr_dir, hr_dir = root / "lr", root / "hr"
    if not lr_dir.is_dir() or not hr_dir.is_dir():
        raise UsageError(f"{root}: expected lr/ and hr/ subdirectories (synth output)")
    lr_names = sorted(p.name for p in lr_dir.glob("*.png"))
    hr_names = sorted(p.name for p in hr_dir.glob("*.png"))
    if lr_names != hr_names or not lr_names:
        raise UsageError(f"{root}: lr/ and hr/ must hold the same non-empty PNG set")
    lrs = [load_png(lr_dir / n) for n in lr_names]
    hrs = [load_png(hr_dir / n) for n in hr_names]
    return lrs, hrs


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    seed = _require_seed(res)
    count = res.get("count", cast=int, required=True)
    recipe = _load_recipe_arg(res.get("recipe", default="realesrgan-lite"))
    hr_dir = Path(res.get("hr_dir", required=True))
    out_dir = Path(res.get("out_dir", required=True))

    names = sorted(p.name for p in hr_dir.glob("*.png"))
    if not names:
        raise UsageError(f"{hr_dir}: no .png files")
    if count > len(names):
        raise UsageError(f"requested {count} pairs but {hr_dir} holds {len(names)} images")

    (out_dir / "lr").mkdir(parents=True, exist_ok=True)
    (out_dir / "hr").mkdir(parents=True, exist_ok=True)
    used = []
    for i in range(count):
        x_hr = load_png(hr_dir / names[i])
        x_lr, x_hr = synth_pair(x_hr, recipe, i, seed)
        save_png(x_lr, out_dir / "lr" / f"{i:05d}.png")
        save_png(x_hr, out_dir / "hr" / f"{i:05d}.png")
        used.append(names[i])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "recipe_hash": recipe_hash(recipe),
        "recipe": json.loads(recipe_to_json(recipe)),
        "seed": seed,
        "count": count,
        "source_names": used,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {count} LR-HR pairs to {out_dir} (recipe {recipe_hash(recipe)[:12]})")
    return 0


def _train_vae_or_teacher(args, train_unet: bool) -> int:
    import torch

    from .models.pipelines import conditioning_context, teacher_latent
    from .train.losses import TrainError as _TE
    from .train.stage1 import _batch_indices
    from .train.state import LossLog

    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    seed = _require_seed(res)
    steps = res.get("steps", default=300, cast=int)
    batch_size = res.get("batch_size", default=4, cast=int)
    lr = res.get("lr", default=1e-3, cast=float)
    out = Path(res.get("out", required=True))
    lrs, hrs = _pair_dir_images(res.get("data", required=True))

    if train_unet:
        net, ck = _load_network(res.get("init", required=True))
        cfg = net.cfg
        stage_tag = "make-teacher"
    else:
        _, cfg = _load_config_arg(res.get("config", default="mini-teacher"))
        net = build_network(cfg, seed=seeding.derive_seed(seed, "make-vae", "init"))
        stage_tag = "make-vae"

    hr_all = images_to_tensor(hrs)
    lr_all = images_to_tensor(lrs)
    n = hr_all.shape[0]
    net.module.train(False)
    for p in net.module.parameters():
        p.requires_grad_(False)

    if train_unet:
        params = list(net.module.unet.parameters())
        if net.module.cond is not None:
            params += list(net.module.cond.parameters())
        abar = net.module.noise_schedule().alpha_bar_t
        sqrt_ab, sqrt_1m = math.sqrt(abar), math.sqrt(1.0 - abar)
    else:
        params = list(net.module.encoder.parameters()) + list(net.module.decoder.parameters())
    for p in params:
        p.requires_grad_(True)
    opt = torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999))

    log_path = res.get("log")
    log = LossLog(log_path) if log_path else None
    try:
        for step in range(steps):
            idx = _batch_indices(seed, stage_tag, step, n, batch_size)
            x_hr = hr_all[idx]
            if train_unet:
                x_lr = lr_all[idx]
                with torch.no_grad():
                    z_lr = teacher_latent(net, x_lr)
                    z_hr = net.module.encoder.encode(x_hr)
                    eps_target = (z_lr - sqrt_ab * z_hr) / sqrt_1m
                t = None
                if cfg.unet.time_embedding:
                    t = torch.full((z_lr.shape[0],), cfg.schedule.t_index, dtype=torch.long)
                ctx = conditioning_context(net.module, z_lr.shape[0])
                eps = net.module.unet(z_lr, t=t, ctx=ctx)
                loss = ((eps - eps_target) ** 2).mean()
            else:
                x_hat = vae_reconstruct(net, x_hr)
                loss = (x_hat - x_hr).abs().mean()
            value = float(loss.detach())
            if not math.isfinite(value):
                raise _TE(f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if log:
                log.record(step, "mse" if train_unet else "l1", value)
                log.flush()
    finally:
        if log:
            log.close()

    save_checkpoint(out, cfg, net.weights(), extra={
        "kind": "teacher" if train_unet else "teacher-vae",
        "steps": steps,
        "seed": seed,
    })
    print(f"{stage_tag}: {steps} steps done, saved {out}")
    return 0


def cmd_make_vae(args) -> int:
    return _train_vae_or_teacher(args, train_unet=False)


def cmd_make_teacher(args) -> int:
    return _train_vae_or_teacher(args, train_unet=True)


def cmd_surgery(args) -> int:
    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    teacher_path = res.get("teacher", required=True)
    out = Path(res.get("out", required=True))
    net, ck = _load_network(teacher_path)

    if args.plan:
        base = plan_from_json(Path(args.plan).read_text())
    else:
        base = default_plan()
    plan = SurgeryPlan(
        eliminate_encoder=not res.get("no_eliminate_encoder", default=not base.eliminate_encoder,
                                      cast=_parse_bool),
        remove_text_time=not res.get("no_remove_text_time", default=not base.remove_text_time,
                                     cast=_parse_bool),
        optimize_connection=not res.get("no_optimize_connection",
                                        default=not base.optimize_connection, cast=_parse_bool),
        keep_unet=res.get("keep_unet", default=base.keep_unet, cast=float),
        keep_dec=res.get("keep_dec", default=base.keep_dec, cast=float),
        unshuffle_factor=res.get("unshuffle_factor", default=base.unshuffle_factor, cast=int),
        rescale_tiling=res.get("rescale_tiling", default=base.rescale_tiling, cast=_parse_bool),
    )
    student_cfg, student_ws = apply_plan(net.cfg, ck.weights, plan)
    save_checkpoint(out, student_cfg, student_ws, extra={
        "kind": "student",
        "surgery_plan": json.loads(plan_to_json(plan)),
        "teacher_config_hash": ck.config_hash,
    })
    t_params = sum(int(v.size) for v in ck.weights.values())
    s_params = sum(int(v.size) for v in student_ws.values())
    print(f"surgery: {t_params:,} -> {s_params:,} params "
          f"({100.0 * (1 - s_params / t_params):.2f}% reduction), saved {out}")
    return 0


def cmd_cost(args) -> int:
    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    name, cfg = _load_config_arg(res.get("config", required=True))
    input_hw = _parse_hw(res.get("input", default="128x128"))
    aux = {}
    if cfg.external_components:
        aux_path = res.get("aux", default=str(default_aux_path()))
        aux = load_aux_sizes(aux_path)
    params = count_params(cfg)
    macs = count_macs(cfg, input_hw)
    lines = [f"config: {name}", f"input: {input_hw[0]}x{input_hw[1]}", ""]
    width = max(len(k) for k in params)
    lines.append(f"{'module':<{width}}  {'params':>14}  {'macs':>18}")
    for key in [k for k in params if k != "total"] + ["total"]:
        lines.append(f"{key:<{width}}  {params[key]:>14,}  {macs[key]:>18,}")
    for comp in cfg.external_components:
        if comp not in aux:
            raise CostError(f"config declares external component {comp!r} but aux table lacks it")
        a = aux[comp]
        lines.append(f"{comp:<{width}}  {a.params:>14,}  {a.macs:>18,}  (aux)")
    text = "\n".join(lines) + "\n"
    out = res.get("out")
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    t_name, t_cfg = _load_config_arg(res.get("teacher", default="sd21-mirror"))
    s_name, s_cfg = _load_config_arg(res.get("student", default="sd21-student"))
    input_hw = _parse_hw(res.get("input", default="128x128"))
    aux = {}
    if t_cfg.external_components or s_cfg.external_components:
        aux_path = res.get("aux", default=str(default_aux_path()))
        aux = load_aux_sizes(aux_path)
    report = compare(t_cfg, aux, s_cfg, input_hw)
    table = report.render_table()
    sys.stdout.write(table)
    out = res.get("out")
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "compare.txt").write_text(table)
        (out_dir / "compare.kv").write_text(report.render_keyvalues())
        report.save_plot(out_dir / "compare.png")
        print(f"wrote compare.txt, compare.kv, compare.png to {out_dir}")
    return 0


def cmd_pretrain_decoder(args) -> int:
    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    seed = _require_seed(res)
    teacher, _ = _load_network(res.get("teacher", required=True))
    _, hrs = _pair_dir_images(res.get("data", required=True))
    out = Path(res.get("out", required=True))
    d1 = Stage1Hyper()
    hyper = Stage1Hyper(
        steps=res.get("steps", default=d1.steps, cast=int),
        batch_size=res.get("batch_size", default=d1.batch_size, cast=int),
        lr=res.get("lr", default=d1.lr, cast=float),
        disc_lr=res.get("disc_lr", default=d1.disc_lr, cast=float),
        delay_fraction=res.get("delay_fraction", default=d1.delay_fraction, cast=float),
        l1_weight=res.get("l1_weight", default=d1.l1_weight, cast=float),
        perceptual_weight=res.get("perceptual_weight", default=d1.perceptual_weight, cast=float),
        adv_weight=res.get("adv_weight", default=d1.adv_weight, cast=float),
        seed=seed,
        save_every=res.get("save_every", default=0, cast=int),
    )
    cfg = stage1_config(teacher.cfg, res.get("keep_dec", default=0.5, cast=float))
    log_path = res.get("log", default=str(out) + ".loss.csv")
    ws = run_stage1(
        cfg, teacher, hrs, hyper, log_path,
        state_path=res.get("state"), resume_from=res.get("resume"),
    )
    save_checkpoint(out, cfg, ws, extra={"kind": "stage1-decoder", "hyper": asdict(hyper)})
    print(f"pretrain-decoder: {hyper.steps} steps done, saved {out} (log {log_path})")
    return 0


def cmd_distill(args) -> int:
    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    seed = _require_seed(res)
    teacher, _ = _load_network(res.get("teacher", required=True))
    student, sck = _load_network(res.get("student", required=True))
    stage1, _ = _load_network(res.get("stage1", required=True))
    lrs, hrs = _pair_dir_images(res.get("data", required=True))
    out = Path(res.get("out", required=True))
    d2 = Stage2Hyper()
    hyper = Stage2Hyper(
        steps=res.get("steps", default=d2.steps, cast=int),
        batch_size=res.get("batch_size", default=d2.batch_size, cast=int),
        g_lr=res.get("g_lr", default=d2.g_lr, cast=float),
        d_lr=res.get("d_lr", default=d2.d_lr, cast=float),
        lambda_adv=res.get("lambda_adv", default=d2.lambda_adv, cast=float),
        lora_rank=res.get("lora_rank", default=d2.lora_rank, cast=int),
        seed=seed,
        save_every=res.get("save_every", default=0, cast=int),
    )
    disc = FeatureDiscriminator(
        teacher,
        feature_channels=student.cfg.vae.decoder_channels[0],
        rank=hyper.lora_rank,
        seed=seeding.derive_seed(seed, "stage2", "disc"),
    )
    log_path = res.get("log", default=str(out) + ".loss.csv")
    ws = run_stage2(
        student, teacher, stage1, disc, lrs, hrs, hyper, log_path,
        state_path=res.get("state"), resume_from=res.get("resume"),
    )
    save_checkpoint(out, student.cfg, ws, extra={
        "kind": "student-distilled",
        "hyper": asdict(hyper),
        "surgery_plan": sck.extra.get("surgery_plan"),
    })
    print(f"distill: {hyper.steps} steps done, saved {out} (log {log_path})")
    return 0


def cmd_infer(args) -> int:
    import torch

    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    net, _ = _load_network(res.get("weights", required=True))
    src = Path(res.get("in_path", required=True))
    dst = Path(res.get("out", required=True))

    student_mode = net.cfg.input_mode == INPUT_UNSHUFFLE
    forward = student_forward_image if student_mode else teacher_forward_image

    def run_one(png_in: Path, png_out: Path) -> None:
        img = load_png(png_in)
        with torch.no_grad():
            out = forward(net, img)
        png_out.parent.mkdir(parents=True, exist_ok=True)
        save_png(Image(out[0].numpy()), png_out)

    if src.is_dir():
        names = sorted(p.name for p in src.glob("*.png"))
        if not names:
            raise UsageError(f"{src}: no .png files")
        for name in names:
            run_one(src / name, dst / name)
        print(f"inferred {len(names)} images from {src} to {dst}")
    else:
        run_one(src, dst)
        print(f"inferred {src} -> {dst}")
    return 0


def cmd_eval(args) -> int:
    res = Resolver(args, _load_values_file(args.hyper) if args.hyper else {})
    sr_dir = res.get("sr_dir", required=True)
    gt_dir = res.get("gt_dir", required=True)
    out = Path(res.get("out", required=True))
    report = evaluate_dir(sr_dir, gt_dir, crop_border=res.get("crop_border", default=0, cast=int))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv())
    sys.stdout.write(report.render_table())
    for exe in args.external or []:
        metric, values = run_external_metric(exe, sr_dir, gt_dir)
        extra_path = out.with_name(f"{out.stem}-{metric}{out.suffix or '.csv'}")
        lines = [f"name,{metric}"] + [f"{k},{v}" for k, v in sorted(values.items())]
        extra_path.write_text("\n".join(lines) + "\n")
        print(f"external metric {metric}: wrote {extra_path}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hyper", help="JSON file supplying defaults for this command's options")
    p.add_argument("--seed", type=int, help="master seed (required on randomized commands)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adcsr",
        description="Structural compression toolkit for one-step diffusion super-resolution",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"adcsr {__version__} (schema {SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="synthesize LR-HR training pairs from HR images")
    _add_common(p)
    p.add_argument("--hr-dir", dest="hr_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--recipe", help="recipe JSON path or preset name")
    p.add_argument("--count", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("make-vae", help="train the small-scale autoencoder")
    _add_common(p)
    p.add_argument("--config", help="architecture preset name or config JSON path")
    p.add_argument("--data", help="synth output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--log")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_make_vae)

    p = sub.add_parser("make-teacher", help="train the one-step latent regressor on pairs")
    _add_common(p)
    p.add_argument("--init", help="checkpoint from make-vae")
    p.add_argument("--data")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--log")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_make_teacher)

    p = sub.add_parser("surgery", help="compress a teacher checkpoint into a student")
    _add_common(p)
    p.add_argument("--teacher")
    p.add_argument("--out")
    p.add_argument("--plan", help="surgery plan JSON (flags override)")
    p.add_argument("--keep-unet", dest="keep_unet", type=float)
    p.add_argument("--keep-dec", dest="keep_dec", type=float)
    p.add_argument("--unshuffle-factor", dest="unshuffle_factor", type=int)
    p.add_argument("--no-eliminate-encoder", dest="no_eliminate_encoder",
                   action="store_const", const=True)
    p.add_argument("--no-remove-text-time", dest="no_remove_text_time",
                   action="store_const", const=True)
    p.add_argument("--no-optimize-connection", dest="no_optimize_connection",
                   action="store_const", const=True)
    p.add_argument("--rescale-tiling", dest="rescale_tiling", action="store_const", const=True)
    p.set_defaults(fn=cmd_surgery)

    p = sub.add_parser("cost", help="static parameter and MAC accounting for one config")
    _add_common(p)
    p.add_argument("--config")
    p.add_argument("--input", help="LR input size HxW (default 128x128)")
    p.add_argument("--aux", help="aux size table JSON for external components")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("compare", help="teacher vs student cost report")
    _add_common(p)
    p.add_argument("--teacher", help="teacher config preset or JSON path")
    p.add_argument("--student", help="student config preset or JSON path")
    p.add_argument("--input")
    p.add_argument("--aux")
    p.add_argument("--out", help="directory for compare.txt / compare.kv / compare.png")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("pretrain-decoder", help="stage 1: train the pruned decoder")
    _add_common(p)
    p.add_argument("--teacher")
    p.add_argument("--data")
    p.add_argument("--keep-dec", dest="keep_dec", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--disc-lr", dest="disc_lr", type=float)
    p.add_argument("--delay-fraction", dest="delay_fraction", type=float)
    p.add_argument("--l1-weight", dest="l1_weight", type=float)
    p.add_argument("--perceptual-weight", dest="perceptual_weight", type=float)
    p.add_argument("--adv-weight", dest="adv_weight", type=float)
    p.add_argument("--log")
    p.add_argument("--state", help="path for the rolling training state")
    p.add_argument("--save-every", dest="save_every", type=int)
    p.add_argument("--resume", help="resume from a saved training state")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_pretrain_decoder)

    p = sub.add_parser("distill", help="stage 2: adversarial feature distillation")
    _add_common(p)
    p.add_argument("--teacher")
    p.add_argument("--student", help="checkpoint from surgery")
    p.add_argument("--stage1", help="checkpoint from pretrain-decoder")
    p.add_argument("--data")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--g-lr", dest="g_lr", type=float)
    p.add_argument("--d-lr", dest="d_lr", type=float)
    p.add_argument("--lambda-adv", dest="lambda_adv", type=float)
    p.add_argument("--lora-rank", dest="lora_rank", type=int)
    p.add_argument("--log")
    p.add_argument("--state")
    p.add_argument("--save-every", dest="save_every", type=int)
    p.add_argument("--resume")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("infer", help="super-resolve a PNG or directory of PNGs")
    _add_common(p)
    p.add_argument("--weights")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM report over paired directories")
    _add_common(p)
    p.add_argument("--sr-dir", dest="sr_dir")
    p.add_argument("--gt-dir", dest="gt_dir")
    p.add_argument("--out")
    p.add_argument("--crop-border", dest="crop_border", type=int)
    p.add_argument("--external", action="append",
                   help="external metric executable (reads two dirs, emits CSV); repeatable")
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
