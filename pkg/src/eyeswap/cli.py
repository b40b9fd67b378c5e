"""Command line: ``synth``, ``train``, ``apply`` and ``evaluate``.

Exit status is 0 on success, 2 for configuration errors, 3 for data
errors and 4 for runtime or numeric failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .config import ConfigError, RunConfig, load_config, synth_snapshot
from .corpus import STYLES, AttributeFormatError, SyntheticSpec, load_domain, load_manifest, synth_corpus
from .imagekit import Domain, image_grid, load_face, save_png
from .metrics import evaluate, feature_backend, perceptual_backend
from .trainer import MODES, MODE_ALIASES, eye_code, interpolate_eyes, load_state, remove_glasses, train, wear_glasses

log = logging.getLogger("eyeswap")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


# flag name -> config key; flags default to None so that only given flags override
TRAIN_FLAGS = {
    "lr": ("train.lr", float), "beta1": ("train.beta1", float), "beta2": ("train.beta2", float),
    "weight_decay": ("train.weight_decay", float), "batch": ("train.batch", int),
    "steps": ("train.steps", int), "seed": ("train.seed", int), "mode": ("train.mode", str),
    "checkpoint_every": ("train.checkpoint_every", int), "dtype": ("train.dtype", str),
    "res": ("net.resolution", int), "base_width": ("net.base_width", int),
    "eye_code_dim": ("net.eye_code_dim", int), "n_residual_blocks": ("net.n_residual_blocks", int),
    "mlp_dim": ("net.mlp_dim", int), "disc_scales": ("net.disc_scales", int),
    "lambda_face": ("loss.lambda_face", float), "lambda_eye": ("loss.lambda_eye", float),
    "r1_gamma": ("loss.r1_gamma", float),
    "data": ("paths.data", str), "attr_file": ("paths.attr_file", str), "out": ("paths.out", str),
    "resume": ("paths.resume", str),
    "split_fraction": ("metrics.split_fraction", float), "n_exemplars": ("metrics.n_exemplars", int),
    "feature_backend": ("metrics.feature_backend", str),
    "perceptual_backend": ("metrics.perceptual_backend", str),
}
BOOL_FLAGS = {"strict_composite_output": "train.strict_composite_output", "use_e_recon": "loss.use_e_recon",
              "deterministic": "train.deterministic"}


def _add_run_flags(p: argparse.ArgumentParser, names):
    p.add_argument("--config", help="flat key=value config file (e.g. net.resolution=64)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; may repeat")
    for name in names:
        if name in BOOL_FLAGS:
            p.add_argument("--" + name.replace("_", "-"), dest=name, default=None,
                           action=argparse.BooleanOptionalAction)
        else:
            key, typ = TRAIN_FLAGS[name]
            kw = {"choices": list(MODES) + list(MODE_ALIASES)} if name == "mode" else {}
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                           help=f"sets {key}", **kw)


def _run_config(args, names) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for name in names:
        value = getattr(args, name, None)
        if value is None:
            continue
        key = BOOL_FLAGS.get(name) or TRAIN_FLAGS[name][0]
        overrides[key] = str(value).lower() if isinstance(value, bool) else str(value)
    return load_config(args.config, overrides)


def _manifest(cfg: RunConfig):
    source = cfg.paths.attr_file or cfg.paths.data
    if source is None:
        raise ConfigError("no data given (--data or --attr-file)")
    try:
        manifest = load_manifest(source, cfg.net.resolution)
    except (FileNotFoundError, AttributeFormatError) as exc:
        raise DataError(str(exc)) from exc
    if cfg.paths.attr_file and cfg.paths.data:
        manifest.root_dir = cfg.paths.data
    return manifest


def _split(manifest, fraction):
    train_m, held_m = manifest.split(fraction)
    for m, what in ((train_m, "training"), (held_m, "held-out")):
        if not m.domain_a_files or not m.domain_b_files:
            raise DataError(f"{what} split has an empty domain (|A|={len(m.domain_a_files)}, "
                            f"|B|={len(m.domain_b_files)})")
    return train_m, held_m


# --- commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SyntheticSpec(args.n, args.res, args.seed, tuple(s.strip() for s in args.styles.split(",")))
    synth_corpus(spec, args.out)
    Path(args.out, "config.snapshot").write_text(synth_snapshot(spec))
    print(Path(args.out) / "manifest.json")
    return EXIT_OK


TRAIN_NAMES = [n for n in TRAIN_FLAGS if n not in ("n_exemplars", "feature_backend", "perceptual_backend")] \
    + ["strict_composite_output", "use_e_recon", "deterministic"]


def cmd_train(args) -> int:
    cfg = _run_config(args, TRAIN_NAMES)
    if cfg.paths.out is None:
        raise ConfigError("--out is required")
    out = Path(cfg.paths.out)
    cfg.save(out / "config.snapshot")
    train_m, held_m = _split(_manifest(cfg), cfg.metrics.split_fraction)
    state, reports = train(cfg.train, train_m, cfg.net, cfg.loss, out_dir=out, resume=cfg.paths.resume)
    if not all(torch.isfinite(torch.tensor(r.total_gen)) for r in reports):
        raise ArithmeticError("non-finite generator loss")
    held_a = load_domain(held_m, "A")[:4]
    held_b = load_domain(held_m, "B")[:4]
    tiles = []
    for i in range(min(len(held_a), len(held_b))):
        tiles += [held_a[i], remove_glasses(state, held_a[i], held_b[i]).pixels,
                  held_b[i], wear_glasses(state, held_b[i], held_a[i]).pixels]
    if tiles:
        (out / "samples").mkdir(parents=True, exist_ok=True)
        image_grid(tiles, ncols=4).save(out / "samples" / f"step_{state.step}.png")
    print(out / "checkpoints" / f"step_{state.step}.ckpt")
    return EXIT_OK


def cmd_apply(args) -> int:
    try:
        state = load_state(args.checkpoint)
    except (OSError, KeyError, RuntimeError) as exc:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    res = state.bundle.config.resolution
    src_domain = Domain.parse(args.input_domain)
    try:
        img = load_face(args.input, res, src_domain)
        exemplar = load_face(args.exemplar, res, src_domain.other)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    strict = state.config.strict_composite_output if args.strict_composite_output is None \
        else args.strict_composite_output
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    remove_first = src_domain is Domain.A
    forward = remove_glasses if remove_first else wear_glasses
    backward = wear_glasses if remove_first else remove_glasses
    written = []
    direction = args.direction
    if direction in ("remove", "wear"):
        if (direction == "remove") != remove_first:
            raise ConfigError(f"--direction {direction} needs an input from the other domain "
                              f"(input domain is {src_domain.value})")
        written.append(save_png(forward(state, img, exemplar, strict), out / f"{direction}.png"))
    elif direction == "swap":
        written.append(save_png(forward(state, img, exemplar, strict), out / "swap_input.png"))
        written.append(save_png(backward(state, exemplar, img, strict), out / "swap_exemplar.png"))
    elif direction == "interpolate":
        target = src_domain.other
        frames = interpolate_eyes(state, img, eye_code(state, img, target), eye_code(state, exemplar, target),
                                  args.n, target)
        path = out / "interpolate.png"
        image_grid(frames, ncols=len(frames)).save(path)
        written.append(path)
    for p in written:
        print(p)
    return EXIT_OK


EVAL_NAMES = ["data", "attr_file", "out", "res", "split_fraction", "n_exemplars", "feature_backend",
              "perceptual_backend", "seed"]


def cmd_evaluate(args) -> int:
    cfg = _run_config(args, EVAL_NAMES)
    try:
        state = load_state(args.checkpoint)
    except (OSError, KeyError, RuntimeError) as exc:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    if args.res is None:
        cfg = RunConfig.from_flat({"net.resolution": str(state.bundle.config.resolution)}, cfg)
    if cfg.net.resolution != state.bundle.config.resolution:
        raise ConfigError(f"--res {cfg.net.resolution} does not match checkpoint resolution "
                          f"{state.bundle.config.resolution}")
    if cfg.paths.out is None:
        raise ConfigError("--out is required")
    out = Path(cfg.paths.out)
    cfg.save(out / "config.snapshot")
    _, held_m = _split(_manifest(cfg), cfg.metrics.split_fraction)
    report = evaluate(state.bundle, load_domain(held_m, "A"), load_domain(held_m, "B"),
                      feature_backend(cfg.metrics.feature_backend),
                      perceptual_backend(cfg.metrics.perceptual_backend), cfg.metrics.n_exemplars)
    (out / "eval").mkdir(parents=True, exist_ok=True)
    path = out / "eval" / "report.json"
    path.write_text(json.dumps(report, indent=1))
    print(json.dumps(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eyeswap", description="Exemplar-guided eyeglasses removal and wearing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic glasses corpus")
    s.add_argument("--n", type=int, default=300, help="images per domain")
    s.add_argument("--res", type=int, default=64, help="model resolution recorded in the manifest")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--styles", default=",".join(STYLES), help="comma list of " + ", ".join(STYLES))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a corpus")
    _add_run_flags(t, TRAIN_NAMES)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("apply", help="run a trained checkpoint on one image")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--input", required=True)
    a.add_argument("--exemplar", required=True)
    a.add_argument("--input-domain", default="A", help="A (with glasses) or B (without)")
    a.add_argument("--direction", choices=["remove", "wear", "swap", "interpolate"], default="remove")
    a.add_argument("--n", type=int, default=5, help="frames for --direction interpolate")
    a.add_argument("--strict-composite-output", default=None, action=argparse.BooleanOptionalAction)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_apply)

    e = sub.add_parser("evaluate", help="realism/diversity report on the held-out split")
    e.add_argument("--checkpoint", required=True)
    _add_run_flags(e, EVAL_NAMES)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, AttributeFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.exception("command failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
