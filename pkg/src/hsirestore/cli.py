"""Command-line interface.

Subcommands: synth, simulate, denoise, mixed, holefill, analyze. Every run is
driven by a flat key/value config assembled from task defaults, then an
optional JSON config file (unknown keys are rejected), then explicit
command-line flags (highest precedence). Artifact-producing runs write a
manifest JSON next to the output with the resolved config, seed, and package
version; manifests contain no timestamps, so reruns are byte-identical.

Exit codes: 0 success, 2 for configuration problems, 1 for runtime failures.

Thread-count environment variables are set before numpy is imported, so
--threads takes effect for BLAS; heavy imports happen lazily inside commands.
"""

import argparse
import json
import os
import sys

from .errors import ConfigError, HsiRestoreError

_MODEL_KEYS = {"blocks": 4, "hidden": 400, "kernel_size": 3, "multiplier": 1}
_OPTIM_KEYS = {"lr": 0.01, "halve_every": 50, "lr_floor": 1e-5,
               "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8}

_TASK_DEFAULTS = {
    "synth": {"height": 64, "width": 64, "bands": 16, "rank": 4, "smoothness": 6.0,
              "seed": 0},
    "simulate": {"sigma": 0.0, "impulse": 0.0, "lines_per_band": 0,
                 "line_band_fraction": 0.1, "line_deficits": None, "mask_rate": None,
                 "seed": 0},
    "denoise": {"epochs": 600, "batch": 32, "patch": 20, "refresh_every": 300,
                "alpha_range": [-0.1, 0.1], "seed": 0, **_MODEL_KEYS, **_OPTIM_KEYS},
    "mixed": {"epochs": 1000, "batch": 32, "patch": 20, "lambda_l1": 1.0,
              "train_sigma_range": [0.05, 0.25], "seed": 0, **_MODEL_KEYS, **_OPTIM_KEYS},
    "holefill": {"epochs": 800, "batch": 32, "patch": 20, "mask": None, "seed": 0,
                 **_MODEL_KEYS, **_OPTIM_KEYS},
    "analyze": {"ref": None, "psnr": False, "sigma": False, "svd": False, "hist": False,
                "bins": 65, "seed": 0},
}


def _add_common(sub, needs_input=True, needs_output=True):
    if needs_input:
        sub.add_argument("-i", "--input", required=True, help="input cube (.hsc)")
    if needs_output:
        sub.add_argument("-o", "--output", required=True, help="output path")
    sub.add_argument("--config", help="JSON config file; unknown keys are rejected")
    sub.add_argument("--seed", type=int, help="RNG seed (default 0)")
    sub.add_argument("--threads", type=int, help="BLAS thread count (default: hardware)")


def _add_model_optim_flags(sub):
    sub.add_argument("--blocks", type=int, help="separable blocks (default 4)")
    sub.add_argument("--hidden", type=int, help="hidden channel width (default 400)")
    sub.add_argument("--kernel-size", type=int, help="depthwise kernel size, odd (default 3)")
    sub.add_argument("--multiplier", type=int, help="depthwise kernels per channel (default 1)")
    sub.add_argument("--lr", type=float, help="initial learning rate (default 0.01)")
    sub.add_argument("--halve-every", type=int, help="epochs between halvings (default 50)")
    sub.add_argument("--lr-floor", type=float, help="learning-rate floor (default 1e-5)")
    sub.add_argument("--beta1", type=float, help="Adam beta1 (default 0.9)")
    sub.add_argument("--beta2", type=float, help="Adam beta2 (default 0.999)")
    sub.add_argument("--adam-eps", type=float, help="Adam epsilon (default 1e-8)")
    sub.add_argument("--epochs", type=int, help="training epochs")
    sub.add_argument("--batch", type=int, help="patches per step (default 32)")
    sub.add_argument("--patch", type=int, help="square patch size (default 20)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsirestore",
        description="Self-supervised hyperspectral image restoration.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a smooth low-rank synthetic cube")
    _add_common(p, needs_input=False)
    p.add_argument("--height", type=int, help="rows (default 64)")
    p.add_argument("--width", type=int, help="columns (default 64)")
    p.add_argument("--bands", type=int, help="spectral bands (default 16)")
    p.add_argument("--rank", type=int, help="spectral rank (default 4)")
    p.add_argument("--smoothness", type=float, help="spatial blur radius (default 6)")
    p.set_defaults(func=_cmd_synth)

    p = subs.add_parser("simulate", help="apply a seeded degradation recipe")
    _add_common(p)
    p.add_argument("--sigma", type=float, help="Gaussian noise level (default 0)")
    p.add_argument("--impulse", type=float, help="impulse density in [0, 1] (default 0)")
    p.add_argument("--lines-per-band", type=int,
                   help="line deficits per affected band (default 0 = none)")
    p.add_argument("--line-band-fraction", type=float,
                   help="fraction of bands that get line deficits (default 0.1)")
    p.add_argument("--mask-rate", type=float,
                   help="observation rate in (0, 1]; also writes <output stem>.mask.hsc")
    p.set_defaults(func=_cmd_simulate)

    p = subs.add_parser("denoise", help="self-supervised Gaussian denoising")
    _add_common(p)
    _add_model_optim_flags(p)
    p.add_argument("--refresh-every", type=int,
                   help="epochs between input refreshes (default 300; 0 disables)")
    p.add_argument("--alpha-range", type=float, nargs=2, metavar=("LO", "HI"),
                   help="noise-level jitter interval (default -0.1 0.1)")
    p.set_defaults(func=_cmd_denoise)

    p = subs.add_parser("mixed", help="mixed Gaussian/impulse/line restoration")
    _add_common(p)
    _add_model_optim_flags(p)
    p.add_argument("--lambda-l1", type=float, help="observation-fidelity weight (default 1.0)")
    p.add_argument("--train-sigma-range", type=float, nargs=2, metavar=("LO", "HI"),
                   help="injected noise level interval (default 0.05 0.25)")
    p.set_defaults(func=_cmd_mixed)

    p = subs.add_parser("holefill", help="fill unobserved voxels")
    _add_common(p)
    _add_model_optim_flags(p)
    p.add_argument("--mask", help="observation mask cube (.hsc, 0/1), required")
    p.set_defaults(func=_cmd_holefill)

    p = subs.add_parser("analyze", help="quality metrics and low-rank diagnostics")
    _add_common(p, needs_output=False)
    p.add_argument("-o", "--output", help="output prefix for CSV files (default: stdout)")
    p.add_argument("--ref", help="reference cube for PSNR")
    p.add_argument("--psnr", action="store_true", default=None, help="per-band PSNR vs --ref")
    p.add_argument("--sigma", action="store_true", default=None, help="blind noise estimate")
    p.add_argument("--svd", action="store_true", default=None,
                   help="singular values of the three unfoldings")
    p.add_argument("--hist", action="store_true", default=None,
                   help="adjacent-difference histograms, all directions")
    p.add_argument("--bins", type=int, help="histogram bins (default 65)")
    p.set_defaults(func=_cmd_analyze)
    return parser


def _set_threads(threads):
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(threads)


def _resolve_config(task: str, args) -> dict:
    cfg = dict(_TASK_DEFAULTS[task])
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {task}: {unknown}")
        cfg.update(loaded)
    for key in cfg:
        if hasattr(args, key):
            value = getattr(args, key)
            if value is not None:
                cfg[key] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}")
    return cfg


def _pair(cfg, key) -> tuple:
    v = cfg[key]
    if not isinstance(v, (list, tuple)) or len(v) != 2 \
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"{key} must be a pair of numbers, got {v!r}")
    return float(v[0]), float(v[1])


def _write_manifest(path: str, task: str, cfg: dict, inputs: dict, outputs: dict):
    manifest = {
        "task": task,
        "config": cfg,
        "inputs": inputs,
        "outputs": outputs,
        "package_version": _version(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _version() -> str:
    from . import __version__
    return __version__


def _write_loss_csv(path: str, losses, lrs, sigmas):
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,loss,lr,sigma_est\n")
        for epoch, loss in enumerate(losses):
            sig = f"{sigmas[epoch]:.9g}" if epoch < len(sigmas) else ""
            f.write(f"{epoch},{loss:.9g},{lrs[epoch]:.9g},{sig}\n")


def _progress_printer(task):
    def show(epoch, loss, lr, sigma):
        line = f"{task} epoch {epoch} loss {loss:.6g} lr {lr:.4g}"
        if sigma is not None:
            line += f" sigma {sigma:.4g}"
        print(line)
    return show


def _build_model_and_opt(cfg, bands, rng):
    from .nn import build_model
    from .optim import Adam, LrSchedule

    model = build_model(bands, hidden=cfg["hidden"], blocks=cfg["blocks"],
                        kernel_size=cfg["kernel_size"], multiplier=cfg["multiplier"], rng=rng)
    opt = Adam(model.parameters(), model.parameter_names(),
               beta1=cfg["beta1"], beta2=cfg["beta2"], eps=cfg["adam_eps"])
    schedule = LrSchedule(initial=cfg["lr"], halve_every=cfg["halve_every"],
                          floor=cfg["lr_floor"])
    return model, opt, schedule


def _cmd_synth(args) -> int:
    cfg = _resolve_config("synth", args)
    from .cube import save_cube
    from .degrade import synth_lowrank_cube
    from .rng import Rng

    cube = synth_lowrank_cube(cfg["height"], cfg["width"], cfg["bands"], cfg["rank"],
                              smoothness=cfg["smoothness"], rng=Rng(cfg["seed"]))
    save_cube(cube, args.output)
    _write_manifest(args.output + ".manifest.json", "synth", cfg, {},
                    {"cube": args.output})
    print(f"synth: wrote {args.output} shape {cube.shape}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _resolve_config("simulate", args)
    from .cube import load_cube, save_cube
    from .degrade import (DegradeSpec, apply_spec, mask_to_cube, random_line_deficits)
    from .rng import Rng

    clean = load_cube(args.input)
    lines = cfg["line_deficits"]
    if lines is not None and cfg["lines_per_band"]:
        raise ConfigError("give either line_deficits or lines_per_band, not both")
    if lines is None:
        lines = []
        if cfg["lines_per_band"]:
            lines = random_line_deficits(
                clean.height, clean.width, clean.bands, Rng(cfg["seed"]).spawn(1),
                band_fraction=cfg["line_band_fraction"],
                lines_per_band=cfg["lines_per_band"])
    else:
        lines = [tuple(line) for line in lines]
    spec = DegradeSpec(gaussian_sigma=cfg["sigma"], impulse_density=cfg["impulse"],
                       line_deficits=lines, mask_rate=cfg["mask_rate"], seed=cfg["seed"])
    degraded, mask = apply_spec(clean, spec)
    save_cube(degraded, args.output)
    outputs = {"cube": args.output}
    if mask is not None:
        mask_path = _sibling(args.output, ".mask.hsc")
        save_cube(mask_to_cube(mask), mask_path)
        outputs["mask"] = mask_path
    manifest_cfg = dict(cfg)
    manifest_cfg["line_deficits"] = [list(line) for line in lines]
    _write_manifest(args.output + ".manifest.json", "simulate", manifest_cfg,
                    {"cube": args.input}, outputs)
    print(f"simulate: wrote {args.output}")
    return 0


def _sibling(path: str, suffix: str) -> str:
    stem = os.path.splitext(path)[0]
    return stem + suffix


def _cmd_denoise(args) -> int:
    cfg = _resolve_config("denoise", args)
    from .cube import load_cube, save_cube
    from .nn import save_model
    from .pipelines import GaussianTaskConfig, train_gaussian
    from .rng import Rng

    noisy = load_cube(args.input)
    rng = Rng(cfg["seed"])
    model, opt, schedule = _build_model_and_opt(cfg, noisy.bands, rng)
    refresh = cfg["refresh_every"] or None
    task = GaussianTaskConfig(epochs=cfg["epochs"], batch=cfg["batch"], patch=cfg["patch"],
                              refresh_every=refresh, alpha_range=_pair(cfg, "alpha_range"),
                              schedule=schedule)
    result = train_gaussian(noisy, task, model, opt, rng,
                            progress=_progress_printer("denoise"))
    save_cube(result.restored, args.output)
    model_path = args.output + ".model.hsm"
    loss_path = args.output + ".loss.csv"
    save_model(result.model, model_path)
    _write_loss_csv(loss_path, result.losses, result.lrs, result.sigma_estimates)
    _write_manifest(args.output + ".manifest.json", "denoise", cfg,
                    {"cube": args.input},
                    {"cube": args.output, "model": model_path, "loss": loss_path})
    print(f"denoise: wrote {args.output}")
    return 0


def _cmd_mixed(args) -> int:
    cfg = _resolve_config("mixed", args)
    from .cube import load_cube, save_cube
    from .nn import save_model
    from .optim import Adam
    from .pipelines import MixedTaskConfig, train_mixed
    from .rng import Rng

    noisy = load_cube(args.input)
    rng = Rng(cfg["seed"])
    primary, opt1, schedule = _build_model_and_opt(cfg, noisy.bands, rng)
    companion, opt2, _ = _build_model_and_opt(cfg, noisy.bands, rng)
    task = MixedTaskConfig(epochs=cfg["epochs"], batch=cfg["batch"], patch=cfg["patch"],
                           lambda_l1=cfg["lambda_l1"],
                           train_sigma_range=_pair(cfg, "train_sigma_range"),
                           schedule=schedule)
    result = train_mixed(noisy, task, primary, companion, opt1, opt2, rng,
                         progress=_progress_printer("mixed"))
    save_cube(result.restored, args.output)
    primary_path = args.output + ".model.hsm"
    companion_path = args.output + ".companion.hsm"
    loss_path = args.output + ".loss.csv"
    save_model(result.primary, primary_path)
    save_model(result.companion, companion_path)
    _write_loss_csv(loss_path, result.losses, result.lrs, [])
    _write_manifest(args.output + ".manifest.json", "mixed", cfg,
                    {"cube": args.input},
                    {"cube": args.output, "model": primary_path,
                     "companion": companion_path, "loss": loss_path})
    print(f"mixed: wrote {args.output}")
    return 0


def _cmd_holefill(args) -> int:
    cfg = _resolve_config("holefill", args)
    if not cfg["mask"]:
        raise ConfigError("holefill requires --mask (or a 'mask' config key)")
    from .cube import load_cube, save_cube
    from .degrade import mask_from_cube
    from .nn import save_model
    from .pipelines import HolefillTaskConfig, train_holefill
    from .rng import Rng

    observed = load_cube(args.input)
    mask = mask_from_cube(load_cube(cfg["mask"]))
    rng = Rng(cfg["seed"])
    model, opt, schedule = _build_model_and_opt(cfg, observed.bands, rng)
    task = HolefillTaskConfig(epochs=cfg["epochs"], batch=cfg["batch"], patch=cfg["patch"],
                              schedule=schedule)
    result = train_holefill(observed, mask, task, model, opt, rng,
                            progress=_progress_printer("holefill"))
    save_cube(result.restored, args.output)
    model_path = args.output + ".model.hsm"
    loss_path = args.output + ".loss.csv"
    save_model(result.model, model_path)
    _write_loss_csv(loss_path, result.losses, result.lrs, [])
    _write_manifest(args.output + ".manifest.json", "holefill", cfg,
                    {"cube": args.input, "mask": cfg["mask"]},
                    {"cube": args.output, "model": model_path, "loss": loss_path})
    print(f"holefill: wrote {args.output}")
    return 0


def _cmd_analyze(args) -> int:
    cfg = _resolve_config("analyze", args)
    if not any(cfg[k] for k in ("psnr", "sigma", "svd", "hist")):
        raise ConfigError("analyze needs at least one of --psnr --sigma --svd --hist")
    if cfg["psnr"] and not cfg["ref"]:
        raise ConfigError("--psnr requires --ref")
    from .cube import load_cube
    from .metrics import DIRECTIONS, adjacent_diff_histogram, mode_singular_values, psnr
    from .noise_est import estimate_sigma

    cube = load_cube(args.input)
    sections = []
    if cfg["psnr"]:
        report = psnr(load_cube(cfg["ref"]), cube)
        rows = [f"{b},{v:.6f}" for b, v in enumerate(report.per_band)]
        sections.append(("psnr", "band,psnr", rows))
    if cfg["sigma"]:
        est = estimate_sigma(cube)
        rows = [f"{b},{v:.9g}" for b, v in enumerate(est.per_band)]
        rows.append(f"median,{est.sigma:.9g}")
        sections.append(("sigma", "band,sigma", rows))
    if cfg["svd"]:
        rows = []
        for mode in (1, 2, 3):
            spectrum = mode_singular_values(cube, mode)
            rows.extend(f"{mode},{i},{v:.9g}" for i, v in enumerate(spectrum.values))
        sections.append(("svd", "mode,index,sigma", rows))
    if cfg["hist"]:
        rows = []
        for direction in DIRECTIONS:
            hist = adjacent_diff_histogram(cube, direction, bins=cfg["bins"])
            rows.extend(
                f"{direction},{hist.bin_edges[i]:.9g},{hist.bin_edges[i + 1]:.9g},{c}"
                for i, c in enumerate(hist.counts)
            )
        sections.append(("hist", "direction,bin_left,bin_right,count", rows))

    if args.output:
        outputs = {}
        for name, header, rows in sections:
            path = f"{args.output}.{name}.csv"
            with open(path, "w", encoding="utf-8") as f:
                f.write(header + "\n")
                f.writelines(row + "\n" for row in rows)
            outputs[name] = path
        inputs = {"cube": args.input}
        if cfg["ref"]:
            inputs["ref"] = cfg["ref"]
        _write_manifest(args.output + ".manifest.json", "analyze", cfg, inputs, outputs)
        print(f"analyze: wrote {len(outputs)} file(s) with prefix {args.output}")
    else:
        for name, header, rows in sections:
            print(header)
            for row in rows:
                print(row)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _set_threads(args.threads)
        return args.func(args)
    except ConfigError as e:
        print(f"hsirestore {args.command}: {e}", file=sys.stderr)
        return 2
    except HsiRestoreError as e:
        print(f"hsirestore {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"hsirestore {args.command}: {e}", file=sys.stderr)
        return 1


def entry():
    raise SystemExit(main())
