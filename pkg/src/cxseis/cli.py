"""Command-line entry point: ``cxseis <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .config import config_to_dict, load_config
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .evaluate import evaluate_model, fk_report, load_regions, write_report
from .io import SeismicVolume, dominant_frequency, extract_patches, load_npy, normalize, save_npy, split_patches, synth_volume
from .model import PUBLISHED_COUNTS, build, count_params, get_preset, load_weights
from .signal import Trace, dc_aliasing_profile, hilbert_volume
from .train import multi_seed

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("cxseis")


class DataError(Exception):
    pass


def _load_array(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} not found: {path}")
    array, _, _ = load_npy(path)
    return array


def _volume_from_config(cfg):
    if cfg.is_synthetic:
        return synth_volume(cfg.synth)
    data = _load_array(cfg.source, "input volume")
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3:
        raise DataError(f"{cfg.source}: expected a 2D or 3D volume, got shape {data.shape}")
    return SeismicVolume(data, cfg.synth.dt, cfg.synth.dx, provenance=cfg.source)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.synth.seed = args.seed
    vol = synth_volume(cfg.synth)
    save_npy(args.out, vol.data)
    print("volume " + "x".join(str(d) for d in vol.shape))
    print(f"spectral_peak_hz={dominant_frequency(vol):.2f}")
    return EXIT_OK


def cmd_hilbert(args):
    data = _load_array(args.input, "input volume")
    z = hilbert_volume(data)
    save_npy(args.out_re, z.real)
    save_npy(args.out_im, z.imag)
    print("analytic " + "x".join(str(d) for d in z.shape))
    return EXIT_OK


def _print_params(name):
    model = build(name)
    counts = count_params(model)
    print(f"model={name}")
    print(f"params_on_graph_2per_bn={counts['on_graph_2per_bn']}")
    print(f"params_on_graph_4per_bn={counts['on_graph_4per_bn']}")
    target = PUBLISHED_COUNTS[name]
    matched = [k for k in ("on_graph_2per_bn", "on_graph_4per_bn") if counts[k] == target]
    reading = "total feature maps (complex filters = half)" if get_preset(name).domain == "complex" else "real filters"
    if matched:
        print(f"published={target} matched by {matched[0]} (filter reading: {reading})")
    else:
        print(f"published={target} not matched")
    return counts


def cmd_params(args):
    _print_params(args.model)
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    if args.model is not None:
        cfg.model.preset = args.model
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.seeds is not None:
        cfg.train.seeds = tuple(int(s) for s in args.seeds.split(","))
    # re-run validation after overrides
    try:
        cfg.train.__post_init__()
        cfg.model.__post_init__()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    spec = get_preset(cfg.model.preset)
    _print_params(cfg.model.preset)
    vol = _volume_from_config(cfg)
    vol, scale = normalize(vol)
    patches = extract_patches(vol, cfg.patch.size, cfg.patch.stride, analytic=spec.domain == "complex")
    sets = split_patches(patches, cfg.split, vol.shape[0])
    if sets.get("train") is None or sets.get("val") is None:
        raise DataError("the split leaves no train or validation patches; use a larger volume or other fractions")
    print(f"patches train={len(sets['train'])} val={len(sets['val'])}")

    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "config.json"), "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
    result = multi_seed(spec, sets, cfg.train, workers=args.workers, out_dir=args.out_dir)
    summary = {
        "preset": cfg.model.preset,
        "seeds": list(cfg.train.seeds),
        "best_val_mse": {str(r.seed): r.best_val for r in result.logs if not r.aborted},
        "mean": result.mean,
        "std": result.std,
        "aborted": result.aborted,
        "scale": scale,
    }
    with open(os.path.join(args.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"val_mse={result.summary()} over {len(result.models)} run(s)")
    if not result.models:
        raise NumericError("every training run diverged")
    return EXIT_OK


def cmd_eval(args):
    model = load_weights(args.weights)
    section = _load_array(args.input, "section")
    if section.ndim == 3 and section.shape[0] == 1:
        section = section[0]
    if section.ndim != 2:
        raise DataError(f"{args.input}: expected a 2D (traces, time) section, got shape {section.shape}")
    regions = load_regions(args.regions) if args.regions else []
    report, recon = evaluate_model(model, section, regions)
    fk_rep = fk_report(section, recon, args.dt, args.dx, args.fk_split_hz)
    write_report(args.out, report, fk_rep)
    save_npy(os.path.join(args.out, "reconstruction.npy"), recon)
    for name, r, m in report.rows():
        print(f"{name} rms={r:.6g} mae={m:.6g}")
    return EXIT_OK


def cmd_aliasing(args):
    data = _load_array(args.input, "trace")
    trace = np.squeeze(data)
    if trace.ndim != 1:
        raise DataError(f"{args.input}: expected a single trace, got shape {data.shape}")
    try:
        windows = [int(w) for w in args.windows.split(",") if w.strip()]
    except ValueError as exc:
        raise ConfigError(f"--windows must be comma-separated integers: {exc}") from exc
    if not windows:
        raise ConfigError("--windows needs at least one size")
    records = dc_aliasing_profile(Trace(trace, args.dt), windows)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_size", "n_windows", "mean_abs_dc", "spectrum_near_zero"])
        for r in records:
            writer.writerow([r.window_size, r.n_windows, repr(r.mean_abs_dc), repr(r.spectrum_near_zero)])
    for r in records:
        print(f"window={r.window_size} mean_abs_dc={r.mean_abs_dc:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="cxseis", description="Complex-valued seismic auto-encoders.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic seismic volume")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output .npy path")
    p.add_argument("--seed", type=int, help="override data.synth.seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("hilbert", help="per-trace analytic signal of a volume")
    p.add_argument("--in", dest="input", required=True, help="input .npy volume (time on the last axis)")
    p.add_argument("--out-re", required=True, help="output .npy for the demeaned real part")
    p.add_argument("--out-im", required=True, help="output .npy for the quadrature")
    p.set_defaults(func=cmd_hilbert)

    p = sub.add_parser("train", help="train one model per seed")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out-dir", required=True, help="directory for seed_<k>/ outputs")
    p.add_argument("--model", choices=sorted(PUBLISHED_COUNTS), help="override model.preset")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--seeds", help="override train.seeds, comma separated")
    p.add_argument("--workers", type=int, help="parallel runs (default: CXSEIS_WORKERS or all cores)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on a section")
    p.add_argument("--weights", required=True, help="weight container written by train")
    p.add_argument("--in", dest="input", required=True, help="2D (traces, time) section .npy")
    p.add_argument("--regions", help="JSON list of {name, traces: [start, stop], times: [start, stop]}")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--dt", type=float, default=0.004, help="sample interval in seconds")
    p.add_argument("--dx", type=float, default=25.0, help="trace spacing in metres")
    p.add_argument("--fk-split-hz", type=float, default=50.0, help="band split for FK energy ratios")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="parameter counts of a preset")
    p.add_argument("--model", required=True, choices=sorted(PUBLISHED_COUNTS))
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("aliasing", help="windowed DC offset versus window size")
    p.add_argument("--in", dest="input", required=True, help="1D trace .npy")
    p.add_argument("--windows", required=True, help="comma-separated window sizes, e.g. 101,256")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--dt", type=float, default=0.004, help="sample interval in seconds")
    p.set_defaults(func=cmd_aliasing)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
