"""Command line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline, tensorio
from .errors import ConfigError, DataError, NumericalError
from .gram import damped_hessian
from .metrics import bd_error_correlation, bd_score, binarization_error, mixed_ensemble

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="binprune", description="Progressive binarization with N:M pruning for toy layer stacks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("quantize", help="compress a model and write report.json plus packed factors")
    q.add_argument("--model", required=True, help="model manifest JSON")
    q.add_argument("--calib", required=True, help="PBT1 calibration tensor (B, L, m)")
    q.add_argument("--config", help="RunConfig JSON; defaults when omitted")
    q.add_argument("--out", required=True)
    q.add_argument("--no-plots", action="store_true")
    q.add_argument("--dump-hessian", action="store_true", help="also write S and H of every layer as PBT1")

    s = sub.add_parser("sweep", help="total error per N:M ratio, written to sweep.csv")
    s.add_argument("--model", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--config")
    s.add_argument("--ratios", default="8:8,7:8,6:8,5:8,4:8")
    s.add_argument("--out", required=True)
    s.add_argument("--no-plots", action="store_true")

    b = sub.add_parser("bd-score", help="BD score vs binarization error over an ensemble")
    b.add_argument("--ensemble", required=True,
                   help="JSON file, 'default', or key=value list (count, seed, n, m)")
    b.add_argument("--out", help="directory for bd.csv and bd.png")
    b.add_argument("--no-plots", action="store_true")

    e = sub.add_parser("eval", help="hidden-state MSE of a quantized model against full precision")
    e.add_argument("--model", required=True)
    e.add_argument("--quantized", required=True, help="quantized output directory or its model.json")
    e.add_argument("--inputs", required=True, help="PBT1 inputs (count, m) or (B, L, m)")
    e.add_argument("--out", help="write metrics JSON here as well")

    g = sub.add_parser("synth", help="write a seeded synthetic model, calibration and held-out inputs")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--distribution", default="student-t", choices=tensorio.DISTRIBUTIONS)
    g.add_argument("--df", type=float, default=3.0)
    g.add_argument("--batches", type=int, default=4)
    g.add_argument("--length", type=int, default=64)
    g.add_argument("--channel-spread", type=float, default=1.0)
    return parser


def _config(path):
    return pipeline.RunConfig.from_json(path) if path else pipeline.RunConfig()


def _load_model(path):
    manifest = tensorio.load_manifest(path)
    return manifest, manifest.load_weights()


def _load_calib(path):
    calib = tensorio.load_array(path)
    if calib.ndim != 3:
        raise DataError(f"calibration must be (B, L, m), got {calib.shape}")
    return calib


def cmd_quantize(args):
    cfg = _config(args.config)
    manifest, weights = _load_model(args.model)
    calib = _load_calib(args.calib)
    names = [l.name for l in manifest.layers]
    qm = pipeline.quantize_model(weights, calib, cfg, names, manifest.meta)
    out = tensorio.ensure_dir(args.out)
    report = pipeline.build_report(qm)
    pipeline.dump_json(report, out / "report.json")
    pipeline.save_quantized(qm, out / "quantized")
    if args.dump_hessian:
        for layer in qm.layers:
            tensorio.save_array(out / "quantized" / layer.name / "S.pbt", layer.S, "f64")
            tensorio.save_array(out / "quantized" / layer.name / "H.pbt", damped_hessian(layer.S, cfg.damping).H, "f64")
    if not args.no_plots:
        from .plotting import plot_layer_errors

        plot_layer_errors(report, out / "layers.png")
    print(json.dumps({"report": str(out / "report.json"), "avg_bits": report["avg_bits"]}))
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args.config)
    ratios = pipeline.parse_ratios(args.ratios)
    manifest, weights = _load_model(args.model)
    calib = _load_calib(args.calib)
    rows = pipeline.sweep(weights, calib, cfg, ratios, [l.name for l in manifest.layers], manifest.meta)
    out = tensorio.ensure_dir(args.out)
    (out / "sweep.csv").write_text(pipeline.sweep_csv(rows))
    if not args.no_plots:
        from .plotting import plot_sweep

        plot_sweep(rows, out / "sweep.png")
    sys.stdout.write(pipeline.sweep_csv(rows))
    return EXIT_OK


def _ensemble_params(spec):
    params = {"count": 60, "seed": 0, "n": 16, "m": 64}
    if spec == "default":
        return params
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        try:
            raw = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read ensemble spec {spec}: {exc}") from exc
    else:
        try:
            raw = dict(item.split("=", 1) for item in spec.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad ensemble spec {spec!r}") from exc
    unknown = set(raw) - set(params)
    if unknown:
        raise ConfigError(f"unknown ensemble fields {sorted(unknown)}")
    params.update({k: int(v) for k, v in raw.items()})
    return params


def cmd_bd_score(args):
    params = _ensemble_params(args.ensemble)
    matrices = mixed_ensemble(**params)
    rho = bd_error_correlation(matrices)
    bd = [bd_score(W) for W in matrices]
    err = [binarization_error(W) for W in matrices]
    if args.out:
        out = tensorio.ensure_dir(args.out)
        lines = ["index,bd,l1"] + [f"{i},{a:.10e},{b:.10e}" for i, (a, b) in enumerate(zip(bd, err))]
        (out / "bd.csv").write_text("\n".join(lines) + "\n")
        if not args.no_plots:
            from .plotting import plot_bd_scatter

            plot_bd_scatter(bd, err, rho, out / "bd.png")
    print(json.dumps({"spearman": rho, "count": len(matrices)}))
    return EXIT_OK


def cmd_eval(args):
    manifest, weights = _load_model(args.model)
    qpath = Path(args.quantized)
    qmanifest, qweights = pipeline.load_quantized(qpath)
    if [(l.n, l.m) for l in manifest.layers] != [(l.n, l.m) for l in qmanifest.layers]:
        raise DataError("quantized manifest does not mirror the model manifest")
    inputs = tensorio.load_array(args.inputs)
    metrics = pipeline.evaluate(weights, qweights, inputs, manifest.meta)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_synth(args):
    spec = tensorio.SyntheticSpec(
        seed=args.seed, distribution=args.distribution, n=args.dim, m=args.dim,
        b_count=args.batches, l=args.length, df=args.df, layers=args.layers,
        channel_spread=args.channel_spread,
    )
    paths = tensorio.write_synthetic_model(spec, args.out)
    print(json.dumps({"model": str(paths[0]), "calib": str(paths[1]), "inputs": str(paths[2])}))
    return EXIT_OK


COMMANDS = {
    "quantize": cmd_quantize,
    "sweep": cmd_sweep,
    "bd-score": cmd_bd_score,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def run():
    sys.exit(main())
