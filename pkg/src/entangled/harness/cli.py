"""Command-line entry point: ``entangled <subcommand> [flags]``.

Exit codes: 0 success, 1 invariant/assertion failure, 2 bad usage or config.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import checks, entangle, formats, refine
from ..blocks import BlockError
from ..entangle import EntanglementSpec, SpecError
from .config import ConfigError, ExperimentConfig, load

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
log = logging.getLogger("entangled")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting so ``main`` owns exit codes."""

    def error(self, message):
        raise UsageError(message)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(p):
    p.add_argument("--config", type=Path, help="experiment config file")
    p.add_argument("--seed", type=_u64, help="override seed(s) with a single seed")
    p.add_argument("--out", type=Path, help="output directory or file")
    p.add_argument("--json", action="store_true", help="machine-readable stdout")
    p.add_argument("-v", "--verbose", action="store_true")


def _spec_flags(p):
    p.add_argument("--kind", default="identity", choices=entangle.KINDS)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--kernel-size", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--spec-seed", type=_u64, default=0, help="seed for orthogonal kinds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entangled", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("make-kernel", help="write the kernel/matrix file for a spec")
    _common(p)
    _spec_flags(p)

    p = sub.add_parser("spectrum", help="print the spectrum report of a spec")
    _common(p)
    _spec_flags(p)
    p.add_argument("--plot", type=Path, help="also save a singular-value plot")

    p = sub.add_parser("train", help="single run from a config file")
    _common(p)

    p = sub.add_parser("sweep", help="entanglement x seed sweep from a config file")
    _common(p)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("refine-trace", help="refinement ratios of saved checkpoints")
    _common(p)
    p.add_argument("--checkpoint", type=Path, action="append", required=True,
                   help="checkpoint file; repeat to compare several")
    p.add_argument("--batch", type=int, default=256, help="test samples traced")

    p = sub.add_parser("check", help="run the built-in invariant suite")
    _common(p)
    p.add_argument("--perturb", action="append", default=[],
                   choices=checks.PERTURBABLE + ("all",),
                   help="add 1e-6 to one entry of the named constructor's output")
    return parser


def _spec_from_args(args) -> EntanglementSpec:
    return EntanglementSpec(args.kind, args.gamma, kernel_size=args.kernel_size,
                            channels=args.channels, dim=args.dim, seed=args.spec_seed)


def _config(args) -> ExperimentConfig:
    if args.config is None:
        raise UsageError("--config is required")
    cfg = load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.out is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.generic):
        return v.item()
    return v


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(_jsonable(payload), sort_keys=True))
    else:
        print(text)


# ---------------------------------------------------------------- commands

def cmd_make_kernel(args) -> int:
    spec = _spec_from_args(args)
    if spec.kind in entangle.CONV_KINDS and spec.channels is not None:
        array = entangle.make_conv_kernel(spec).data
    else:
        array = entangle.make_matrix(spec)
    text = formats.dump_kernel(array, spec)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_bytes(text.encode("utf-8"))
        _emit(args, {"path": str(args.out), "shape": list(array.shape)}, f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    spec = _spec_from_args(args)
    rep = entangle.spectrum_report(spec)
    if args.json:
        _emit(args, rep, "")
    else:
        for key, value in rep.items():
            if isinstance(value, list):
                value = " ".join(f"{v:.12g}" for v in value)
            print(f"{key}: {value}")
    if args.plot is not None and "singular_values" in rep:
        from ..report import plot_spectrum
        plot_spectrum(rep["singular_values"], args.plot, rep["spec"])
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    cfg = _config(args)
    out = Path(cfg.output_dir)
    results = []
    for seed in cfg.seeds:
        d = out if len(cfg.seeds) == 1 else out / f"seed{seed}"
        m = train(cfg, seed, d)
        results.append(m.summary())
        if not args.json:
            print(f"seed {seed}: status {m.status} best test acc {m.best_test_acc:.4f} "
                  f"final {m.final_test_acc:.4f} ({m.wall_time:.1f}s) -> {d}")
    if args.json:
        _emit(args, {"runs": results}, "")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from ..report import plot_curves, plot_summary
    from .sweep import sweep

    cfg = _config(args)
    out = Path(cfg.output_dir)
    cells, rows = sweep(cfg, out_dir=out, jobs=max(1, args.jobs))
    plot_summary(rows, out / "summary.png", title=f"{cfg.model} on {cfg.task}")
    plot_curves(cells, out / "curves.png")
    if args.json:
        _emit(args, {"summary": rows, "out": str(out)}, "")
    else:
        for r in rows:
            print(f"{r['spec']:<40} {r['mean_acc']:.4f} +- {r['std_acc']:.4f} "
                  f"(n={r['n_seeds']}, failures={r['failures']})")
        print(f"wrote {out / 'summary.csv'}")
    return EXIT_OK


def cmd_refine_trace(args) -> int:
    from ..report import plot_refinement
    from .data import gen_dataset
    from .models import model_from_checkpoint

    seed = 0 if args.seed is None else args.seed
    traces = {}
    for path in args.checkpoint:
        try:
            blocks, tensors, meta = formats.load_checkpoint(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read checkpoint {path}: {exc}") from None
        family = meta.get("model", "")
        if family not in ("res_mlp", "res_cnn"):
            raise UsageError(f"refine-trace needs a res_mlp or res_cnn checkpoint, got {family!r}")

        def opt(key):
            v = meta.get(key, "-")
            return None if v == "-" else int(v)

        data = gen_dataset(meta["task"], seed, opt("n_train"), opt("n_test"))
        model = model_from_checkpoint(family, blocks, tensors)
        batch = model.features(data.test.x[:args.batch])
        label = f"{Path(path).parent.name}/{Path(path).stem}"
        if label in traces:
            raise UsageError(f"checkpoint {path} given twice")
        traces[label] = refine.trace_refinement(model.blocks, batch)
    rows = refine.refinement_report(traces)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    refine.write_report_csv(rows, out / "refinement.csv")
    plot_refinement(rows, out / "refinement.png")
    # the band is informational: k>1 box kernels can legitimately leave it
    violations = [r for r in rows if r["gamma"] < 1.0 and not _bound_ok(r)]
    if args.json:
        _emit(args, {"rows": rows, "violations": len(violations)}, "")
    else:
        for r in rows:
            print(f"{r['checkpoint']} block {r['block_index']}: plain {r['plain_ratio']:.4g} "
                  f"entangled {r['entangled_ratio']:.4g} bounds [{r['lower_bound']:.4g}, "
                  f"{r['upper_bound']:.4g}]")
        print(f"{len(violations)} rows outside the bound band; wrote {out / 'refinement.csv'}")
    return EXIT_OK


def _bound_ok(row: dict) -> bool:
    r2 = row["entangled_ratio"] ** 2
    if math.isnan(r2):
        return True
    slack = 1e-9 * max(1.0, r2)
    return row["lower_bound"] - slack <= r2 <= row["upper_bound"] + slack


def cmd_check(args) -> int:
    perturb = checks.PERTURBABLE if "all" in args.perturb else tuple(args.perturb)
    results = checks.run_checks(perturb)
    ok = checks.all_passed(results)
    if args.json:
        _emit(args, {"passed": ok, "checks": [r.__dict__ for r in results]}, "")
    else:
        for r in results:
            print(r.line())
        print("all invariants hold" if ok else "INVARIANT VIOLATION")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "make-kernel": cmd_make_kernel,
    "spectrum": cmd_spectrum,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "refine-trace": cmd_refine_trace,
    "check": cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"entangled: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, SpecError, BlockError, formats.FormatError, KeyError) as exc:
        print(f"entangled: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AssertionError, FloatingPointError) as exc:
        print(f"entangled: invariant failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
