"""Command line entry point: ``compact-maxwell <verb> [flags]``."""
from __future__ import annotations

import argparse
import ast
import json
import math
import operator
import sys
from pathlib import Path

from .datadriven import OptimizerSettings, TrainResult, train
from .harness import (
    SweepSpec,
    run_cfl_sweep,
    run_convergence_study,
    run_single,
    run_wavenumber_sweep,
    write_csv,
    write_plot_data,
)
from .schemes import CFL_DEFAULT, ConfigurationError, RunConfig, StencilParams

SQRT2 = math.sqrt(2.0)

VERB_DEFAULTS = {
    "converge": {"N": 64, "T": 1 / SQRT2, "schemes": ["c4", "nc"],
                 "values": [16, 32, 64, 128, 256]},
    "cfl-sweep": {"N": 64, "T": 4 / SQRT2, "schemes": ["c4", "nc"],
                  "values": [k / (6 * SQRT2) for k in range(1, 6)] + [1 / SQRT2]},
    "k-sweep": {"N": 64, "T": 4 / SQRT2, "schemes": ["c4", "nc"],
                "values": [2, 5, 10, 15, 21, 30, 40, 50]},
    "run": {"N": 64, "T": 1 / SQRT2},
    "train-stencil": {"r": CFL_DEFAULT, "T": 1.0},
}

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg}


def parse_number(text) -> float:
    """A float or a small arithmetic expression such as ``5/(6*sqrt(2))``."""
    if isinstance(text, (int, float)):
        return float(text)

    def ev(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id == "sqrt" and len(node.args) == 1):
            return math.sqrt(ev(node.args[0]))
        raise ValueError(f"not a number: {text!r}")

    return ev(ast.parse(str(text), mode="eval").body)


def _number_list(text):
    if isinstance(text, list):
        return [parse_number(v) for v in text]
    return [parse_number(v) for v in str(text).split(",") if v.strip()]


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with defaults; flags take precedence")
    p.add_argument("--N", type=int)
    p.add_argument("--r", type=parse_number)
    p.add_argument("--T", type=parse_number)
    p.add_argument("--Z", type=parse_number)
    p.add_argument("--kx", type=int)
    p.add_argument("--ky", type=int)
    p.add_argument("--cg-tol", dest="cg_tol", type=float)
    p.add_argument("--cg-max-iter", dest="cg_max_iter", type=int)
    p.add_argument("--params", help="trained stencil JSON (for scheme 'ai')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compact-maxwell", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("converge", "grid convergence study over N"),
                        ("cfl-sweep", "error against the CFL number r"),
                        ("k-sweep", "error against the wavenumber kx = ky")):
        p = sub.add_parser(verb, help=help_)
        _add_run_flags(p)
        p.add_argument("--schemes", help="comma separated: c4,nc,yee,ai")
        p.add_argument("--values", help="comma separated sweep values")
        p.add_argument("--out", help="CSV output path (stdout if omitted)")
        p.add_argument("--plot-data", dest="plot_data", help="x/y series CSV")
    p = sub.add_parser("run", help="single run with field dumps")
    _add_run_flags(p)
    p.add_argument("--scheme")
    p.add_argument("--out-dir", dest="out_dir", default="run_output")
    p.add_argument("--dump-every", dest="dump_every", type=int, default=0)
    p.add_argument("--zero-init", dest="zero_init", action="store_true")
    p = sub.add_parser("train-stencil", help="fit the stencil parameters (a, b, d)")
    p.add_argument("--config")
    p.add_argument("--r", type=parse_number)
    p.add_argument("--T", type=parse_number)
    p.add_argument("--Z", type=parse_number)
    p.add_argument("--iterations", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--gradient", choices=("central", "forward"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="stencil.json")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Verb defaults, then the JSON config file, then explicit flags."""
    opts = dict(VERB_DEFAULTS.get(args.verb, {}))
    if getattr(args, "config", None):
        try:
            opts.update(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise SystemExit(f"cannot read config {args.config}: {exc}")
    for k, v in vars(args).items():
        if k in ("verb", "config") or v is None:
            continue
        opts[k] = v
    return opts


def _run_config(opts: dict, scheme: str = "c4") -> RunConfig:
    kw = {k: opts[k] for k in ("N", "r", "T", "Z", "kx", "ky", "cg_tol", "cg_max_iter") if k in opts}
    for k in ("r", "T", "Z"):
        if k in kw:
            kw[k] = parse_number(kw[k])
    params = None
    if opts.get("params"):
        params = TrainResult.load(opts["params"]).params
    elif all(k in opts for k in ("a", "b", "d")):
        params = StencilParams(float(opts["a"]), float(opts["b"]), float(opts["d"]))
    return RunConfig(scheme=opts.get("scheme", scheme), params=params, **kw)


def _sweep(verb: str, opts: dict) -> int:
    axis = {"converge": "N", "cfl-sweep": "r", "k-sweep": "k"}[verb]
    schemes = opts["schemes"]
    if isinstance(schemes, str):
        schemes = [s.strip() for s in schemes.split(",") if s.strip()]
    values = _number_list(opts["values"])
    if axis != "r":
        values = [int(v) for v in values]
    spec = SweepSpec(axis, values, schemes, _run_config(opts))
    runner = {"N": run_convergence_study, "r": run_cfl_sweep, "k": run_wavenumber_sweep}[axis]
    rows = runner(spec)
    text = write_csv(rows, opts.get("out"))
    if not opts.get("out"):
        sys.stdout.write(text)
    if opts.get("plot_data"):
        write_plot_data(rows, axis, opts["plot_data"])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = resolve(args)
        if args.verb in ("converge", "cfl-sweep", "k-sweep"):
            return _sweep(args.verb, opts)
        if args.verb == "run":
            cfg = _run_config(opts)
            status = run_single(cfg, opts["out_dir"], bool(opts.get("zero_init")),
                                int(opts.get("dump_every", 0)))
            print(Path(opts["out_dir"]) / "manifest.json")
            return status
        settings = OptimizerSettings(**{k: opts[k] for k in
                                        ("iterations", "step_size", "gradient", "seed") if k in opts})
        res = train(parse_number(opts["r"]), parse_number(opts["T"]),
                    parse_number(opts.get("Z", 1.0)), settings=settings)
        res.save(opts["out"])
        p = res.params
        print(f"a={p.a:.6g} b={p.b:.6g} c={p.c:.6g} d={p.d:.6g} "
              f"loss {res.loss_trace[0]:.6g} -> {res.loss_trace[-1]:.6g}; wrote {opts['out']}")
        return 0
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
