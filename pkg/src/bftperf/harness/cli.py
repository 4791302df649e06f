"""Command line entry point: ``bftperf {simulate,model,sweep,preset,compare}``."""

import argparse
import json
import logging
import sys

from ..config import SimConfig
from ..engine import format_trace, run
from ..errors import ConfigError, SimulationError
from ..protocols import HOTSTUFF, IBFT
from ..model import predict, predict_improved
from .presets import DEFAULTS, get_preset, preset_names, run_preset
from .series import export_csv, write_csv
from .sweep import VARIABLES, find_crossover, model_params, ratio_series, run_sweep, tail_slope

log = logging.getLogger("bftperf")

# flag name -> (SimConfig field, type)
_OVERRIDES = {
    "protocol": ("protocol", str), "topology": ("topology", str),
    "topo_params": ("topo_params", None), "n": ("n", int), "n_f": ("n_f", int),
    "tau0": ("tau0", float), "rv": ("rv", float), "rs": ("rs", float),
    "validator_dist": ("validator_dist", str), "switch_dist": ("switch_dist", str),
    "seed": ("seed", int), "instances": ("instances", int), "chains": ("chains", int),
    "leader_policy": ("leader_policy", str), "warmup": ("warmup", int),
}


def _config_args(p):
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", metavar="PATH", help="JSON file with SimConfig fields")
    g.add_argument("--seed", type=int, metavar="U64")
    g.add_argument("--instances", type=int, metavar="N")
    g.add_argument("--protocol", choices=(HOTSTUFF, IBFT))
    g.add_argument("--topology", help="clique, folded_clos (fc) or dragonfly (df)")
    g.add_argument("--topo-params", dest="topo_params", help="comma list, e.g. 8,4")
    g.add_argument("--n", type=int)
    g.add_argument("--n-f", dest="n_f", type=int)
    g.add_argument("--tau0", type=float)
    g.add_argument("--rv", type=float)
    g.add_argument("--rs", type=float)
    g.add_argument("--validator-dist", dest="validator_dist")
    g.add_argument("--switch-dist", dest="switch_dist")
    g.add_argument("--chains", type=int)
    g.add_argument("--leader-policy", dest="leader_policy", choices=("rotation", "random"))
    g.add_argument("--warmup", type=int)


def load_config(args):
    cfg = SimConfig.load(args.config) if getattr(args, "config", None) else SimConfig()
    kw = {}
    for flag, (name, _typ) in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag == "topo_params":
            v = tuple(int(x) for x in str(v).split(",") if x.strip())
        kw[name] = v
    return cfg.with_(**kw) if kw else cfg


def parse_values(text):
    """``a,b,c`` or ``start:stop:step`` (stop inclusive)."""
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError(f"range must be start:stop:step with step > 0, got {text!r}")
        start, stop, step = parts
        out, i = [], 0
        while start + i * step <= stop + 1e-9 * abs(step):
            out.append(start + i * step)
            i += 1
    else:
        out = [float(x) for x in text.split(",") if x.strip()]
    return [int(v) if float(v).is_integer() else v for v in out]


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _header(cfg=None):
    print("# defaults: " + " ".join(f"{k}={v}" for k, v in DEFAULTS.items()))
    if cfg is not None:
        print("# config: " + json.dumps(cfg.to_dict(), sort_keys=True))


def cmd_simulate(args):
    cfg = load_config(args).validate()
    _header(cfg)
    res = run(cfg, backend=args.backend, trace=bool(args.trace))
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("\n".join(format_trace(res.trace)) + "\n")
    _emit({"mean": res.mean, "instances": res.count, "chains": res.chains,
           "end_time": res.end_time, "events": res.events, "backend": res.backend,
           "divergent": res.divergent, "subquorum": res.subquorum}, args.out)
    return 0


def _prediction_dict(pr):
    return {"expected_time": pr.expected_time, "t3": pr.t3, "tail": pr.tail,
            "round_change": pr.round_change, "q": pr.q, "tau0_star": pr.tau0_star}


def cmd_model(args):
    cfg = load_config(args).validate()
    _header(cfg)
    p = model_params(cfg)
    out = {"model": _prediction_dict(predict(p))}
    imp = predict_improved(p)
    if imp is not None:
        out["improved"] = _prediction_dict(imp)
    _emit(out, args.out)
    return 0


def _sweep_common(p):
    p.add_argument("--variable", required=True, choices=VARIABLES + ("chains",))
    p.add_argument("--values", required=True, help="a,b,c or start:stop:step")
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)


def _write_series(series, out):
    if out:
        export_csv(series, out)
    else:
        write_csv(series, sys.stdout)


def cmd_sweep(args):
    cfg = load_config(args)
    _header(cfg)
    s = run_sweep(cfg, args.variable, parse_values(args.values), replications=args.replications,
                  workers=args.workers, backend=args.backend)
    for w in s.warnings:
        print(f"# warning: {w}")
    _write_series([s], args.out)
    return 0


def _stats(series, variable, window):
    lines = []
    for s in series:
        errs = [e for e in s.relative_errors() if e is not None]
        if errs:
            lines.append(f"# {s.label or 'series'}: max |sim/model - 1| = {max(map(abs, errs)):.4f}")
        if variable == "tau0" and len(s) >= 3:
            try:
                lines.append(f"# {s.label}: tail slope = {tail_slope(s, window):.6g}")
            except ValueError as exc:
                lines.append(f"# {s.label}: tail slope unavailable ({exc})")
    by = {s.label: s for s in series}
    if variable == "rs" and HOTSTUFF in by and IBFT in by:
        x = find_crossover(by[HOTSTUFF], by[IBFT])
        lines.append("# crossover rs = " + ("none" if x is None else f"{x:.6g}"))
    return lines


def cmd_compare(args):
    cfg = load_config(args)
    _header(cfg)
    protos = [x.strip() for x in args.protocols.split(",") if x.strip()]
    values = parse_values(args.values)
    series = [run_sweep(cfg.with_(protocol=pr), args.variable, values,
                        replications=args.replications, workers=args.workers,
                        backend=args.backend, label=pr) for pr in protos]
    window = None
    if args.window:
        lo, hi = (float(x) if x else None for x in args.window.split(":"))
        window = (lo, hi)
    for line in _stats(series, series[0].variable if series else args.variable, window):
        print(line)
    _write_series(series, args.out)
    return 0


def cmd_preset(args):
    if args.list or not args.name:
        for name in preset_names():
            print(f"{name:8s} {get_preset(name).title}")
        return 0
    pr = get_preset(args.name)
    header = pr.config_log()
    print("\n".join(header))
    if args.out:
        with open(args.out + ".config.txt", "w") as fh:
            fh.write("\n".join(header) + "\n")
    _, series = run_preset(args.name, instances=args.instances, seed=args.seed,
                           replications=args.replications, workers=args.workers,
                           backend=args.backend)
    for s in series:
        for w in s.warnings:
            print(f"# warning: {w}")
    if pr.kind == "ratio" and len(series) == 2:
        ratio = ratio_series(series[0], series[1], label="ratio")
        for p in ratio.points:
            print(f"# ratio {pr.variable}={p.value}: sim {p.sim_mean:.6g} model {p.model:.6g}")
        series = series + [ratio]
    for line in _stats(series, pr.variable, None):
        print(line)
    if pr.kind == "crossover":
        labels = [lab for lab, _ in pr.curves]
        groups = {}
        for lab, s in zip(labels, series):
            topo, _, proto = lab.rpartition("/")
            groups.setdefault(topo, {})[proto] = s
        for topo, g in groups.items():
            if topo and HOTSTUFF in g and IBFT in g:
                x = find_crossover(g[HOTSTUFF], g[IBFT])
                print(f"# crossover {topo}: " + ("none" if x is None else f"{x:.6g}"))
    _write_series(series, args.out)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="bftperf", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--backend", choices=("auto", "kernel", "python"), default="auto")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="run one configuration")
    _config_args(p)
    p.add_argument("--out", metavar="PATH", help="write the JSON summary here")
    p.add_argument("--trace", metavar="PATH", help="write the per-message trace here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("model", help="closed-form prediction only")
    _config_args(p)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("sweep", help="sweep one variable, simulation and model")
    _config_args(p)
    _sweep_common(p)
    p.add_argument("--out", metavar="PATH", help="CSV output (stdout if omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="sweep several protocols and report crossover/slope")
    _config_args(p)
    _sweep_common(p)
    p.add_argument("--protocols", default=f"{HOTSTUFF},{IBFT}")
    p.add_argument("--window", help="tau0 fit window lo:hi for the tail slope")
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("preset", help="run a figure preset")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--instances", type=int, metavar="N")
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_preset)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SimulationError, OSError) as exc:
        print(f"bftperf: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
