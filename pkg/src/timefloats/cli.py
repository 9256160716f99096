"""``timefloats`` command line: mac, sweep, energy, train, encode.

Configuration is layered as built-in defaults, then a JSON file (``--config``
or ``$TIMEFLOATS_CONFIG``), then ``--set section.key=value``, then the
dedicated flags of each command. Every report starts with a header carrying
the resolved config hash, seed and version.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

from . import config as cfgmod
from . import energy as en
from . import montecarlo as mc
from . import training as tr
from .fp8 import ROUNDINGS, Fp8, Fp8Error, decode, encode, oracle_dot
from .pipeline import PipelineError, mac


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def parse_operand(token: str, rounding: str = "truncate") -> Fp8:
    """``s:e:m`` code or a decimal literal encoded with ``rounding``."""
    token = token.strip()
    if ":" in token:
        return Fp8.parse(token)
    try:
        value = float(token)
    except ValueError:
        raise Fp8Error(f"not a number or s:e:m code: {token!r}") from None
    return encode(value, rounding)


def parse_operands(text: str, flag: str, rounding: str) -> list[Fp8]:
    out = []
    for pos, token in enumerate(text.split(","), start=1):
        try:
            out.append(parse_operand(token, rounding))
        except Fp8Error as exc:
            raise CliError(f"{flag} token {pos} {token.strip()!r}: {exc}") from None
    return out


def parse_floats(text: str, flag: str) -> list[float]:
    out = []
    for pos, token in enumerate(text.split(","), start=1):
        try:
            out.append(float(token))
        except ValueError:
            raise CliError(f"{flag} token {pos} {token.strip()!r}: not a number") from None
    return out


def parse_list(text: str, flag: str, allowed) -> list[str]:
    out = []
    for pos, token in enumerate(text.split(","), start=1):
        token = token.strip()
        if token not in allowed:
            raise CliError(f"{flag} token {pos} {token!r}: expected one of {', '.join(allowed)}")
        out.append(token)
    return out


def resolve(args, overrides: dict | None = None) -> cfgmod.RunConfig:
    layered = cfgmod.parse_set(args.set)
    for section, values in (overrides or {}).items():
        layered.setdefault(section, {}).update(values)
    return cfgmod.load(args.config, layered)


def _emit(text: str, path: str | None = None):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rel_err(value: float, ref: float) -> float:
    return abs(value - ref) / abs(ref) if ref else abs(value)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_mac(args) -> int:
    x = parse_operands(args.x, "--x", args.rounding)
    w = parse_operands(args.w, "--w", args.rounding)
    if len(x) != len(w):
        raise CliError(f"--x has {len(x)} operands but --w has {len(w)}")
    var = {}
    if args.sigma_exp is not None:
        var["sigma_exponent"] = args.sigma_exp
    if args.sigma_man is not None:
        var["sigma_mantissa"] = args.sigma_man
    if args.seed is not None:
        var["seed"] = args.seed
    cfg = resolve(args, {"variability": var} if var else None)
    vm = cfg.variability
    trace = mac(x, w, cfg.pipeline, vm, cfg.analog, cfg.energy)
    ref = oracle_dot(x, w)
    out_value = decode(trace.output)
    h = cfgmod.header(cfg, "mac", vm.seed, {"rounding": args.rounding})
    report = {
        "header": h,
        "x": [str(a) for a in x],
        "w": [str(b) for b in w],
        "trace": trace.to_dict(),
        "oracle": float(ref),
        "oracle_exact": str(ref),
        "output_value": out_value,
        "relative_error": _rel_err(out_value, float(ref)),
        "raw_relative_error": _rel_err(trace.raw_value, float(ref)),
    }
    if args.format == "json":
        _emit(json.dumps(report, indent=2) + "\n")
    else:
        _emit(cfgmod.header_lines(h) + format_trace(report))
    return 0


def format_trace(report: dict) -> str:
    t = report["trace"]
    rows = [
        ("x", " ".join(report["x"])),
        ("w", " ".join(report["w"])),
        ("exponent sums", " ".join(map(str, t["exponent_sums"]["sums"]))),
        ("valid", "".join("1" if v else "0" for v in t["exponent_sums"]["valid_mask"])),
        ("e_max", str(t["e_max"])),
        ("e_max id", str(t["e_max_id"])),
        ("shifts", " ".join(map(str, t["shifts"]))),
        ("scaled mantissas", " ".join(map(str, t["scaled_mantissas"]))),
        ("psum +", str(t["psum_pos"])),
        ("psum -", str(t["psum_neg"])),
        ("raw value", repr(t["raw_value"])),
        ("output", f"{t['output']} ({report['output_value']!r})"),
        ("oracle", f"{report['oracle']!r} ({report['oracle_exact']})"),
        ("relative error", f"{report['relative_error']:.6g}"),
        ("energy", f"{sum(e for _, e in t['step_energies']) * 1e12:.3f} pJ"),
    ]
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k.ljust(width)} : {v}\n" for k, v in rows)


def cmd_sweep(args) -> int:
    sigmas = parse_floats(args.sigma, "--sigma")
    for pos, s in enumerate(sigmas, start=1):
        if s < 0:
            raise CliError(f"--sigma token {pos} {s!r}: sigma must be nonnegative")
    modes = parse_list(args.mode, "--mode", mc.MODES)
    var = {}
    if args.seed is not None:
        var["seed"] = args.seed
    if args.trials is not None:
        var["trials"] = args.trials
    cfg = resolve(args, {"variability": var} if var else None)
    seed, trials = cfg.variability.seed, cfg.variability.trials
    if trials < 1:
        raise CliError("--trials must be >= 1")
    workload = mc.random_workload(args.pairs, args.length, seed)
    rows = mc.sweep(sigmas, modes, workload, seed, trials, cfg.pipeline, cfg.analog, args.metric)
    extra = {"sigma": sigmas, "mode": modes, "pairs": args.pairs, "length": args.length, "metric": args.metric}
    head = cfgmod.header_lines(cfgmod.header(cfg, "sweep", seed, extra))
    _emit(head + mc.stats_to_csv(rows))
    if args.plot_data:
        _emit(head + mc.stats_to_gnuplot(rows), args.plot_data)
    return 0


def cmd_energy(args) -> int:
    overrides = {"energy": asdict(en.get_preset(args.preset))} if args.preset else None
    cfg = resolve(args, overrides)
    table = cfg.energy.only(args.zero_all_but) if args.zero_all_but else cfg.energy
    if args.n < 1:
        raise CliError("--n must be >= 1")
    report = en.energy_report(args.n, table)
    extra = {"n": args.n, "preset": args.preset, "zero_all_but": args.zero_all_but}
    h = cfgmod.header(cfg, "energy", 0, extra)
    if args.format == "json":
        _emit(json.dumps({"header": h, "report": report}, indent=2) + "\n")
    else:
        _emit(cfgmod.header_lines(h) + en.format_report(report))
    return 0


def cmd_train(args) -> int:
    if args.epochs < 1:
        raise CliError("--epochs must be >= 1")
    if args.hidden < 1:
        raise CliError("--hidden must be >= 1")
    var = {"seed": args.seed}
    if args.sigma is not None:
        var["sigma_exponent"] = var["sigma_mantissa"] = args.sigma
    cfg = resolve(args, {"variability": var})
    X, y = tr.two_moons()
    net = tr.Mlp.init([2, args.hidden, 1], seed=args.seed, learning_rate=args.lr)
    records = tr.train(
        net, X, y, args.epochs, args.engine, cfg.pipeline, cfg.analog, cfg.variability, cfg.energy, seed=args.seed
    )
    extra = {"engine": args.engine, "epochs": args.epochs, "lr": args.lr, "hidden": args.hidden}
    head = cfgmod.header_lines(cfgmod.header(cfg, "train", args.seed, extra))
    last = records[-1]
    summary = (
        f"# final epoch={last.epoch} accuracy={last.accuracy:.6g} loss={last.loss:.10g}"
        f" energy_J={last.total_energy:.10g} mac_count={last.mac_count}\n"
    )
    curves = tr.records_to_csv(records)
    if args.curves:
        _emit(head + curves, args.curves)
        _emit(head + summary)
    else:
        _emit(head + curves + summary)
    if args.weights:
        _emit(net.weights_json(), args.weights)
    return 0


def cmd_encode(args) -> int:
    cfg = resolve(args)
    rows = []
    for pos, token in enumerate(args.tokens, start=1):
        try:
            a = parse_operand(token, args.rounding)
        except Fp8Error as exc:
            raise CliError(f"token {pos} {token!r}: {exc}") from None
        rows.append(
            {
                "input": token,
                "code": str(a),
                "word": f"0x{a.word:02x}",
                "value": decode(a),
                "exact": str(a.to_fraction()),
            }
        )
    h = cfgmod.header(cfg, "encode", 0, {"rounding": args.rounding})
    if args.format == "json":
        _emit(json.dumps({"header": h, "codes": rows}, indent=2) + "\n")
        return 0
    table = [("input", "code", "word", "value", "exact")]
    table += [(r["input"], r["code"], r["word"], repr(r["value"]), r["exact"]) for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(5)]
    lines = ["  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    _emit(cfgmod.header_lines(h) + "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# argument parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${cfgmod.CONFIG_ENV})")
    common.add_argument(
        "--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config field"
    )

    p = argparse.ArgumentParser(prog="timefloats", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mac", parents=[common], help="evaluate one scalar product with a full trace")
    m.add_argument("--x", required=True, help="comma-separated inputs (s:e:m or decimal)")
    m.add_argument("--w", required=True, help="comma-separated weights (s:e:m or decimal)")
    m.add_argument("--rounding", choices=ROUNDINGS, default="truncate")
    m.add_argument("--sigma-exp", type=float, help="relative sigma of the exponent path")
    m.add_argument("--sigma-man", type=float, help="relative sigma of the mantissa path")
    m.add_argument("--seed", type=int)
    m.add_argument("--format", choices=("json", "text"), default="json")
    m.set_defaults(func=cmd_mac)

    s = sub.add_parser("sweep", parents=[common], help="Monte Carlo variability sweep (CSV)")
    s.add_argument("--sigma", default="0,0.02,0.05,0.1,0.2", help="comma-separated sigma list")
    s.add_argument("--mode", default=",".join(mc.MODES), help="comma-separated modes")
    s.add_argument("--pairs", type=int, default=100)
    s.add_argument("--length", type=int, default=64)
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--metric", choices=mc.METRICS, default="raw")
    s.add_argument("--plot-data", metavar="PATH", help="also write a gnuplot data file")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("energy", parents=[common], help="per-step energy and efficiency report")
    e.add_argument("--n", type=int, default=en.REFERENCE_LENGTH, help="vector length")
    e.add_argument("--preset", choices=sorted(en.PRESETS))
    e.add_argument("--zero-all-but", choices=sorted(en.STEP_ALIASES), help="keep a single step")
    e.add_argument("--format", choices=("text", "json"), default="text")
    e.set_defaults(func=cmd_energy)

    t = sub.add_parser("train", parents=[common], help="train a small MLP on the two-moons set")
    t.add_argument("--engine", choices=tr.ENGINES, default="float_ref")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--sigma", type=float, help="relative sigma for both analog paths")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=0.5)
    t.add_argument("--hidden", type=int, default=16)
    t.add_argument("--curves", metavar="PATH", help="write the CSV curves here")
    t.add_argument("--weights", metavar="PATH", help="write the final quantized weights as JSON")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("encode", parents=[common], help="inspect FP8 codes")
    c.add_argument("tokens", nargs="+", help="s:e:m codes or decimal values")
    c.add_argument("--rounding", choices=ROUNDINGS, default="truncate")
    c.add_argument("--format", choices=("text", "json"), default="text")
    c.set_defaults(func=cmd_encode)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, cfgmod.ConfigError, Fp8Error, PipelineError, ValueError, OSError) as exc:
        print(f"timefloats {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
