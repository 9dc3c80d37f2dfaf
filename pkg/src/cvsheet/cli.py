"""Command-line entry point: ``cvsheet <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import ConfigError


def _vec(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(p) for p in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a vector: {text!r}") from None
    if len(vals) not in (2, 3):
        raise argparse.ArgumentTypeError("vectors take 2 or 3 components")
    return vals


def _modes(text: str) -> list[tuple[int, int]]:
    out = []
    for chunk in text.split(";"):
        parts = chunk.replace(",", " ").split()
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"mode {chunk!r}: expected two integers")
        out.append((int(parts[0]), int(parts[1])))
    return out


def _mode_disk(kmax: int) -> list[tuple[int, int]]:
    # one representative per +-xi pair
    return [(a, b) for a in range(-kmax, kmax + 1) for b in range(0, kmax + 1)
            if 0 < a * a + b * b <= kmax * kmax and (b > 0 or a > 0)]


def cmd_simulate(args) -> int:
    from .runner import run_simulate
    return run_simulate(args.config, args.out)


def cmd_dispersion(args) -> int:
    from .diagnostics import dispersion
    modes = args.modes if args.modes else _mode_disk(args.kmax)
    table = dispersion(args.v, args.hplus, args.hminus, modes, w=args.w)
    rows = table.rows()
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_stability_check(args) -> int:
    from .diagnostics import InterfaceTraces, lambda_stability
    if args.config:
        from .config import initial_state, load_scenario
        from .dynamics import Model
        try:
            sc = load_scenario(args.config)
            model = Model(sc.grid, sc.c0, tol=sc.tol, max_iter=sc.max_iter)
            state = initial_state(sc)
            snap = model.recover_fields(state.iface, state.bulk, check=True)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        rep = model.stability(snap)
        c0 = sc.c0 if args.c0 is None else args.c0
        fmax = float(np.max(np.abs(state.iface.f.values)))
    else:
        if args.v is not None:
            w = np.zeros(2) if args.w is None else np.asarray(args.w[:2])
            up, um = tuple(w + np.asarray(args.v[:2])), tuple(w - np.asarray(args.v[:2]))
        elif args.uplus is not None and args.uminus is not None:
            up, um = args.uplus, args.uminus
        else:
            print("error: give --config, --v, or both --uplus and --uminus", file=sys.stderr)
            return 2
        traces = InterfaceTraces.planar(up, um, args.hplus, args.hminus)
        rep = lambda_stability(traces)
        c0, fmax = args.c0, None
    report = {
        "lambda_min": rep.lambda_min,
        "lambda_half_velocity": rep.lambda_half_velocity,
        "worst_direction": [float(x) for x in rep.worst_direction],
        "syrovatskii": rep.syrovatskii_ok,
        "stable": rep.lambda_min > 0,
    }
    if fmax is not None:
        report["max_abs_f"] = fmax
    if c0 is not None:
        ok = rep.lambda_min >= 2 * c0 and (fmax is None or fmax <= 1 - 2 * c0)
        report["c0"] = c0
        report["gate_passed"] = bool(ok)
    print(json.dumps(report, indent=2, default=float))
    passed = report.get("gate_passed", report["stable"])
    return 0 if passed else 1


def _run_suite(filter_expr, tighten, json_out) -> int:
    from .acceptance import run_all
    results = run_all(filter_expr, tighten, echo=print)
    if json_out:
        payload = json.dumps([r.to_json() for r in results], indent=2)
        if json_out == "-":
            print(payload)
        else:
            with open(json_out, "w") as fh:
                fh.write(payload + "\n")
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed"
          + (f"; failing: {', '.join(map(str, failed))}" if failed else ""))
    return 1 if failed or not results else 0


def cmd_dno_selftest(args) -> int:
    return _run_suite("dno", args.tighten, args.json)


def cmd_selftest(args) -> int:
    return _run_suite(args.filter, args.tighten, args.json)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvsheet", description=__doc__, allow_abbrev=False,
                                epilog="vectors starting with '-' need the --opt=-1,0 form")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario config")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default: output.dir or out/<name>)")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("dispersion", help="planar dispersion table as CSV")
    s.add_argument("--v", type=_vec, required=True, help="half velocity jump, e.g. '1,0'")
    s.add_argument("--hplus", type=_vec, required=True)
    s.add_argument("--hminus", type=_vec, required=True)
    s.add_argument("--w", type=_vec, default=(0.0, 0.0), help="mean tangential velocity")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--modes", type=_modes, help="'1,0;0,1;1,1'")
    g.add_argument("--kmax", type=int, default=3, help="all modes with |xi| <= kmax")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(fn=cmd_dispersion)

    s = sub.add_parser("stability-check", help="stability margin for constant states or a config")
    s.add_argument("--config")
    s.add_argument("--v", type=_vec)
    s.add_argument("--w", type=_vec)
    s.add_argument("--uplus", type=_vec)
    s.add_argument("--uminus", type=_vec)
    s.add_argument("--hplus", type=_vec, default=(0.0, 0.0))
    s.add_argument("--hminus", type=_vec, default=(0.0, 0.0))
    s.add_argument("--c0", type=float, help="also check Lambda >= 2 c0")
    s.set_defaults(fn=cmd_stability_check)

    for name, fn, helptext in (("dno-selftest", cmd_dno_selftest, "DN oracle and structure checks"),
                               ("selftest", cmd_selftest, "acceptance criteria")):
        s = sub.add_parser(name, help=helptext)
        if name == "selftest":
            s.add_argument("--filter", help="criterion numbers or tags, comma separated")
        s.add_argument("--tighten", type=float, default=1.0, help="divide every tolerance by this")
        s.add_argument("--json", metavar="PATH", help="write results as JSON ('-' for stdout)")
        s.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
