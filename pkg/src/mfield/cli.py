"""Command line entry point ``mfield``.

Exit status: 0 when every check passes, 1 when a numerical check fails,
2 for invalid input (schema violation, unreadable or corrupt mesh file).
"""

from __future__ import annotations

import argparse
import ast
import json
import sys
from pathlib import Path

from .harness import ScenarioError, bundled_scenario_path, bundled_scenarios, load_scenario, run_scenario, write_report
from .mesh import MeshError, build_mesh, save_mesh

VERIFY_ALIASES = {
    "lemma2": "torus-markov",
    "premarkov": "torus-markov",
    "theorem1": "theorem1-markov",
    "markov": "theorem1-markov",
    "theorem2": "theorem2-rp",
    "rp": "theorem2-rp",
    "corollary5": "corollary5-rp0",
    "rp0": "corollary5-rp0",
    "theorem3": "theorem3-sewing",
    "sew": "theorem3-sewing",
    "theorem4": "theorem4-interacting",
    "interact": "theorem4-interacting",
}


def _summary(report, out: Path | None) -> str:
    lines = []
    for c in report.checks:
        lines.append(f"{'PASS' if c.passed else 'FAIL'}  {report.scenario}/{c.name}")
    lines.append(f"{report.scenario}: {'pass' if report.passed else 'fail'}"
                 + (f" (report in {out})" if out else ""))
    return "\n".join(lines)


def _run_path(path: Path, args) -> int:
    try:
        doc, raw = load_scenario(path)
        report = run_scenario(doc, seed=args.seed, tol=args.tol, base_dir=path.parent,
                              parallel=args.parallel, raw=raw)
    except ScenarioError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path("mfield-out") / report.scenario
    write_report(report, out)
    print(_summary(report, out))
    return 0 if report.passed else 1


def _cmd_run(args) -> int:
    return _run_path(Path(args.scenario), args)


def _cmd_verify(args) -> int:
    names = args.checks or ["all"]
    if names == ["all"]:
        names = sorted(bundled_scenarios())
    status = 0
    base_out = args.out
    for name in names:
        target = VERIFY_ALIASES.get(name, name)
        try:
            path = bundled_scenario_path(target)
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return 2
        args.out = str(Path(base_out) / target) if base_out else None
        status = max(status, _run_path(path, args))
    return status


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _cmd_mesh(args) -> int:
    params = {}
    for item in args.params:
        if "=" not in item:
            print(f"error: mesh parameter {item!r} is not key=value", file=sys.stderr)
            return 2
        key, value = item.split("=", 1)
        params[key] = _parse_value(value)
    try:
        mesh = build_mesh(args.kind, **params)
    except (MeshError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    save_mesh(mesh, args.out)
    print(json.dumps({"out": args.out, "vertices": mesh.vertex_count, "fingerprint": mesh.fingerprint()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfield", description="Discrete Gaussian and interacting field checks on meshes.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--tol", type=float, default=None, help="override every check tolerance")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--parallel", action="store_true", help="run independent checks concurrently")

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    common(r)
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("verify", help="run bundled scenarios (lemma2, theorem1..4, corollary5, all)")
    v.add_argument("checks", nargs="*")
    common(v)
    v.set_defaults(func=_cmd_verify)

    m = sub.add_parser("mesh", help="generate a mesh and write it as JSON")
    m.add_argument("kind", choices=["torus_lattice", "cylinder_collar", "icosphere", "path"])
    m.add_argument("params", nargs="*", help="key=value generator parameters, e.g. size=(8,8)")
    m.add_argument("--out", required=True)
    m.set_defaults(func=_cmd_mesh)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
