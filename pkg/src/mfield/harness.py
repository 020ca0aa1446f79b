"""Scenario files, check orchestration and report emission.

A scenario is a JSON document::

    {"name": "...", "seed": 0,
     "meshes": {"torus": {"kind": "torus_lattice", "params": {"size": [8, 8]}}},
     "checks": [{"type": "markov", "name": "...", "mesh": "torus", ...}, ...]}

Checks run in the declared order (optionally concurrently, with results
reported in declared order).  Everything that can be validated up front is
validated before any file is written, so a bad scenario or mesh file leaves
no partial output.  Reports are deterministic given the inputs and seed,
apart from the ``timestamp`` field, which is excluded from ``report_sha256``.
"""

from __future__ import annotations

import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import os
import platform
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

import jsonschema
import numpy as np
import scipy

from . import rng as _rng
from .families import bump_basis, random_family, random_mesh, random_partition, random_wick_poly
from .interacting import grid_conditional, nu_conditional, nu_markov_report, wick_potential
from .mesh import Mesh, MeshError, build_mesh, load_mesh, make_partition
from .positivity import SupportError, rp_gram, sphere_reflection, torus_reflection
from .sewing import CapSpec, cylinder_setup, sew_check, sphere_halves_setup
from .sobolev import assemble_operator, premarkov_residual, triple_decompose
from .wick import (
    VECTORS,
    PlainPolynomial,
    WickPolynomial,
    coefficient_distance,
    conditional_expectation,
    wick_inner,
)

__all__ = [
    "ScenarioError",
    "CheckResult",
    "RunReport",
    "SCENARIO_SCHEMA",
    "CHECK_SCHEMAS",
    "validate_scenario",
    "load_scenario",
    "bundled_scenarios",
    "bundled_scenario_path",
    "fixture_dir",
    "load_fixture",
    "poly_to_json",
    "poly_from_json",
    "run_scenario",
    "write_report",
]

FIXTURES_ENV = "MFIELD_FIXTURES"


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path
        self.message = message


# ----------------------------------------------------------------------------
# schema

_VERTS = {"type": "array", "items": {"type": "integer", "minimum": 0}}
_POS = {"type": "number", "exclusiveMinimum": 0}
_TOL = {"type": "number", "exclusiveMinimum": 0}
def _tagged(tag: str, branches: dict[str, dict]) -> dict:
    """Object schema discriminated by ``tag`` so errors come from the matching branch."""
    return {
        "type": "object",
        "properties": {tag: {"enum": sorted(branches)}},
        "required": [tag],
        "allOf": [{"if": {"properties": {tag: {"const": k}}, "required": [tag]}, "then": v}
                  for k, v in sorted(branches.items())],
    }


def _closed(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_MESH_SPEC = {
    "type": "object",
    "if": {"required": ["file"]},
    "then": _closed({"file": {"type": "string"}}, ["file"]),
    "else": _closed({"kind": {"enum": ["torus_lattice", "cylinder_collar", "icosphere", "path"]},
                     "params": {"type": "object"}}, ["kind"]),
}
_MESH_REF = {"oneOf": [{"type": "string"}, _MESH_SPEC]}
_CAP = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["cone", "ring_cone"]},
        "spoke": _POS,
        "rim": _POS,
        "rim_mass": _POS,
        "apex_mass": _POS,
        "rings": {"type": "integer", "minimum": 1},
        "ring_weight": _POS,
        "ring_mass": _POS,
    },
    "required": ["kind"],
    "additionalProperties": False,
}
_REFLECTION = _tagged("kind", {
    "torus": _closed({"kind": {}, "n": {"type": "integer", "minimum": 4},
                      "ny": {"type": "integer", "minimum": 3}}, ["n"]),
    "sphere": _closed({"kind": {}, "subdiv": {"type": "integer", "minimum": 0, "maximum": 4}}, ["subdiv"]),
})
_OBSERVABLE = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "properties": {"coef": {"type": "number"}, "vertices": _VERTS},
        "required": ["vertices"],
        "additionalProperties": False,
    },
}


def _check_schema(kind: str, props: dict, required: list[str] = ()) -> dict:
    base = {"type": {"const": kind}, "name": {"type": "string", "minLength": 1},
            "description": {"type": "string"}}
    return {"type": "object", "properties": {**base, **props},
            "required": ["type", "name", *required], "additionalProperties": False}


CHECK_SCHEMAS: dict[str, dict] = {
    "decomp": _check_schema("decomp", {
        "mesh": _MESH_REF,
        "omega": _VERTS,
        "samples": {"type": "integer", "minimum": 1},
        "masses": {"type": "array", "items": _POS, "minItems": 1},
        "max_vertices": {"type": "integer", "minimum": 2},
        "tol": _TOL,
    }),
    "markov": _check_schema("markov", {
        "mesh": _MESH_REF,
        "mass": _POS,
        "omega": _VERTS,
        "samples": {"type": "integer", "minimum": 1},
        "count": {"type": "integer", "minimum": 1},
        "degree": {"type": "integer", "minimum": 0, "maximum": 4},
        "tol": _TOL,
    }, ["mesh", "mass"]),
    "rp": _check_schema("rp", {
        "reflection": _REFLECTION,
        "mass": {"type": "number", "minimum": 0},
        "mass_mode": {"enum": ["massive", "zero_mass_limit"]},
        "families": {"type": "integer", "minimum": 1},
        "size": {"type": "integer", "minimum": 1, "maximum": 10},
        "degree": {"type": "integer", "minimum": 0, "maximum": 3},
        "mass_sweep": {"type": "array", "items": _POS},
        "negative_control": {"type": "string"},
        "tol": _TOL,
    }, ["reflection"]),
    "sew": _check_schema("sew", {
        "setup": _tagged("kind", {
            "cylinders": _closed({"kind": {}, "n": {"type": "integer", "minimum": 3},
                                  "k1": {"type": "integer", "minimum": 2}, "k2": {"type": "integer", "minimum": 2}}),
            "sphere_halves": _closed({"kind": {}, "subdiv": {"type": "integer", "minimum": 1, "maximum": 4}}),
        }),
        "mass": _POS,
        "pairs": {"type": "integer", "minimum": 1},
        "degree": {"type": "integer", "minimum": 0, "maximum": 4},
        "caps": {"type": "array", "items": _CAP, "minItems": 1},
        "negative_control": {"type": "string"},
        "tol": _TOL,
    }, ["setup", "mass"]),
    "interact": _check_schema("interact", {
        "mode": {"enum": ["markov", "quadrature"]},
        "mesh": _MESH_REF,
        "mass": _POS,
        "omega": _VERTS,
        "condition_on": _VERTS,
        "phi": {"type": "array", "items": {"type": "number"}},
        "potential": {
            "type": "object",
            "properties": {
                "coeffs": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "region": {"oneOf": [{"const": "all"}, _VERTS]},
                "lambda": {"type": "number", "minimum": 0},
            },
            "required": ["coeffs"],
            "additionalProperties": False,
        },
        "observable": _OBSERVABLE,
        "n_outer": {"type": "integer", "minimum": 2},
        "n_inner": {"type": "integer", "minimum": 40},
        "z_tol": _TOL,
    }, ["mesh", "mass", "potential", "observable"]),
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "meshes": {"type": "object", "additionalProperties": _MESH_SPEC},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"type": {"enum": sorted(CHECK_SCHEMAS)}},
                "required": ["type"],
            },
        },
    },
    "required": ["name", "checks"],
    "additionalProperties": False,
}

DEFAULT_TOLS = {"decomp": 1e-10, "markov": 1e-9, "rp": 1e-9, "sew": 1e-8}


def _err_path(prefix: list, err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in [*prefix, *err.absolute_path])


def _first_error(schema: dict, doc: Any, prefix: list) -> None:
    v = jsonschema.Draft202012Validator(schema)
    err = jsonschema.exceptions.best_match(v.iter_errors(doc))
    if err is not None:
        raise ScenarioError(_err_path(prefix, err), err.message)


def validate_scenario(doc: Any) -> None:
    """Raise :class:`ScenarioError` with a slash-separated field path."""
    _first_error(SCENARIO_SCHEMA, doc, [])
    names = set()
    for i, chk in enumerate(doc["checks"]):
        _first_error(CHECK_SCHEMAS[chk["type"]], chk, ["checks", i])
        if chk["name"] in names:
            raise ScenarioError(f"checks/{i}/name", f"duplicate check name {chk['name']!r}")
        names.add(chk["name"])
        ref = chk.get("mesh")
        if isinstance(ref, str) and ref not in doc.get("meshes", {}):
            raise ScenarioError(f"checks/{i}/mesh", f"unknown mesh reference {ref!r}")


def load_scenario(path: str | Path) -> tuple[dict, bytes]:
    """Parse and validate a scenario file; returns the document and its raw bytes."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioError("", f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"not valid JSON: {exc}") from exc
    validate_scenario(doc)
    return doc, raw


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("mfield") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".json")}


def bundled_scenario_path(name: str) -> Path:
    found = bundled_scenarios()
    if name not in found:
        raise KeyError(f"no bundled scenario {name!r}; available: {sorted(found)}")
    return found[name]


# ----------------------------------------------------------------------------
# fixtures and polynomial JSON


def fixture_dir() -> Path:
    """``$MFIELD_FIXTURES`` if set, else the fixtures shipped with the package."""
    env = os.environ.get(FIXTURES_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("mfield") / "fixtures"))


def load_fixture(name: str) -> dict:
    path = fixture_dir() / f"{name}.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError("", f"cannot load fixture {path}: {exc}") from exc


def _sparse(v: np.ndarray) -> list[list]:
    return [[int(i), float(v[i])] for i in np.flatnonzero(v)]


def _dense(entries, n: int) -> np.ndarray:
    v = np.zeros(n)
    for i, x in entries:
        v[int(i)] = float(x)
    return v


def poly_to_json(p) -> list[dict]:
    """Terms as ``{"coef": c, "factors": [[[vertex, value], ...], ...]}`` in canonical order."""
    return [{"coef": float(c), "factors": [_sparse(VECTORS[i]) for i in key]}
            for key, c in sorted(p.terms.items())]


def poly_from_json(data, n: int, context: str | None = None):
    """Inverse of :func:`poly_to_json`; a Wick polynomial when ``context`` is given."""
    p = WickPolynomial.constant(context, 0.0) if context else PlainPolynomial.constant(0.0)
    for term in data:
        fs = [_dense(f, n) for f in term["factors"]]
        m = (WickPolynomial.monomial(context, fs, term["coef"]) if context
             else PlainPolynomial.monomial(fs, term["coef"]))
        p = p + m
    return p


# ----------------------------------------------------------------------------
# results


@dataclass
class CheckResult:
    name: str
    type: str
    passed: bool
    values: dict
    tolerance: dict
    table: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "type": self.type,
            "verdict": "pass" if self.passed else "fail",
            "values": self.values,
            "tolerance": self.tolerance,
            "rows": len(self.table),
        }

    def to_csv(self) -> str:
        if not self.table:
            return ""
        buf = io.StringIO()
        cols = list(self.table[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.table:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        return buf.getvalue()


@dataclass
class RunReport:
    scenario: str
    seed: int
    checks: list[CheckResult]
    environment: dict
    inputs: dict
    timestamp: str = ""

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def body(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "verdict": "pass" if self.passed else "fail",
            "checks": [c.to_dict() for c in self.checks],
            "environment": self.environment,
            "inputs": self.inputs,
        }

    def to_json(self) -> str:
        body = self.body()
        digest = hashlib.sha256(_dumps(body).encode()).hexdigest()
        return _dumps({**body, "report_sha256": digest, "timestamp": self.timestamp}) + "\n"


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def environment_fingerprint() -> dict:
    from . import __version__

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mfield": __version__,
        "platform": platform.system().lower(),
        "machine": platform.machine(),
    }


# ----------------------------------------------------------------------------
# context shared by checks


@dataclass
class _Context:
    seed: int
    meshes: dict[str, Mesh]
    base_dir: Path
    tol_override: float | None

    def mesh(self, ref) -> Mesh:
        if isinstance(ref, str):
            return self.meshes[ref]
        return _resolve_mesh(ref, self.base_dir, "mesh")

    def tol(self, chk: dict, key: str = "tol") -> float:
        if self.tol_override is not None:
            return self.tol_override
        return float(chk.get(key, DEFAULT_TOLS[chk["type"]]))


def _resolve_mesh(spec: Mapping, base_dir: Path, path: str) -> Mesh:
    try:
        if "file" in spec:
            f = Path(spec["file"])
            return load_mesh(f if f.is_absolute() else base_dir / f)
        return build_mesh(spec["kind"], **copy.deepcopy(spec.get("params", {})))
    except (MeshError, OSError, TypeError, ValueError) as exc:
        raise ScenarioError(path, f"cannot build mesh: {exc}") from exc


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ----------------------------------------------------------------------------
# checks


def _check_decomp(chk: dict, ctx: _Context, gen: np.random.Generator) -> CheckResult:
    tol = ctx.tol(chk)
    masses = chk.get("masses", [0.1, 1.0, 10.0])
    pairs = []
    if "mesh" in chk:
        mesh = ctx.mesh(chk["mesh"])
        for _ in range(chk.get("samples", 1)):
            part = make_partition(mesh, chk["omega"]) if "omega" in chk else random_partition(mesh, gen)
            pairs.append((mesh, part))
    else:
        for _ in range(chk.get("samples", 50)):
            mesh = random_mesh(gen, chk.get("max_vertices", 200))
            pairs.append((mesh, random_partition(mesh, gen)))
    rows = []
    for k, (mesh, part) in enumerate(pairs):
        f = gen.standard_normal(mesh.vertex_count)
        for m in masses:
            fop = assemble_operator(mesh, m)
            res = premarkov_residual(fop, part)
            d = triple_decompose(fop, part, f)
            scale = max(1.0, float(np.abs(f).max()))
            sum_err = float(np.abs(d.exterior + d.boundary + d.interior - f).max()) / scale
            comps = [d.exterior, d.boundary, d.interior]
            norm2 = max(fop.pair(f, f), 1e-300)
            orth = max(abs(fop.pair(comps[a], comps[b])) for a, b in ((0, 1), (0, 2), (1, 2))) / norm2
            rows.append({"pair": k, "kind": str(mesh.meta.get("kind", "")), "vertices": mesh.vertex_count,
                         "omega": int(part.omega.size), "boundary": int(part.boundary.size), "mass": float(m),
                         "premarkov": res, "sum_error": sum_err, "orthogonality": orth})
    worst = {key: max(r[key] for r in rows) for key in ("premarkov", "sum_error", "orthogonality")}
    passed = all(v <= tol for v in worst.values())
    return CheckResult(chk["name"], "decomp", passed,
                       {"pairs": len(pairs), "masses": list(masses), **{f"max_{k}": v for k, v in worst.items()}},
                       {"tol": tol}, rows)


def _check_markov(chk: dict, ctx: _Context, gen: np.random.Generator) -> CheckResult:
    tol = ctx.tol(chk)
    mesh = ctx.mesh(chk["mesh"])
    fop = assemble_operator(mesh, chk["mass"])
    parts = ([make_partition(mesh, chk["omega"])] if "omega" in chk
             else [random_partition(mesh, gen) for _ in range(chk.get("samples", 5))])
    rows = []
    for k, part in enumerate(parts):
        for j in range(chk.get("count", 20)):
            deg = chk.get("degree", 3)
            p = random_wick_poly(fop, part.closure, gen, max(deg, 1)) if deg else WickPolynomial.constant(fop.id, 1.0)
            q = random_wick_poly(fop, part.complement, gen, max(deg, 1)) if deg else WickPolynomial.constant(fop.id, 1.0)
            lhs = conditional_expectation(fop, part.complement, p)
            rhs = conditional_expectation(fop, part.boundary, p)
            abs_d, scale = coefficient_distance(lhs, rhs)
            rel_d = abs_d / max(1.0, scale)
            direct = wick_inner(fop, p, q)
            collapsed = wick_inner(fop, rhs, conditional_expectation(fop, part.boundary, q))
            pair_rel = abs(direct - collapsed) / max(abs(direct), abs(collapsed), 1e-300)
            if direct == collapsed:
                pair_rel = 0.0
            rows.append({"partition": k, "poly": j, "degree": p.degree, "coef_abs": abs_d, "coef_rel": rel_d,
                         "coef_match": rel_d <= tol, "pairing_direct": direct,
                         "pairing_boundary": collapsed, "pairing_rel": pair_rel})
    passed = all(r["coef_match"] for r in rows) and all(r["pairing_rel"] <= tol for r in rows)
    return CheckResult(chk["name"], "markov", passed,
                       {"partitions": len(parts), "polynomials": len(rows),
                        "max_coef_rel": max(r["coef_rel"] for r in rows),
                        "max_pairing_rel": max(r["pairing_rel"] for r in rows)},
                       {"coef_rtol": tol, "pairing_rtol": tol}, rows)


def _reflection(spec: dict):
    if spec["kind"] == "torus":
        return torus_reflection(spec["n"], spec.get("ny"))
    return sphere_reflection(spec["subdiv"])


def _negative_control_rp(name: str) -> dict:
    fx = load_fixture(name)
    mesh, inv = _reflection(fx["reflection"])
    fop = assemble_operator(mesh, fx["mass"])
    fam = [poly_from_json(t, fop.n, fop.id) for t in fx["family"]]
    rep = rp_gram(fop, inv, fam, check_support=False, tol=fx.get("tol", 1e-9), witnesses=[name])
    rejected = False
    try:
        rp_gram(fop, inv, fam)
    except SupportError:
        rejected = True
    return {"fixture": name, "min_eigenvalue": rep.min_eigenvalue, "scale": rep.scale,
            "indefinite": not rep.passed, "rejected_by_support_check": rejected}


def _check_rp(chk: dict, ctx: _Context, gen: np.random.Generator) -> CheckResult:
    tol = ctx.tol(chk)
    mode = chk.get("mass_mode", "massive")
    mesh, inv = _reflection(chk["reflection"])
    m = float(chk.get("mass", 1.0 if mode == "massive" else 0.0))
    if mode == "massive":
        if m <= 0:
            raise ScenarioError("mass", "massive RP needs mass > 0")
        fop = assemble_operator(mesh, m)
        allowed = inv.partition.closure
    else:
        fop = assemble_operator(mesh, 0.0)
        allowed = inv.partition.omega
    rows, values = [], {}
    sweep = chk.get("mass_sweep", [])
    sweep_norms: list[list[float]] = []
    for k in range(chk.get("families", 20)):
        fam = random_family(fop, allowed, gen, chk.get("size", 6), chk.get("degree", 3),
                            mean_zero=(mode == "zero_mass_limit"))
        rep = rp_gram(fop if mode == "massive" else fop, inv, fam, mass_mode=mode, tol=tol)
        row = {"family": k, "size": len(fam), "min_eigenvalue": rep.min_eigenvalue, "scale": rep.scale,
               "asymmetry": rep.asymmetry, "null_dimension": rep.null_dimension, "passed": rep.passed}
        if sweep:
            diffs = []
            for mm in sweep:
                fm = assemble_operator(mesh, mm)
                fam_m = [F.rebase(fm.id) for F in fam]
                Mm = rp_gram(fm, inv, fam_m, tol=tol).matrix
                diffs.append(float(np.linalg.norm(Mm - rep.matrix, 2)))
            sweep_norms.append(diffs)
            row.update({f"diff_m{mm:g}": d for mm, d in zip(sweep, diffs)})
            row["decreasing"] = all(a > b for a, b in zip(diffs, diffs[1:]))
        rows.append(row)
    passed = all(r["passed"] for r in rows)
    values.update({"families": len(rows), "mass": m, "mass_mode": mode,
                   "min_normalized_eigenvalue": min(r["min_eigenvalue"] / max(r["scale"], 1e-300) for r in rows)})
    if sweep:
        values["mass_sweep"] = list(sweep)
        values["all_decreasing"] = all(r["decreasing"] for r in rows)
        passed = passed and values["all_decreasing"]
    if "negative_control" in chk:
        nc = _negative_control_rp(chk["negative_control"])
        values["negative_control"] = nc
        passed = passed and nc["indefinite"] and nc["rejected_by_support_check"]
    return CheckResult(chk["name"], "rp", passed, values, {"psd_rel": tol}, rows)


def _sew_setup(spec: dict, mass: float, cap: CapSpec):
    if spec["kind"] == "cylinders":
        return cylinder_setup(spec.get("n", 8), spec.get("k1", 4), spec.get("k2", 4), mass, cap)
    return sphere_halves_setup(spec.get("subdiv", 2), mass, cap)


def _cap(spec: dict) -> CapSpec:
    return CapSpec(**spec)


def _negative_control_sew(name: str) -> dict:
    fx = load_fixture(name)
    setup = _sew_setup(fx["setup"], fx["mass"], _cap(fx["cap"]))
    F = poly_from_json(fx["F"], setup.fop1.n, setup.fop1.id)
    G = poly_from_json(fx["G"], setup.fop2.n, setup.fop2.id)
    rejected = False
    try:
        sew_check(setup, F, G)
    except SupportError:
        rejected = True
    rep = sew_check(setup, F, G, strict=False, tol=fx.get("tol", 1e-8))
    return {"fixture": name, "lhs": rep.lhs, "rhs": rep.rhs, "residual": rep.residual,
            "violated": not rep.passed, "rejected_by_support_check": rejected}


def _check_sew(chk: dict, ctx: _Context, gen: np.random.Generator) -> CheckResult:
    tol = ctx.tol(chk)
    caps = [_cap(c) for c in chk.get("caps", [{"kind": "cone"}, {"kind": "ring_cone", "rings": 2}])]
    setups = [_sew_setup(chk["setup"], chk["mass"], c) for c in caps]
    ref = setups[0]
    basis1 = bump_basis(ref.m1_tilde, ref.region1)
    basis2 = bump_basis(ref.m2_tilde, ref.region2)

    def pad(v: np.ndarray, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[: len(v)] = v
        return out

    # bumps live on the source vertices, which keep their indices in every capped mesh
    basis1 = [v[ref.region1] for v in basis1]
    basis2 = [v[ref.region2] for v in basis2]
    deg = chk.get("degree", 4)
    rows = []
    for k in range(chk.get("pairs", 100)):
        d1, d2 = int(gen.integers(0, deg + 1)), int(gen.integers(0, deg + 1))
        f_idx = [int(gen.integers(len(basis1))) for _ in range(d1)]
        g_idx = [int(gen.integers(len(basis2))) for _ in range(d2)]
        row = {"pair": k, "deg_F": d1, "deg_G": d2}
        lhs_by_cap = []
        for c, s in enumerate(setups):
            F = WickPolynomial.monomial(s.fop1.id, [pad(basis1[i], s.fop1.n) for i in f_idx])
            G = WickPolynomial.monomial(s.fop2.id, [pad(basis2[i], s.fop2.n) for i in g_idx])
            rep = sew_check(s, F, G, tol)
            row[f"lhs_cap{c}"] = rep.lhs
            row[f"rhs_cap{c}"] = rep.rhs
            row[f"residual_cap{c}"] = rep.residual
            lhs_by_cap.append(rep.lhs)
        spread = max(lhs_by_cap) - min(lhs_by_cap)
        row["cap_spread"] = spread / max(1.0, max(abs(x) for x in lhs_by_cap))
        rows.append(row)
    max_res = max(max(v for key, v in r.items() if key.startswith("residual")) for r in rows)
    max_spread = max(r["cap_spread"] for r in rows)
    passed = max_res <= tol and max_spread <= tol
    values = {"pairs": len(rows), "caps": [c.kind for c in caps], "max_residual": max_res,
              "max_cap_spread": max_spread, "glued_vertices": ref.glued.mesh.vertex_count,
              "fingerprints": {"m1_tilde": ref.m1_tilde.fingerprint(), "m2_tilde": ref.m2_tilde.fingerprint(),
                               "glued": ref.glued.mesh.fingerprint()}}
    if "negative_control" in chk:
        nc = _negative_control_sew(chk["negative_control"])
        values["negative_control"] = nc
        passed = passed and nc["violated"] and nc["rejected_by_support_check"]
    return CheckResult(chk["name"], "sew", passed, values, {"residual": tol, "cap_spread": tol}, rows)


def _observable(spec, n: int) -> PlainPolynomial:
    F = PlainPolynomial.constant(0.0)
    for term in spec:
        fs = []
        for v in term["vertices"]:
            if v >= n:
                raise ScenarioError("observable", f"vertex {v} outside the mesh")
            e = np.zeros(n)
            e[v] = 1.0
            fs.append(e)
        F = F + PlainPolynomial.monomial(fs, term.get("coef", 1.0))
    return F


def _check_interact(chk: dict, ctx: _Context, gen: np.random.Generator) -> CheckResult:
    z_tol = float(chk.get("z_tol", 3.0))
    mesh = ctx.mesh(chk["mesh"])
    fop = assemble_operator(mesh, chk["mass"])
    ps = chk["potential"]
    pot = wick_potential(fop, ps.get("region", "all"), ps["coeffs"], ps.get("lambda", 1.0))
    F = _observable(chk["observable"], fop.n)
    if chk.get("mode", "markov") == "quadrature":
        A = chk["condition_on"]
        phi = chk.get("phi", [0.0] * len(A))
        est = nu_conditional(fop, pot, A, F, phi, seed=ctx.seed, n=chk.get("n_inner", 100_000))
        exact = grid_conditional(fop, pot, A, F, phi)
        z = est.z(exact)
        return CheckResult(chk["name"], "interact", abs(z) <= z_tol,
                           {"estimate": est.value, "stderr": est.stderr, "quadrature": exact, "z": z, "ess": est.ess},
                           {"z": z_tol})
    part = make_partition(mesh, chk["omega"])
    rep = nu_markov_report(fop, pot, part, F, seed=ctx.seed, n_outer=chk.get("n_outer", 200),
                           n_inner=chk.get("n_inner", 10_000), z_tol=z_tol)
    rows = [dict(r.__dict__) for r in rep.rows]
    return CheckResult(chk["name"], "interact", rep.passed, rep.to_dict(), {"z": z_tol}, rows)


_CHECKS: dict[str, Callable[[dict, _Context, np.random.Generator], CheckResult]] = {
    "decomp": _check_decomp,
    "markov": _check_markov,
    "rp": _check_rp,
    "sew": _check_sew,
    "interact": _check_interact,
}


# ----------------------------------------------------------------------------
# orchestration


def _prepare(doc: dict, base_dir: Path, raw: bytes | None) -> tuple[dict[str, Mesh], dict]:
    meshes, files = {}, {}
    for name, spec in sorted(doc.get("meshes", {}).items()):
        meshes[name] = _resolve_mesh(spec, base_dir, f"meshes/{name}")
        if "file" in spec:
            p = Path(spec["file"])
            files[spec["file"]] = _file_hash(p if p.is_absolute() else base_dir / p)
    for i, chk in enumerate(doc["checks"]):
        ref = chk.get("mesh")
        if isinstance(ref, dict):
            _resolve_mesh(ref, base_dir, f"checks/{i}/mesh")
            if "file" in ref:
                p = Path(ref["file"])
                files[ref["file"]] = _file_hash(p if p.is_absolute() else base_dir / p)
        if "negative_control" in chk:
            load_fixture(chk["negative_control"])
    inputs = {
        "scenario_sha256": hashlib.sha256(raw if raw is not None else _dumps(doc).encode()).hexdigest(),
        "mesh_files": files,
        "meshes": {name: m.fingerprint() for name, m in meshes.items()},
    }
    return meshes, inputs


def run_scenario(doc: dict, seed: int | None = None, tol: float | None = None,
                 base_dir: str | Path = ".", parallel: bool = False, raw: bytes | None = None) -> RunReport:
    """Validate, resolve and execute every check; raise :class:`ScenarioError` on bad input."""
    validate_scenario(doc)
    base_dir = Path(base_dir)
    seed = int(doc.get("seed", 0) if seed is None else seed)
    meshes, inputs = _prepare(doc, base_dir, raw)
    ctx = _Context(seed, meshes, base_dir, tol)

    def one(i: int) -> CheckResult:
        chk = doc["checks"][i]
        gen = _rng.stream(seed, 4, i)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return _CHECKS[chk["type"]](chk, ctx, gen)

    idx = range(len(doc["checks"]))
    if parallel and len(doc["checks"]) > 1:
        with ThreadPoolExecutor() as ex:
            results = list(ex.map(one, idx))
    else:
        results = [one(i) for i in idx]
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return RunReport(doc["name"], seed, results, environment_fingerprint(), inputs, stamp)


def write_report(report: RunReport, out_dir: str | Path) -> list[Path]:
    """Write ``report.json`` and one CSV per check with tabular output."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    (out / "report.json").write_text(report.to_json())
    for chk in report.checks:
        text = chk.to_csv()
        if text:
            p = out / f"{chk.name}.csv"
            p.write_text(text)
            written.append(p)
    return written
