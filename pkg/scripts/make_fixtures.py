"""Regenerate the regression fixtures (negative controls).

* ``rp_crossing_support``: a small family on the reflected 8x8 torus whose
  factors cross the fixed rows; its reflected Gram matrix is indefinite.
* ``sew_cap_support``: a sewing pair on capped cylinders where ``F`` has a
  factor on the cap; dropping the cap entries breaks the sewing identity.

Both are found by seeded random search and written as JSON.

    python scripts/make_fixtures.py [--out DIR] [--seed N]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from mfield.harness import poly_to_json
from mfield.positivity import rp_gram, torus_reflection
from mfield.sewing import cylinder_setup, sew_check
from mfield.sobolev import assemble_operator
from mfield.wick import WickPolynomial

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "mfield" / "fixtures"


def _delta(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


def rp_fixture(seed: int, trials: int = 300) -> dict:
    mesh, inv = torus_reflection(8)
    fop = assemble_operator(mesh, 1.0)
    gen = np.random.default_rng(seed)
    n = fop.n
    best = None
    for _ in range(trials):
        size = int(gen.integers(2, 4))
        fam = []
        for _ in range(size):
            deg = int(gen.integers(1, 3))
            fs = [_delta(n, int(gen.integers(n))) for _ in range(deg)]
            fam.append(WickPolynomial.monomial(fop.id, fs, float(gen.choice([-1.0, 1.0]))))
        rep = rp_gram(fop, inv, fam, check_support=False)
        score = rep.min_eigenvalue / max(rep.scale, 1e-300)
        if best is None or score < best[0]:
            best = (score, fam, rep)
    score, fam, rep = best
    return {
        "name": "rp_crossing_support",
        "description": "family with factors outside omega+B on the reflected 8x8 torus; Gram matrix is indefinite",
        "reflection": {"kind": "torus", "n": 8},
        "mass": 1.0,
        "tol": 1e-9,
        "family": [poly_to_json(F) for F in fam],
        "expected": {"min_eigenvalue": rep.min_eigenvalue, "scale": rep.scale, "normalized": score},
    }


def sew_fixture(seed: int, trials: int = 200) -> dict:
    setup = cylinder_setup(8, 4, 4, 1.0)
    gen = np.random.default_rng(seed)
    n1, n2 = setup.fop1.n, setup.fop2.n
    cap1 = np.flatnonzero(setup.j1 < 0)
    best = None
    for _ in range(trials):
        f_cap = _delta(n1, int(gen.choice(cap1)))
        f_in = _delta(n1, int(gen.choice(setup.region1)))
        F = WickPolynomial.monomial(setup.fop1.id, [f_cap, f_in][: int(gen.integers(1, 3))])
        G = WickPolynomial.monomial(setup.fop2.id, [_delta(n2, int(gen.choice(setup.region2)))
                                                     for _ in range(F.degree)])
        rep = sew_check(setup, F, G, strict=False)
        if best is None or rep.residual > best[0]:
            best = (rep.residual, F, G, rep)
    _, F, G, rep = best
    return {
        "name": "sew_cap_support",
        "description": "F has a factor on the cap of side 1; with cap entries dropped the sewing identity fails",
        "setup": {"kind": "cylinders", "n": 8, "k1": 4, "k2": 4},
        "cap": {"kind": "cone"},
        "mass": 1.0,
        "tol": 1e-8,
        "F": poly_to_json(F),
        "G": poly_to_json(G),
        "expected": {"lhs": rep.lhs, "rhs": rep.rhs, "residual": rep.residual},
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(DEFAULT_OUT))
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fx in (rp_fixture(args.seed), sew_fixture(args.seed)):
        path = out / f"{fx['name']}.json"
        path.write_text(json.dumps(fx, indent=1, sort_keys=True) + "\n")
        print(f"wrote {path}: {fx['expected']}")


if __name__ == "__main__":
    main()
