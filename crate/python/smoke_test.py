"""Smoke test for the heatdim extension module.

Build and install it first, for example:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/heatdim-*.whl
"""

import math
import sys

import heatdim


def check(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    return ok


def main():
    results = []

    torus = heatdim.Model.torus(2, 16)
    ev = torus.eigenvalues()
    results.append(check("torus eigenvalues", len(ev) == 256 and abs(ev[0]) < 1e-9, f"n={len(ev)}"))

    dirac = heatdim.Dirac(torus)
    results.append(check("dirac square", dirac.square_block_error() < 1e-12))
    results.append(check("susy pairing", dirac.susy_check()["passed"]))

    gasket = heatdim.Model.gasket(5)
    cv = heatdim.cv_dimension(gasket)["estimate"]["fit"]["exponent"]
    ht = heatdim.heat_trace_dimension(gasket)["fit"]["exponent"]
    results.append(check("gasket cv", 1.2 < cv < 1.6, f"{cv:.4f}"))
    results.append(check("gasket heat trace", 1.2 < ht < 1.6, f"{ht:.4f}"))
    gate = heatdim.theorem_gate(gasket)
    results.append(check("theorem gate", gate["passed"], gate["detail"]))

    d = heatdim.Dirac(heatdim.fixture("path3")).connes_distance(0, 2, 1e-5)
    results.append(check("connes path3", abs(d["value"] - 2 / math.sqrt(3)) < 1e-3, f"{d['value']:.6f}"))

    cb = heatdim.torus_cb_dimension(3)["fit"]["exponent"]
    results.append(check("torus cb", abs(cb - 3) < 0.05, f"{cb:.4f}"))

    try:
        heatdim.Model.gasket(0)
        results.append(check("bad builder raises", False))
    except ValueError:
        results.append(check("bad builder raises", True))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
