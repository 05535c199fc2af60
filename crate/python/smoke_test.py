"""Smoke test for the pymfa extension.

Build and install it first, e.g. `pip install maturin && maturin develop -m crates/python/Cargo.toml`.
"""

import math
import os
import tempfile

import pymfa


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    spec = pymfa.ScaleDistribution.lacunary(0.5, 0.5)
    tree = spec.sample(12, 42)
    assert tree.max_scale == 12 and len(tree) == 2**13 - 1
    assert tree.levels() == spec.sample(12, 42).levels(), "sampling is not deterministic"

    with tempfile.TemporaryDirectory() as d:
        for fmt in ("binary", "json", "csv"):
            path = os.path.join(d, "t." + fmt)
            tree.write(path, fmt)
            assert pymfa.CoefficientTree.read(path, fmt).levels() == tree.levels()

    th = spec.theory(2.0)
    assert close(th["h_max"], 1.5), th
    d = spec.spectrum(2.0, [0.5, 1.0, 1.5, 2.0])
    assert close(d[1], 0.75) and d[3] == -math.inf

    lead = pymfa.leaders(tree, 2.0, "restricted")
    assert len(lead) == 13 and all(v >= 0 for level in lead for v in level)
    assert pymfa.leaders(pymfa.CoefficientTree.zeros(4), 1.0)[2] == [0.0] * 4

    sc = pymfa.estimate_scaling(tree, [0.5, 1.0, 2.0], method="origin_regression")
    for p, eta in zip(sc["p_grid"], sc["eta_hat"]):
        assert abs(eta - (0.5 * p + 0.5)) < 0.1, (p, eta)

    grid = [0.6 + 0.01 * i for i in range(71)]
    emp = pymfa.empirical_spectrum(tree, 2.0, grid, epsilon=0.05, aggregation="origin_regression")
    assert len(emp["formalism"]["D"]) == len(grid)

    assert close(pymfa.h_max([(0.5, 0.5)], 2.0), 1.5)
    assert pymfa.increasing_hull([0.1, -math.inf, 0.3, 0.2]) == [0.1, 0.1, 0.3, 0.3]

    prof = pymfa.AdmissibleProfile(-0.25, [(-0.25, 0.0), (0.25, 1.0)], "linear")
    assert prof.p_nu() == 4.0
    assert pymfa.AdmissibleProfile(0.0, [(0.0, 0.3)]).p_nu() == math.inf

    try:
        pymfa.ScaleDistribution.lacunary(-0.25, 0.5).theory(3.0)
    except pymfa.RefusalError:
        pass
    else:
        raise AssertionError("p beyond p0 was not refused")
    try:
        pymfa.ScaleDistribution.lacunary(0.5, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("eta = 1 was accepted")

    report = spec.validate(2.0, max_scale=12, realizations=2)
    assert {g["name"] for g in report["gates"]} == {"density", "eta", "spectrum", "h_max"}

    print("pymfa smoke test passed")


if __name__ == "__main__":
    main()
