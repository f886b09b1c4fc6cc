"""Smoke test for the levy_homog Python extension.

Build and install first:
    cd crates/py && maturin build --release && pip install ../../target/wheels/levy_homog-*.whl
"""

import json
import math

import levy_homog as lh


def main():
    grid = lh.TorusGrid(1, 64)
    assert len(grid) == 64 and abs(grid.h - 1 / 64) < 1e-15

    # (-Δ)^{1/2} sin(2πx) = 2π sin(2πx).
    xs = [grid.point(i)[0] for i in range(len(grid))]
    f = [math.sin(2 * math.pi * x) for x in xs]
    g = lh.fractional_laplacian_half(f)
    err = max(abs(a - 2 * math.pi * b) for a, b in zip(g, f))
    assert err < 1e-9, err

    prob = lh.Problem.reference(slow_n=16, fast_n=32)
    u = [0.0] * len(prob.slow_grid)
    h1 = prob.effective_hamiltonian(0, [0.5], u)
    h2 = prob.effective_hamiltonian(0, [0.5], u)
    assert h1 == h2
    hits, misses = prob.cache_stats()
    assert hits >= 1 and misses >= 1, (hits, misses)

    cell = json.loads(prob.solve_cell(3, [0.0], u))
    assert len(cell["corrector"]) == len(prob.fast_grid)

    u0 = [0.5 * math.sin(2 * math.pi * prob.slow_grid.point(i)[0]) for i in range(len(prob.slow_grid))]
    snaps = prob.solve_effective(u0, 0.02, [0.01, 0.02])
    assert len(snaps) == 2 and all(len(s) == len(u0) for s in snaps)

    try:
        lh.Problem.from_config("{ not json")
    except ValueError as e:
        assert "line" in str(e)
    else:
        raise AssertionError("malformed config accepted")

    print(f"ok: H(0, 0.5) = {h1:.6f}, cell lambda = {cell['lambda']:.6f}, {prob!r}")


if __name__ == "__main__":
    main()
