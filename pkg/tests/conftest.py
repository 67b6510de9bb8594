import numpy as np
import pytest

from equimeasure import (
    GapVariables,
    IfsSystem,
    QuadratureRule,
    SolverConfig,
    generate_bands,
    hierarchical_solve,
    mean_potential_on_attractor_points,
    potential_at,
    solve_generation,
    validate,
)

TERNARY_PAIRS = [(1.0 / 3.0, -1.0), (1.0 / 3.0, 1.0)]
ASYM_PAIRS = [(4.0 / 5.0, -1.0), (1.0 / 10.0, 1.0)]

# Fixed on-set evaluation point close to the left hull endpoint, inside the
# leftmost band of every generation up to ~12.
X_STAR = -0.999996236647154


@pytest.fixture(scope="session")
def ternary():
    return validate(IfsSystem.from_pairs(TERNARY_PAIRS))


@pytest.fixture(scope="session")
def asym():
    return validate(IfsSystem.from_pairs(ASYM_PAIRS))


@pytest.fixture(scope="session")
def rule2048():
    return QuadratureRule.chebyshev(2048)


@pytest.fixture(scope="session")
def ternary_run(ternary):
    """Bands and converged solutions for the middle-third system, n=1..7."""
    cfg = SolverConfig(residual_tol=1e-13, quadrature_order=2048)
    solutions = hierarchical_solve(ternary, 7, cfg)
    bands = [generate_bands(ternary, n) for n in range(1, 8)]
    return bands, solutions


@pytest.fixture(scope="session")
def asym_run(asym):
    """Bands and converged solutions for the 4/5, 1/10 system, n=1..9."""
    cfg = SolverConfig(residual_tol=1e-12, quadrature_order=2048)
    solutions = hierarchical_solve(asym, 9, cfg)
    bands = [generate_bands(asym, n) for n in range(1, 10)]
    return bands, solutions


@pytest.fixture(scope="session")
def trivial_band(ternary):
    """Generation 0: the single band [-1, 1] with the Chebyshev measure."""
    b0 = generate_bands(ternary, 0)
    s0 = solve_generation(b0, GapVariables(b0, np.zeros(0)),
                          SolverConfig(quadrature_order=2048))
    return b0, s0


@pytest.fixture(scope="session")
def ternary_potentials(ternary_run, rule2048):
    """Plain-node point potentials and accurate mean potentials, n=1..7."""
    bands, solutions = ternary_run
    deepest = bands[-1]
    points, means = [], []
    for b, s in zip(bands, solutions):
        points.append(potential_at(X_STAR, s, b, rule2048, method="nodes"))
        means.append(mean_potential_on_attractor_points(s, b, 4096, rule2048,
                                                        sample_bands=deepest))
    return points, means
