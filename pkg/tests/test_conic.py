import math

import numpy as np
import pytest
from helpers import fixture

from mixdro.conic import (
    Affine,
    ClarabelBackend,
    ConicProgram,
    ScsBackend,
    SolverInfeasible,
    SolverUnbounded,
    conic_backend_solve,
    expcone_encode_softplus,
    get_backend,
)
from mixdro.solve import assemble_monolithic


def _softplus_program(a: float, c: float):
    prog = ConicProgram()
    u, v = expcone_encode_softplus(prog, Affine.constant([a]), Affine.constant([c]))
    return prog, u, v


def test_encoding_boundary_point_is_feasible():
    prog, u, v = _softplus_program(math.log(2), 0.0)
    x = np.zeros(prog.n_vars)
    x[u], x[v] = 0.5, 0.5
    assert prog.max_violation(x) <= 1e-15
    assert conic_backend_solve(prog).status == "optimal"


def test_encoding_rejects_violated_softplus():
    prog, _, _ = _softplus_program(0.0, 0.0)
    with pytest.raises(SolverInfeasible):
        ClarabelBackend().solve(prog)


def test_encoding_strictly_feasible_point():
    prog, u, v = _softplus_program(1.0, 0.5)
    sol = conic_backend_solve(prog)
    assert sol.status == "optimal"
    assert prog.max_violation(sol.x) <= 1e-8
    assert sol.x[u][0] + sol.x[v][0] <= 1.0 + 1e-9


def test_minimizing_softplus_bound_gives_log2():
    prog = ConicProgram()
    a = prog.add_variables("a", 1)
    prog.add_objective(a, 1.0)
    expcone_encode_softplus(prog, Affine.var(a), Affine.constant([0.0]))
    for backend in (ClarabelBackend(), ScsBackend()):
        sol = backend.solve(prog)
        assert sol.objective == pytest.approx(math.log(2), abs=1e-6)


def test_small_lp():
    # max x + 2y  s.t. x + y <= 4, x <= 3, y <= 2, x, y >= 0  ->  (2, 2), value 6
    prog = ConicProgram()
    xy = prog.add_variables("xy", 2, lower=0.0)
    prog.add_objective(xy, [-1.0, -2.0])
    prog.add_linear(Affine(3, [0, 0, 1, 2], [xy[0], xy[1], xy[0], xy[1]], [1, 1, 1, 1], [-4, -3, -2]), "<=")
    sol = get_backend("clarabel").solve(prog)
    np.testing.assert_allclose(sol.x, [2.0, 2.0], atol=1e-7)
    assert sol.objective == pytest.approx(-6.0, abs=1e-7)


def test_unbounded_and_infeasible_are_distinct():
    prog = ConicProgram()
    x = prog.add_variables("x", 1)
    prog.add_objective(x, 1.0)
    with pytest.raises(SolverUnbounded):
        ClarabelBackend().solve(prog)
    prog.add_linear(Affine.var(x) - 1.0, ">=")
    prog.add_linear(Affine.var(x) + 1.0, "<=")
    with pytest.raises(SolverInfeasible):
        ClarabelBackend().solve(prog)


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown backend"):
        get_backend("mosek")


def test_affine_take_and_evaluate():
    e = Affine(3, [0, 1, 1, 2], [0, 0, 1, 2], [1.0, 2.0, 3.0, 4.0], [0.5, 0.0, -1.0])
    x = np.array([1.0, 10.0, 100.0])
    t = e.take([2, 0, 2])
    np.testing.assert_allclose(t.evaluate(x), e.evaluate(x)[[2, 0, 2]])
    np.testing.assert_allclose((2.0 * e - e).evaluate(x), e.evaluate(x))


def test_program_json_round_trip():
    ds, params = fixture(0, N=8, cards=(2, 2))
    prog, _ = assemble_monolithic(ds, params)
    back = ConicProgram.from_json(prog.to_json())
    c1, A1, b1, d1 = prog.standard_form()
    c2, A2, b2, d2 = back.standard_form()
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_array_equal(b1, b2)
    assert (A1 != A2).nnz == 0 and d1 == d2


@pytest.mark.parametrize("seed", [0, 1])
def test_two_backends_agree_on_monolithic_fixture(seed):
    ds, params = fixture(seed, N=15, n=1, cards=(3, 2), epsilon=0.3)
    prog, _ = assemble_monolithic(ds, params)
    a = ClarabelBackend().solve(prog)
    b = ScsBackend().solve(prog)
    assert abs(a.objective - b.objective) <= 1e-6
