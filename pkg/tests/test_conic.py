import math

import numpy as np
import pytest
import scipy.sparse as sp

from leohandover import conic
from leohandover.conic import BuildError, ConeBlock, ConeProgram, Status, add_complex_block, embed_complex

from conic_cases import all_cases, least_norm


def test_complex_block_embedding():
    prog = ConeProgram()
    w = add_complex_block(prog, 1)
    x = embed_complex([1 + 2j])
    np.testing.assert_array_equal(x, [1.0, 2.0])
    assert w.evaluate(x)[0] == 1 + 2j
    (re_row, re_c), _ = w.inner_rows([1 + 0j])
    np.testing.assert_array_equal(re_row.toarray(), [[1.0, 0.0]])
    assert re_c == 0.0


def test_complex_rows_match_arithmetic(rng):
    prog = ConeProgram()
    n = 5
    w = add_complex_block(prog, n)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x = embed_complex(v)
    (rr, rc), (ir, ic) = w.inner_rows(a)
    ip = np.vdot(a, v)
    assert abs((rr @ x)[0] + rc - ip.real) < 1e-12
    assert abs((ir @ x)[0] + ic - ip.imag) < 1e-12
    C = rng.standard_normal((3, n)) + 1j * rng.standard_normal((3, n))
    np.testing.assert_allclose(w.transform(C).evaluate(x), C @ v, atol=1e-12)
    M, off = w.transform(C).stacked()
    assert np.linalg.norm(M @ x + off) == pytest.approx(np.linalg.norm(C @ v))


def test_complex_block_dimension():
    with pytest.raises(BuildError):
        add_complex_block(ConeProgram(), 0)


@pytest.mark.parametrize("name,prog,truth", all_cases(), ids=lambda v: v if isinstance(v, str) else "")
def test_analytic_programs(name, prog, truth):
    res = conic.solve(prog)
    assert res.optimal, res.message
    assert abs(res.objective_value - truth) <= 1e-6 * (1 + abs(truth))


def test_least_norm_point():
    prog, truth = least_norm(np.array([[1.0, 1.0]]), np.array([1.0]))
    res = conic.solve(prog)
    np.testing.assert_allclose(res.x[:2], [0.5, 0.5], atol=1e-7)
    assert truth == pytest.approx(math.sqrt(0.5))


def test_infeasible_and_empty_rows():
    prog = ConeProgram()
    prog.add_variables(1)
    prog.add_linear_ineq([[1.0], [-1.0]], [-2.0, 1.0])  # x >= 2 and x <= 1
    assert conic.solve(prog).status is Status.INFEASIBLE
    prog = ConeProgram()
    prog.add_variables(2)
    prog.add_eq(sp.csr_matrix((1, 2)), [1.0])
    assert conic.solve(prog).status is Status.INFEASIBLE


def test_unbounded_reports_error():
    prog = ConeProgram()
    prog.add_variables(1)
    prog.add_objective([1.0])
    res = conic.solve(prog)
    assert not res.optimal


def test_feasibility_report():
    prog, _ = least_norm(np.eye(2), np.array([3.0, 4.0]))
    v = conic.check_feasibility(prog, np.array([3.0, 4.0, 5.0]))
    assert max(v.values()) <= 1e-12
    v = conic.check_feasibility(prog, np.array([3.0, 4.0, 4.9]))
    assert v["soc"] == pytest.approx(0.1, abs=1e-12)


def test_random_programs_self_consistent():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(2, 6))
        c = rng.standard_normal(n)
        prog = ConeProgram()
        prog.add_variables(n + 1)
        q = rng.standard_normal(n)
        prog.add_objective(np.r_[0.5 * q / np.linalg.norm(q), 1.0])  # bounded: ||q|| < 1
        prog.add_soc(sp.hstack([sp.identity(n), sp.csr_matrix((n, 1))]).tocsr(), -c,
                     np.r_[np.zeros(n), 1.0], 0.0)
        prog.add_linear_ineq(np.r_[rng.standard_normal(n), 0.0][None, :], [1.0])
        res = conic.solve(prog)
        assert res.optimal
        assert max(conic.check_feasibility(prog, res.x).values()) <= 10 * 1e-8 * (1 + np.abs(res.x).max())


def test_cone_block_equivalent_to_individual_cones():
    c = np.array([3.0, 4.0])
    prog = ConeProgram()
    prog.add_variables(3)
    prog.add_objective([0, 0, 1])
    G = sp.csr_matrix(np.array([[0, 0, 1.0], [1, 0, 0], [0, 1, 0], [1, 0, 0]]))
    prog.add_block(ConeBlock(G, np.array([0.0, -3.0, -4.0, 0.0]), (("soc", 3), ("nonneg", 1))))
    prog.add_eq([[0, 1.0, 0]], [0.0])
    res = conic.solve(prog)
    # x0 >= 0, x1 = 0: nearest point to (3,4) is (3,0)
    assert res.objective_value == pytest.approx(4.0, abs=1e-6)
    with pytest.raises(BuildError):
        ConeBlock(G, np.zeros(4), (("soc", 2),))


def test_dump_lists_every_family():
    prog, _ = least_norm(np.eye(2), np.array([3.0, 4.0]))
    prog.add_exp([[math.log(2), 0, 0], [0, 0, 0], [0, 0, 1]], [0, 1, 0])
    text = conic.dump_program(prog)
    assert "soc" in text and "exp" in text


def test_width_validation():
    prog = ConeProgram()
    prog.add_variables(2)
    prog.add_block(ConeBlock(sp.csr_matrix((1, 3)), np.zeros(1), (("nonneg", 1),)))
    with pytest.raises(BuildError):
        conic.solve(prog)
