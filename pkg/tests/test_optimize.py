import math

import numpy as np
import pytest

from probprecode import (
    ConvergenceError,
    InfeasibleRateError,
    InvalidArgumentError,
    JointPmf,
    PrecodingFilter,
    ShapingProblem,
    ShapingSolution,
    conditional_entropy,
    entropy,
    grid_oracle,
    kl_divergence,
    make_constellation,
    solve_markov_shaping,
    solve_maxwell_boltzmann,
    stationarity_residual,
    transmit_power,
)
from oracles import ask_points, mb_by_newton, perron_optimum

C2, C4, C8 = (make_constellation(m) for m in (2, 4, 8))


def solve(m_b, taps, rate, **kw):
    return solve_markov_shaping(
        ShapingProblem(make_constellation(m_b), PrecodingFilter(tuple(taps)), rate, **kw))


def check_contract(sol, taps, rate):
    assert sol.entropy >= rate - 1e-6
    assert stationarity_residual(sol.pmf) <= 1e-8
    assert abs(sol.pmf.probs.sum() - 1.0) <= 1e-10
    assert np.all(sol.pmf.probs >= 0)
    assert sol.power == pytest.approx(transmit_power(sol.pmf, PrecodingFilter(tuple(taps))),
                                      abs=1e-10)
    assert sol.kkt_residual <= 1e-8


# Maxwell-Boltzmann


def test_mb_uniform_at_full_rate():
    mb = solve_maxwell_boltzmann(C4, 2.0)
    assert mb.lam == 0.0
    np.testing.assert_allclose(mb.probs, 0.25)
    assert mb.power == pytest.approx(5.0)


@pytest.mark.parametrize("rate", [0.5, 1.0, 2.01])
def test_mb_infeasible(rate):
    with pytest.raises(InfeasibleRateError):
        solve_maxwell_boltzmann(C4, rate)


@pytest.mark.parametrize("m_b,rate", [(4, 1.5), (8, 2.0), (8, 2.7), (16, 3.0), (16, 1.2)])
def test_mb_entropy_and_oracle(m_b, rate):
    c = make_constellation(m_b)
    mb = solve_maxwell_boltzmann(c, rate)
    assert entropy(mb.probs) == pytest.approx(rate, abs=1e-9)
    np.testing.assert_allclose(mb.probs, mb.probs[::-1], atol=1e-15)
    assert mb.probs.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(mb.probs, mb_by_newton(ask_points(m_b), rate), atol=1e-9)
    np.testing.assert_allclose(mb.probs, mb.normalizer * np.exp(-mb.lam * c.array ** 2),
                               rtol=1e-12)


# Markov shaping solver


def test_solver_full_rate_binary():
    sol = solve(2, (1, 0.9), 1.0)
    np.testing.assert_allclose(sol.pmf.probs, 0.25, atol=1e-8)
    assert sol.power == pytest.approx(1.81, abs=1e-12)
    assert sol.entropy == pytest.approx(1.0)


def test_solver_delta_filter_is_mb():
    sol = solve(4, (1,), 1.5)
    check_contract(sol, (1,), 1.5)
    mb = solve_maxwell_boltzmann(C4, 1.5)
    np.testing.assert_allclose(sol.pmf.probs, mb.probs, atol=1e-6)


def test_solver_matches_grid_oracle():
    sol = solve(2, (1, 0.9), 0.5)
    ref = grid_oracle(C2, PrecodingFilter((1, 0.9)), 0.5)
    assert abs(sol.power - ref.power) <= 1e-3
    assert sol.power <= ref.power + 1e-9


# Perron-Frobenius oracle: the optimal stationary chain on the entropy
# boundary, obtained without any barrier or Newton machinery.
PERRON_CASES = [
    (2, (1, 0.9), 0.5),
    (2, (1, -0.4), 0.8),
    (2, (1, 0.5, 0.3), 0.6),
    (4, (1, 0.7), 1.5),
    (4, (1, 0.3, -0.6), 1.2),
    (8, (1, 0.5), 2.0),
    (8, (1, 1.0), 2.5),
    (4, (1, 0.2, 0.1, 0.5), 1.7),
]


@pytest.mark.parametrize("m_b,taps,rate", PERRON_CASES)
def test_solver_matches_perron(m_b, taps, rate):
    sol = solve(m_b, taps, rate)
    check_contract(sol, taps, rate)
    h_ref, p_ref = perron_optimum(m_b, taps, rate)
    assert h_ref == pytest.approx(rate, abs=1e-9)
    assert sol.power == pytest.approx(p_ref, abs=1e-8)


@pytest.mark.slow
@pytest.mark.parametrize("m_b,taps,rate", [(8, (1, 0.5, 0.3), 2.0), (16, (1, 0.6), 3.0)])
def test_solver_matches_perron_large(m_b, taps, rate):
    sol = solve(m_b, taps, rate)
    check_contract(sol, taps, rate)
    assert sol.power == pytest.approx(perron_optimum(m_b, taps, rate)[1], abs=1e-8)


def test_solver_binding_entropy():
    sol = solve(4, (1, 0.7), 1.5)
    assert sol.entropy == pytest.approx(1.5, abs=1e-9)


def test_solver_deterministic():
    a = solve(4, (1, 0.3, -0.6), 1.2)
    b = solve(4, (1, 0.3, -0.6), 1.2)
    np.testing.assert_array_equal(a.pmf.probs, b.pmf.probs)
    assert a.iterations == b.iterations


def test_solver_beats_mb_through_filter():
    taps = (1, 0.6)
    sol = solve(8, taps, 2.0)
    mb = solve_maxwell_boltzmann(C8, 2.0)
    iid = JointPmf.iid(C8, mb.probs, 2)
    assert sol.power <= transmit_power(iid, PrecodingFilter(taps)) + 1e-12


def test_solver_infeasible_rate():
    with pytest.raises(InfeasibleRateError):
        ShapingProblem(C4, PrecodingFilter((1, 0.5)), 2.5)


def test_solver_invalid_rate():
    with pytest.raises(InvalidArgumentError):
        ShapingProblem(C4, PrecodingFilter((1, 0.5)), 0.0)


def test_solver_size_cap():
    with pytest.raises(InvalidArgumentError):
        solve(64, (1, 0, 0, 0.1), 2.0)


def test_solver_reports_nonconvergence():
    with pytest.raises(ConvergenceError) as info:
        solve(4, (1, 0.7), 1.5, max_iter=1)
    assert isinstance(info.value.solution, ShapingSolution)
    assert not info.value.solution.converged


def test_solution_json_round_trip():
    sol = solve(2, (1, 0.9), 0.5)
    back = ShapingSolution.from_json(sol.to_json())
    np.testing.assert_array_equal(back.pmf.probs, sol.pmf.probs)
    assert (back.power, back.entropy, back.iterations) == (sol.power, sol.entropy, sol.iterations)
    assert set(sol.to_dict()) == {"pmf", "power", "entropy", "kkt_residual", "iterations"}


# Grid oracle


def test_grid_identity_filter_full_rate():
    ref = grid_oracle(C2, PrecodingFilter((1, 0)), 1.0)
    assert ref.power == pytest.approx(1.0)
    np.testing.assert_allclose(ref.pmf.probs, 0.25, atol=1e-12)


def test_grid_alternation_and_mirror():
    plus = grid_oracle(C2, PrecodingFilter((1, 1)), 0.5)
    minus = grid_oracle(C2, PrecodingFilter((1, -1)), 0.5)
    assert plus.power < 2.0
    p = plus.pmf.probs
    assert p[0, 1] > p[0, 0] and p[1, 0] > p[1, 1]
    q = minus.pmf.probs
    assert q[0, 0] > q[0, 1] and q[1, 1] > q[1, 0]
    # equal up to the boundary bisection tolerance of the oracle
    assert plus.power == pytest.approx(minus.power, abs=1e-8)
    assert conditional_entropy(plus.pmf) >= 0.5


def test_grid_unsupported():
    with pytest.raises(InvalidArgumentError):
        grid_oracle(C4, PrecodingFilter((1, 0.5)), 1.0)


# KL divergence


def test_kl_examples():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(1.0)
    h2 = -(0.2 * math.log2(0.2) + 0.8 * math.log2(0.8))
    assert kl_divergence([0.2, 0.8], [0.5, 0.5]) == pytest.approx(1 - h2, abs=1e-14)
    assert kl_divergence([0.2, 0.8], [0.5, 0.5]) == pytest.approx(0.278072, abs=1e-6)


def test_kl_absolute_continuity():
    with pytest.raises(InvalidArgumentError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        kl_divergence([1.0], [0.5, 0.5])
