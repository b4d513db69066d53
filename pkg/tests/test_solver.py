import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import ConfigError
from mask import PruneMask
from oracle import solve_batch_direct, solve_direct
from qp_build import ReducedQp, build_batch, reduce
from solver import (
    RestartPolicy, SolveStatus, SolverConfig, estimate_lipschitz,
    solve_baseline_momentum, solve_batch,
)
from synthetic import random_instance, random_spd
from tensor import DenseMatrix
from verify import DEFAULT_SOLVER_TOL

TIGHT = SolverConfig.with_tol(1e-10)


def _solve(h, w, mask, cfg=TIGHT):
    return solve_batch(build_batch(h, DenseMatrix(w), PruneMask(mask)), cfg)


def test_lipschitz_diagonal():
    assert estimate_lipschitz(np.diag([1.0, 4.0])) == pytest.approx(8.0, rel=1e-2)


def test_lipschitz_identity():
    assert estimate_lipschitz(np.eye(5)) == pytest.approx(2.0, rel=1e-9)


def test_lipschitz_zero_matrix_floor():
    assert estimate_lipschitz(np.zeros((3, 3))) == 1e-12


def test_lipschitz_matches_dense_eigen(make_spd):
    from scipy.linalg import eigh

    h = make_spd(32, cond=50.0)
    top = eigh(h, eigvals_only=True)[-1]
    assert estimate_lipschitz(h) == pytest.approx(2.0 * top, rel=2e-2)


def test_identity_hessian_decouples():
    w = np.array([[1.0, -2.0], [3.0, 0.5], [-1.0, 4.0]])
    mask = np.array([[True, False], [False, True], [True, True]])
    results = _solve(np.eye(3), w, mask, SolverConfig())
    for r in results:
        assert r.status is SolveStatus.CONVERGED
        assert r.iterations <= 2
    assert_allclose(results[0].delta, [0.0, -3.0, 0.0], atol=1e-12)
    assert_allclose(results[1].delta, [2.0, 0.0, 0.0], atol=1e-12)


def test_coupled_two_by_two():
    h = np.array([[2.0, 1.0], [1.0, 2.0]])
    (r,) = _solve(h, np.array([[1.0], [0.5]]), np.array([[True], [False]]))
    assert r.status is SolveStatus.CONVERGED
    assert_allclose(r.delta, [0.25, -0.5], atol=1e-8)
    assert r.delta[1] == -0.5


def test_no_pruning_converges_at_start(make_spd):
    (r,) = _solve(make_spd(6), np.ones((6, 1)), np.ones((6, 1), dtype=bool))
    assert r.status is SolveStatus.CONVERGED
    assert r.iterations == 0
    assert not r.delta.any()


def test_fixed_entries_bit_exact(rng, make_spd):
    h = make_spd(16, cond=1e3)
    w = rng.standard_normal((16, 5)).astype(np.float32)
    mask = rng.random((16, 5)) > 0.5
    for j, r in enumerate(_solve(h, w, mask, SolverConfig())):
        pruned = ~mask[:, j]
        assert_array_equal(r.delta[pruned], -w[pruned, j].astype(np.float64))


def test_dominance_and_strict_improvement(rng):
    for trial in range(20):
        inst = random_instance(24, rng, cols=6)
        batch = build_batch(inst.hessian, inst.weights, inst.mask)
        for problem, r in zip(batch.columns, solve_batch(batch, SolverConfig())):
            assert r.objective <= r.zeroing_objective
            reduced = reduce(inst.hessian, problem.w, problem.pruned_idx)
            coupling = np.max(np.abs(reduced.c / 2.0), initial=0.0)
            if coupling > 1e-6:
                assert r.objective < (1.0 - 1e-6) * r.zeroing_objective


def test_agrees_with_oracle(rng):
    for d in (8, 32, 128):
        for _ in range(5):
            inst = random_instance(d, rng)
            batch = build_batch(inst.hessian, inst.weights, inst.mask)
            for it, ref in zip(solve_batch(batch, SolverConfig.with_tol(1e-8)), solve_batch_direct(batch)):
                scale = 1.0 + np.max(np.abs(ref.delta))
                assert np.max(np.abs(it.delta - ref.delta)) <= 1e-3 * scale


def test_batch_matches_one_column_at_a_time(rng, make_spd):
    h = make_spd(20, cond=200.0)
    w = DenseMatrix(rng.standard_normal((20, 6)))
    mask = PruneMask(rng.random((20, 6)) > 0.5)
    # unreachable tolerance: every column runs the same 400 iterations
    cfg = SolverConfig(restart_policy=RestartPolicy.parse("fixed:50"), max_iters=400, rel_tol=1e-300, abs_tol=1e-300)
    lipschitz = estimate_lipschitz(h)
    together = solve_batch(build_batch(h, w, mask), cfg, lipschitz)
    for j, r in enumerate(together):
        (alone,) = solve_batch(build_batch(h, w, mask, range(j, j + 1)), cfg, lipschitz)
        assert r.column == alone.column == j
        assert r.iterations == alone.iterations
        assert_allclose(r.delta, alone.delta, rtol=1e-9, atol=1e-12)


def test_restart_objectives_never_increase(rng):
    inst = random_instance(64, rng, cols=8, cond=1e3)
    batch = build_batch(inst.hessian, inst.weights, inst.mask)
    cfg = SolverConfig.with_tol(1e-10, restart_policy=RestartPolicy.parse("fixed:20"))
    for r in solve_batch(batch, cfg):
        assert r.restarts == len(r.restart_objectives)
        assert r.restarts > 0
        assert all(b <= a for a, b in zip(r.restart_objectives, r.restart_objectives[1:]))


def test_max_iters_status(rng):
    inst = random_instance(32, rng, cols=3, cond=1e4)
    batch = build_batch(inst.hessian, inst.weights, inst.mask)
    results = solve_batch(batch, SolverConfig.with_tol(1e-12, max_iters=3))
    assert all(r.status is SolveStatus.MAX_ITERS for r in results)
    assert all(r.iterations == 3 for r in results)
    assert all(r.objective <= r.zeroing_objective for r in results)


def test_non_finite_iterates_are_degenerate():
    h = np.array([[1e300, 1e299], [1e299, 1e300]])
    # tiny Lipschitz override forces an enormous step
    (r,) = solve_batch(build_batch(h, DenseMatrix([[1.0], [1.0]]), PruneMask([[True], [False]])),
                       SolverConfig(), lipschitz=1e-300)
    assert r.status is SolveStatus.DEGENERATE
    assert np.isfinite(r.delta).all()
    assert r.delta[1] == -1.0


def test_restart_policy_parsing():
    assert str(RestartPolicy.parse("adaptive")) == "adaptive"
    assert RestartPolicy.parse("fixed:25").period == 25
    for bad in ("fixed", "fixed:x", "sometimes", "fixed:0"):
        with pytest.raises(ConfigError):
            RestartPolicy.parse(bad)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(rel_tol=0.0)
    with pytest.raises(ConfigError):
        SolverConfig(max_iters=0)


def test_baseline_scalar_problem():
    reduced = reduce(np.array([[2.0, 1.0], [1.0, 2.0]]), np.array([1.0, 0.5]), [1])
    assert solve_baseline_momentum(reduced)[0] == pytest.approx(0.25, abs=1e-2)


def test_baseline_zero_linear_term_stays_at_origin(make_spd):
    reduced = reduce(make_spd(4), np.ones(4), [])
    assert_array_equal(solve_baseline_momentum(reduced), np.zeros(4))


def _stiff_problem() -> ReducedQp:
    return ReducedQp(
        q=np.diag([1e6, 1e6]),
        c=np.array([-1.0, 1.0]),
        const_term=0.0,
        kept_idx=np.arange(2),
        pruned_idx=np.array([], dtype=np.intp),
    )


def test_baseline_divergence_falls_back_to_zero():
    assert_array_equal(solve_baseline_momentum(_stiff_problem()), np.zeros(2))


def test_adam_baseline_stays_finite_on_stiff_problem():
    z = solve_baseline_momentum(_stiff_problem(), method="adam")
    assert np.isfinite(z).all()


def test_baseline_rejects_unknown_method():
    with pytest.raises(ConfigError):
        solve_baseline_momentum(_stiff_problem(), method="sgd")


def test_baseline_gap_on_ill_conditioned_instances(rng):
    worse = 0
    for _ in range(20):
        h = random_spd(16, 1e5, rng)
        w = DenseMatrix(rng.standard_normal((16, 1)))
        mask = PruneMask(np.arange(16)[:, None] % 2 == 0)
        batch = build_batch(h, w, mask)
        (problem,) = batch.columns
        reduced = reduce(h, problem.w, problem.pruned_idx)

        oracle_f = reduced.value(solve_direct(reduced))
        base_f = reduced.value(solve_baseline_momentum(reduced))
        (qp,) = solve_batch(batch, SolverConfig.with_tol(DEFAULT_SOLVER_TOL))
        assert base_f >= oracle_f - 1e-9 * abs(oracle_f)
        if base_f > qp.objective + 1e-9 * abs(qp.objective):
            worse += 1
    assert worse >= 1
