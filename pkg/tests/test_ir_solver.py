import numpy as np
import pytest
import scipy.sparse.linalg as spla

from mpgmg.ir_solver import (DivergenceError, IrConfig, initial_guess,
                             ir_solve, residual_norm, solve_problem)
from mpgmg.mesh_fem import ProblemSpec, assemble_rhs, assemble_stiffness
from mpgmg.multigrid import build_hierarchy
from mpgmg.precision import FP16
from mpgmg.sparse import EllMatrix, PVector, UsageError

SPEC = ProblemSpec(finest_nodes_per_dim=65)


def test_zero_rhs_returns_zero_immediately():
    hier = build_hierarchy(SPEC, 'H_MG')
    A = assemble_stiffness(SPEC.finest)
    u, rep = ir_solve(A, PVector.zeros(A.n_rows), hier)
    assert rep.converged and rep.iterations == 0
    assert np.all(u.data == 0.0)


def test_double_solve_agrees_with_direct_solve():
    u, rep = solve_problem(SPEC, 'D_MG')
    assert rep.converged and rep.final_residual < 1e-9
    A = assemble_stiffness(SPEC.finest).to_scipy().tocsc()
    ref = spla.spsolve(A, assemble_rhs(SPEC.finest, 1).data)
    h2 = SPEC.finest.h ** 2
    assert np.sqrt(h2 * np.sum((u.data - ref) ** 2)) <= 1e-8


def test_residual_norm_matches_oracle():
    rng = np.random.default_rng(0)
    A = assemble_stiffness(SPEC.finest)
    u = rng.standard_normal(A.n_rows)
    b = rng.standard_normal(A.n_rows)
    want = np.linalg.norm(b - A.to_scipy() @ u)
    assert residual_norm(A, PVector(u), PVector(b)) == pytest.approx(
        want, rel=1e-12)
    with pytest.raises(UsageError):
        residual_norm(A.astype(FP16), PVector(u), PVector(b))


def test_scaling_is_a_no_op_for_double():
    cfg = dict(initial_guess='random', seed=3)
    _, on = solve_problem(SPEC, 'D_MG', IrConfig(residual_scaling=True, **cfg))
    _, off = solve_problem(SPEC, 'D_MG',
                           IrConfig(residual_scaling=False, **cfg))
    assert on.iterations == off.iterations
    assert np.allclose(on.residual_history, off.residual_history, rtol=1e-6)


@pytest.mark.parametrize("variant", ['D_MG', 'H_MG', 'HSD_MG', 'DSH_MG'])
def test_every_variant_converges_with_monotone_tail(variant):
    _, rep = solve_problem(SPEC, variant,
                           IrConfig(initial_guess='random', seed=1))
    assert rep.converged and rep.iterations <= 15
    h = np.array(rep.residual_history)
    assert np.all(h[2:] < h[1:-1])


def test_scaled_half_residual_never_flushes():
    _, rep = solve_problem(SPEC, 'H_MG', IrConfig(initial_guess='random'))
    assert rep.converged
    assert min(rep.min_nonzero_low) >= FP16.min_normal


def test_random_guess_is_reproducible():
    cfg = IrConfig(initial_guess='random', seed=42)
    a, b = initial_guess(100, cfg), initial_guess(100, cfg)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(
        a.data, initial_guess(100, IrConfig(initial_guess='random')).data)


def test_non_convergence_is_reported():
    _, rep = solve_problem(SPEC, 'H_MG', IrConfig(max_outer_iterations=2))
    assert not rep.converged and rep.iterations == 2
    assert len(rep.residual_history) == 3


def test_non_finite_residual_raises_divergence():
    hier = build_hierarchy(SPEC, 'D_MG')
    A = assemble_stiffness(SPEC.finest)
    b = assemble_rhs(SPEC.finest, 1)
    u0 = PVector.zeros(A.n_rows)
    u0.data[5] = np.inf
    with pytest.raises(DivergenceError) as err:
        ir_solve(A, b, hier, u0=u0)
    assert err.value.iteration == 0


def test_mismatched_outer_system_is_rejected():
    hier = build_hierarchy(SPEC, 'D_MG')
    A = EllMatrix.from_dense(np.eye(3))
    with pytest.raises(UsageError):
        ir_solve(A, PVector.zeros(3), hier)
    with pytest.raises(UsageError):
        IrConfig(outer_tolerance=0.0)


def test_traffic_is_split_into_outer_and_multigrid():
    _, rep = solve_problem(SPEC, 'H_MG')
    assert set(rep.traffic) == {'outer', 'multigrid'}
    assert rep.value_bytes == sum(c.value_bytes for c in rep.traffic.values())
    assert rep.traffic['multigrid'].value_bytes > 0
