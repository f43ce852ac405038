import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mpgmg.mesh_fem import ProblemSpec, assemble_rhs, assemble_stiffness
from mpgmg.multigrid import (BaseSolverConfig, BuildError, GridLevel,
                             SmootherConfig, VariantConfig, build_hierarchy,
                             cg_solve, hierarchy_from_matrices,
                             jacobi_smooth, restrict_with_cast)
from mpgmg.precision import FP16, FP32, FP64, round_array
from mpgmg.sparse import EllMatrix, PVector, TrafficCounter, norm2, residual
from oracles import linear_interpolation_1d, poisson_1d, two_grid_fp64


def _level(dense, prec):
    A = EllMatrix.from_dense(dense, prec)
    inv = PVector(round_array(1.0 / np.diag(dense), prec), prec)
    return GridLevel(A, inv, prec)


def test_variant_assignments():
    names = {p: p.name for p in (FP16, FP32, FP64)}
    get = lambda v: [names[p] for p in VariantConfig.named(v, 6).precisions]
    assert get('D_MG') == ['FP64'] * 6
    assert get('H_MG') == ['FP16'] * 6
    assert get('HSD_MG') == ['FP64', 'FP64', 'FP32', 'FP16', 'FP16', 'FP16']
    assert get('DSH_MG') == ['FP16', 'FP16', 'FP32', 'FP64', 'FP64', 'FP64']


@pytest.mark.parametrize("variant", ['D_MG', 'H_MG', 'HSD_MG', 'DSH_MG'])
def test_levels_carry_their_format(variant):
    spec = ProblemSpec(finest_nodes_per_dim=65)
    hier = build_hierarchy(spec, variant)
    for lvl, prec in zip(hier.levels, hier.variant.precisions):
        assert lvl.A.precision is prec and lvl.inv_diag.precision is prec
        if lvl.P_to_finer is not None:
            assert lvl.P_to_finer.precision is prec
    for c, f in zip(hier.levels, hier.levels[1:]):
        assert c.R_from_finer.precision is f.precision


def test_half_operator_cast_error():
    spec = ProblemSpec(finest_nodes_per_dim=33)
    hier = build_hierarchy(spec, 'H_MG')
    A64 = assemble_stiffness(spec.finest)
    err = np.abs(hier.finest.A.values - A64.values)
    assert np.all(err <= 2.0**-11 * np.abs(A64.values))


def test_3d_half_hierarchy_builds_without_overflow():
    hier = build_hierarchy(ProblemSpec(dim=3, finest_nodes_per_dim=33),
                           'H_MG')
    assert all(np.isfinite(l.A.values).all() and l.A.max_abs > 0
               for l in hier.levels)


def test_overflowing_level_raises_build_error():
    big = sp.csr_matrix(np.array([[1e5, 0.0], [0.0, 1.0]]))
    A = EllMatrix.from_scipy(big)
    P = EllMatrix.from_scipy(sp.csr_matrix(np.ones((2, 1))))
    Ac = EllMatrix.from_dense(np.array([[1.0]]))
    with pytest.raises(BuildError):
        hierarchy_from_matrices([Ac, A], [P], VariantConfig.named('H_MG', 2))


def test_jacobi_fixed_point_and_example():
    A = poisson_1d(3)
    lvl = _level(A, FP64)
    x = np.array([1.0, 2.0, 3.0])
    b = PVector(A @ x)
    u = jacobi_smooth(lvl, PVector(x), b, 5, 2 / 3)
    assert np.array_equal(u.data, x)
    u1 = jacobi_smooth(lvl, PVector.zeros(3), PVector(np.ones(3)), 1, 2 / 3)
    assert np.allclose(u1.data, np.full(3, 1 / 3), rtol=1e-15)


@pytest.mark.parametrize("nu", [(1, 1), (2, 1), (3, 3)])
@pytest.mark.parametrize("cg_iters", [1, 3])
def test_two_level_cycle_matches_two_grid_oracle(nu, cg_iters):
    Af, Ac = poisson_1d(7), poisson_1d(3) / 2.0
    P = linear_interpolation_1d(3)
    hier = hierarchy_from_matrices(
        [EllMatrix.from_dense(Ac), EllMatrix.from_dense(Af)],
        [EllMatrix.from_dense(P)], VariantConfig.named('D_MG', 2),
        SmootherConfig(*nu), BaseSolverConfig(fixed_iterations=cg_iters))
    rng = np.random.default_rng(11)
    for _ in range(5):
        b = rng.standard_normal(7)
        got = hier.cycle(PVector(b)).data
        want = two_grid_fp64(Af, Ac, P, list(b), nu[0], nu[1], 2 / 3,
                             cg_iters)
        assert np.array_equal(got, want)


@pytest.mark.parametrize("variant", ['D_MG', 'H_MG', 'HSD_MG', 'DSH_MG'])
def test_zero_rhs_gives_zero_correction(variant):
    hier = build_hierarchy(ProblemSpec(finest_nodes_per_dim=65), variant)
    z = hier.cycle(PVector.zeros(hier.finest.n, hier.finest.precision))
    assert np.all(z.data == 0.0)


def _cycle_contraction(hier, b, cycles):
    A = hier.finest.A
    u = PVector.zeros(len(b), FP64)
    r = b
    norms = [norm2(r)]
    for _ in range(cycles):
        # unit-norm input, as in the outer refinement loop
        alpha = norm2(r)
        c = hier.cycle(PVector(r.data / alpha))
        u = PVector(u.data + alpha * c.data)
        r = residual(A, u, b)
        norms.append(norm2(r))
    return np.array(norms[1:]) / np.array(norms[:-1])


def test_cycle_reduces_residual():
    spec = ProblemSpec(finest_nodes_per_dim=65)
    hier = build_hierarchy(spec, 'D_MG')
    b = assemble_rhs(spec.finest, 1)
    rho = _cycle_contraction(hier, b, 3)
    assert np.all(rho <= 0.5)


def test_contraction_is_grid_independent():
    rates = []
    for n in (33, 65, 129):
        spec = ProblemSpec(finest_nodes_per_dim=n, base_nodes_per_dim=9)
        hier = build_hierarchy(spec, 'D_MG')
        b = PVector(np.random.default_rng(0).standard_normal(
            spec.finest.n_unknowns))
        rates.append(_cycle_contraction(hier, b, 6)[-1])
    assert max(rates) < 0.1
    assert max(rates) - min(rates) < 0.02


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-8, 8))
def test_cycle_is_linear_in_binary64(seed, s):
    base = BaseSolverConfig(fixed_iterations=20)
    hier = build_hierarchy(ProblemSpec(finest_nodes_per_dim=33), 'D_MG',
                           base=base)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(hier.finest.n)
    y = rng.standard_normal(hier.finest.n)
    lhs = hier.cycle(PVector(x + s * y)).data
    rhs = hier.cycle(PVector(x)).data + s * hier.cycle(PVector(y)).data
    scale = np.abs(hier.cycle(PVector(x)).data).max() * (1 + abs(s))
    assert np.abs(lhs - rhs).max() <= 1e-10 * scale


def test_restrict_with_cast_examples():
    R = EllMatrix.from_dense(linear_interpolation_1d(3).T)
    r = PVector(np.full(7, 1e-6))
    plain, s1 = restrict_with_cast(R, r, FP16)
    assert s1 == 1.0 and plain.precision is FP16
    assert np.all(plain.data == 0.0)
    scaled, s2 = restrict_with_cast(R, r, FP16, rescale=True)
    assert s2 == pytest.approx(np.sqrt(3) * 2e-6)
    assert np.allclose(scaled.data * s2, 2e-6, rtol=2.0**-11)
    zero, s3 = restrict_with_cast(R, PVector.zeros(7), FP16, rescale=True)
    assert s3 == 1.0 and np.all(zero.data == 0.0)


def test_cg_solves_small_system():
    A = poisson_1d(10)
    lvl = _level(A, FP64)
    b = np.arange(1.0, 11.0)
    res = cg_solve(lvl, PVector(b), BaseSolverConfig(tolerance=1e-12))
    assert res.converged and res.iterations <= 10
    assert np.allclose(res.u.data, np.linalg.solve(A, b), rtol=1e-12)


def test_cg_stops_immediately_on_small_rhs():
    lvl = _level(poisson_1d(5), FP64)
    res = cg_solve(lvl, PVector(np.full(5, 1e-6)))
    assert res.iterations == 0 and res.converged


def test_cg_in_half_precision():
    A = poisson_1d(15)
    lvl = _level(A, FP16)
    b = np.sin(np.linspace(0.1, 3.0, 15))
    big = cg_solve(lvl, PVector(round_array(b, FP16), FP16),
                   BaseSolverConfig(tolerance=1e-2, max_iterations=60))
    assert big.converged
    x = np.linalg.solve(A, round_array(b, FP16))
    assert np.abs(big.u.data - x).max() <= 0.05 * np.abs(x).max()
    tiny = round_array(b * 1e-6, FP16)
    assert np.all(tiny == 0.0)


@pytest.mark.parametrize("variant", ['H_MG', 'HSD_MG', 'DSH_MG'])
def test_traffic_ratio_against_double(variant):
    spec = ProblemSpec(finest_nodes_per_dim=257)
    base = BaseSolverConfig(fixed_iterations=10)
    out = {}
    for v in ('D_MG', variant):
        hier = build_hierarchy(spec, v, base=base)
        b = PVector(round_array(np.random.default_rng(0).standard_normal(
            hier.finest.n) * 1e-2, hier.finest.precision),
            hier.finest.precision)
        hier.cycle(b)
        out[v] = hier.traffic().value_bytes
    ratio = out[variant] / out['D_MG']
    if variant == 'H_MG':
        assert ratio == 0.25
    elif variant == 'HSD_MG':
        assert 0.25 < ratio < 1.0
    else:
        assert ratio > 0.9


def test_validation_mode_runs_clean():
    spec = ProblemSpec(finest_nodes_per_dim=65)
    for v in ('H_MG', 'HSD_MG', 'DSH_MG'):
        hier = build_hierarchy(spec, v, validate=True)
        b = PVector(round_array(np.full(hier.finest.n, 1e-3),
                                hier.finest.precision), hier.finest.precision)
        assert hier.cycle(b).is_finite()


def test_validation_mode_catches_wrong_format():
    hier = build_hierarchy(ProblemSpec(finest_nodes_per_dim=33), 'H_MG',
                           validate=True)
    with pytest.raises(AssertionError):
        hier.cycle(PVector(np.full(hier.finest.n, 0.1)))


def test_traffic_counter_arithmetic():
    a = TrafficCounter()
    a.add(read=10, written=6, flops=3, index=4)
    b = a.copy()
    b += a
    assert (b.bytes_read, b.bytes_written, b.flops) == (28, 12, 6)
    assert b.value_bytes == 32
    a.reset()
    assert a.value_bytes == 0 and b.value_bytes == 32


def test_fp32_level_vectors_are_fp32():
    hier = build_hierarchy(ProblemSpec(finest_nodes_per_dim=65), 'HSD_MG',
                           validate=True)
    assert hier.levels[2].precision is FP32
