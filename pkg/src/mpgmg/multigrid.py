"""Geometric multigrid V-cycle with a floating-point format per grid level.

Level 0 is the coarsest grid. Each level stores its operator and inverse
diagonal in its own format. Transfers change format on the fly: restriction
runs in the finer level's format and its result is cast to the coarser one;
prolongation runs in the coarser level's format and its result is cast to
the finer one.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from mpgmg import _kernels
from mpgmg.mesh_fem import (ProblemSpec, assemble_stiffness,
                            assemble_transfer)
from mpgmg.precision import (DEFAULT_POLICY, FP16, FP32, FP64, PrecisionTag,
                             round_array)
from mpgmg.sparse import (EllMatrix, PVector, TrafficCounter, UsageError,
                          _charge_spmv, axpy, cast_vector, dot, norm2,
                          residual, spmv)

__all__ = ['BuildError', 'VariantConfig', 'SmootherConfig',
           'BaseSolverConfig', 'GridLevel', 'MgHierarchy', 'CgResult',
           'build_hierarchy', 'hierarchy_from_matrices', 'jacobi_smooth',
           'restrict_with_cast', 'prolongate_add', 'cg_solve', 'v_cycle',
           'VARIANTS']

log = logging.getLogger(__name__)

VARIANTS = ('D_MG', 'H_MG', 'DSH_MG', 'HSD_MG')


class BuildError(RuntimeError):
    """A level cannot be represented in its assigned format."""


@dataclass(frozen=True)
class VariantConfig:
    """Named assignment of a format to every level (index 0 = coarsest)."""

    name: str
    precisions: tuple

    @classmethod
    def named(cls, name, n_levels):
        """``D_MG``: all binary64. ``H_MG``: all binary16. ``HSD_MG``:
        levels 0-1 binary64, level 2 binary32, the rest binary16.
        ``DSH_MG``: the reverse (0-1 binary16, 2 binary32, rest binary64).
        """
        name = name.upper()
        if name == 'D_MG':
            precs = [FP64] * n_levels
        elif name == 'H_MG':
            precs = [FP16] * n_levels
        elif name in ('HSD_MG', 'DSH_MG'):
            low, high = (FP64, FP16) if name == 'HSD_MG' else (FP16, FP64)
            precs = [low if lvl < 2 else FP32 if lvl == 2 else high
                     for lvl in range(n_levels)]
        else:
            raise UsageError(f"unknown variant {name!r}; "
                             f"expected one of {', '.join(VARIANTS)}")
        return cls(name, tuple(precs))

    @property
    def finest(self):
        return self.precisions[-1]


@dataclass(frozen=True)
class SmootherConfig:
    nu1: int = 3
    nu2: int = 3
    omega: float = 2.0 / 3.0

    def __post_init__(self):
        if self.nu1 < 0 or self.nu2 < 0:
            raise UsageError("smoothing step counts must be non-negative")
        if not 0.0 < self.omega <= 1.0:
            raise UsageError("omega must lie in (0, 1]")


@dataclass(frozen=True)
class BaseSolverConfig:
    """CG on the coarsest level.

    ``tolerance`` is an absolute bound on the residual norm of a correction
    equation whose right-hand side has been normalized to unit norm at the
    finest level. ``max_iterations`` defaults to ten times the number of
    base unknowns. ``fixed_iterations`` runs exactly that many steps,
    ignoring the tolerance.
    """

    tolerance: float = 1e-4
    max_iterations: int = None
    fixed_iterations: int = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise UsageError("base solver tolerance must be positive")


@dataclass
class GridLevel:
    """Operators of one level.

    ``P_to_finer`` interpolates this level to the next finer one and is
    stored in this level's format. ``R_from_finer`` restricts the finer
    level to this one and is stored in the finer level's format, in which it
    is applied.
    """

    A: EllMatrix
    inv_diag: PVector
    precision: PrecisionTag
    P_to_finer: EllMatrix = None
    R_from_finer: EllMatrix = None
    counter: TrafficCounter = field(default_factory=TrafficCounter)

    @property
    def n(self):
        return self.A.n_rows


@dataclass
class MgHierarchy:
    levels: list
    variant: VariantConfig
    smoother: SmootherConfig = SmootherConfig()
    base: BaseSolverConfig = BaseSolverConfig()
    policy: object = DEFAULT_POLICY
    rescale_transitions: bool = True
    validate: bool = False
    base_history: list = field(default_factory=list)

    @property
    def finest(self):
        return self.levels[-1]

    @property
    def n_levels(self):
        return len(self.levels)

    def traffic(self):
        total = TrafficCounter()
        for lvl in self.levels:
            total += lvl.counter
        return total

    def reset_traffic(self):
        for lvl in self.levels:
            lvl.counter.reset()

    def cycle(self, b, rhs_scale=1.0):
        """One V-cycle on the finest level with zero initial guess."""
        return v_cycle(self, self.n_levels - 1, b, rhs_scale)


def _cast_level_matrix(A, precision, policy, level):
    if precision is FP16 and A.max_abs > 65504.0:
        raise BuildError(f"level {level}: |{A.label or 'matrix'}| entry "
                         f"{A.max_abs:g} overflows binary16")
    return A.astype(precision, policy)


def hierarchy_from_matrices(matrices, prolongations, variant, smoother=None,
                            base=None, policy=DEFAULT_POLICY,
                            rescale_transitions=True, validate=False):
    """Assemble a hierarchy from binary64 operators.

    ``matrices[l]`` is the operator of level ``l`` (0 = coarsest) and
    ``prolongations[l]`` maps level ``l`` to ``l + 1``. Restrictions are the
    transposes of the prolongations. Everything is cast to the formats of
    ``variant``.
    """
    n = len(matrices)
    if len(prolongations) != n - 1:
        raise UsageError("need one prolongation per pair of levels")
    if len(variant.precisions) != n:
        raise UsageError(f"variant {variant.name} covers "
                         f"{len(variant.precisions)} levels, hierarchy has {n}")
    levels = []
    for lvl, A64 in enumerate(matrices):
        prec = variant.precisions[lvl]
        A = _cast_level_matrix(A64, prec, policy, lvl)
        inv_diag = PVector(round_array(1.0 / A64.diagonal(), prec, policy),
                           prec)
        levels.append(GridLevel(A, inv_diag, prec))
    for lvl, P64 in enumerate(prolongations):
        coarse, fine = levels[lvl], levels[lvl + 1]
        if P64.shape != (fine.n, coarse.n):
            raise UsageError(f"prolongation {lvl} has shape {P64.shape}")
        R64 = EllMatrix.from_scipy(P64.to_scipy().T, FP64,
                                   label=f"R{lvl}")
        coarse.P_to_finer = _cast_level_matrix(P64, coarse.precision,
                                               policy, lvl)
        coarse.R_from_finer = _cast_level_matrix(R64, fine.precision,
                                                 policy, lvl + 1)
    return MgHierarchy(levels, variant,
                       smoother if smoother is not None else SmootherConfig(),
                       base if base is not None else BaseSolverConfig(),
                       policy, rescale_transitions, validate)


def build_hierarchy(spec, variant, smoother=None, base=None,
                    policy=DEFAULT_POLICY, rescale_transitions=True,
                    validate=False):
    """Discretize every level of ``spec`` and cast it per ``variant``.

    ``variant`` may be a :class:`VariantConfig` or a variant name.
    """
    if not isinstance(spec, ProblemSpec):
        raise UsageError("spec must be a ProblemSpec")
    if spec.levels < 2:
        raise UsageError("a multigrid hierarchy needs at least 2 levels")
    if isinstance(variant, str):
        variant = VariantConfig.named(variant, spec.levels)
    grids = spec.grids()
    matrices = [assemble_stiffness(g) for g in grids]
    prolongations = [assemble_transfer(grids[i + 1], grids[i])[0]
                     for i in range(len(grids) - 1)]
    return hierarchy_from_matrices(matrices, prolongations, variant, smoother,
                                   base, policy, rescale_transitions,
                                   validate)


def _check_level(hier, level, *vectors):
    for v in vectors:
        if v.precision is not level.precision:
            raise AssertionError(f"vector in {v.precision} on a "
                                 f"{level.precision} level")
        if not v.is_finite():
            raise AssertionError(f"non-finite entries on a "
                                 f"{level.precision} level")
        if not v.is_consistent():
            raise AssertionError(f"entries not representable in "
                                 f"{level.precision}")


def jacobi_smooth(level, u, b, steps, omega, policy=DEFAULT_POLICY):
    """Damped Jacobi: ``u <- u + omega * inv_diag * (b - A u)``, ``steps``
    times, entirely in the level's format."""
    p = level.precision
    A = level.A
    om = float(round_array(np.array([omega]), p, policy)[0])
    acc = policy.accumulation_code(p)
    for _ in range(steps):
        out = np.empty(level.n)
        _kernels.jacobi_sweep(A.values, A.col_index, u.data, b.data,
                              level.inv_diag.data, om, out, p.code, acc,
                              policy.fused_multiply_add,
                              policy.flush_subnormals_to_zero)
        _charge_spmv(level.counter, A, p, p)
        level.counter.add(read=3 * level.n * p.bytes_per_value,
                          flops=4 * level.n)
        u = PVector(out, p)
    return u


def restrict_with_cast(R, r_fine, coarse_precision, rescale=False,
                       policy=DEFAULT_POLICY, counter=None):
    """Restrict in the fine format, then cast to ``coarse_precision``.

    With ``rescale`` the restricted residual is divided by its euclidean
    norm before the cast. Returns ``(r_coarse, scale)``; ``scale`` is 1 when
    no rescaling happened (also for a zero residual).
    """
    y = spmv(R, r_fine, policy, counter)
    scale = 1.0
    if rescale:
        nrm = norm2(y, counter)
        if nrm > 0.0 and np.isfinite(nrm):
            scale = nrm
    coarse_precision = PrecisionTag.parse(coarse_precision)
    if scale == 1.0 and coarse_precision is y.precision:
        return y, scale
    return cast_vector(y, coarse_precision, scale, policy, counter), scale


def prolongate_add(P, c_coarse, u_fine, scale=1.0, policy=DEFAULT_POLICY,
                   counter=None):
    """``u_fine + cast(scale * P c_coarse)``; the product runs in the
    coarse format, the scaling in binary64, the update in the fine one."""
    if P.precision is not c_coarse.precision:
        raise UsageError("prolongation and coarse correction differ in format")
    if P.n_cols != len(c_coarse) or P.n_rows != len(u_fine):
        raise UsageError("prolongation: dimension mismatch")
    pc, pf = P.precision, u_fine.precision
    out = np.empty(P.n_rows)
    _kernels.prolongate_add(P.values, P.col_index, c_coarse.data, u_fine.data,
                            float(scale), out, pc.code,
                            policy.accumulation_code(pc), pf.code,
                            policy.fused_multiply_add,
                            policy.flush_subnormals_to_zero)
    if counter is not None:
        _charge_spmv(counter, P, pc, pf)
        counter.add(read=P.n_rows * pf.bytes_per_value, flops=2 * P.n_rows)
    return PVector(out, pf)


@dataclass
class CgResult:
    u: PVector
    iterations: int
    converged: bool
    residual_norm: float


def cg_solve(level, b, config=BaseSolverConfig(), policy=DEFAULT_POLICY,
             tolerance=None):
    """Conjugate gradients in the level's format from a zero guess.

    Vectors are stored in the level's format; inner products accumulate in
    binary64 and the step lengths are rounded to the level's format. The
    stopping test uses the recursively updated residual. Hitting the
    iteration cap is not an error: the last iterate is returned with
    ``converged=False``.
    """
    p_ = level.precision
    A, ctr = level.A, level.counter
    tol = config.tolerance if tolerance is None else tolerance
    max_it = config.max_iterations or 10 * level.n
    fixed = config.fixed_iterations

    x = PVector.zeros(level.n, p_)
    r = b.copy()
    p = b.copy()
    rr = dot(r, r, ctr)
    it = 0
    limit = fixed if fixed is not None else max_it
    while it < limit:
        if fixed is None and np.sqrt(rr) < tol:
            break
        q = spmv(A, p, policy, ctr)
        pq = dot(p, q, ctr)
        if pq == 0.0 or not np.isfinite(pq):
            break
        alpha = rr / pq
        x = axpy(alpha, p, x, policy, ctr)
        r = axpy(-alpha, q, r, policy, ctr)
        rr_new = dot(r, r, ctr)
        it += 1
        if rr == 0.0:
            break
        p = axpy(rr_new / rr, p, r, policy, ctr)
        rr = rr_new
    res = float(np.sqrt(rr))
    converged = fixed is not None or res < tol
    return CgResult(x, it, converged, res)


def v_cycle(hier, level_index, b, rhs_scale=1.0):
    """Approximate ``A c = b`` on ``level_index`` with one V-cycle.

    The initial guess is zero. ``rhs_scale`` is the size of ``b`` relative
    to a unit-norm finest-level residual; the base solver tolerance is
    multiplied by it.
    """
    level = hier.levels[level_index]
    policy, sm = hier.policy, hier.smoother
    if hier.validate:
        _check_level(hier, level, b)

    if level_index == 0:
        res = cg_solve(level, b, hier.base, policy,
                       tolerance=hier.base.tolerance * rhs_scale)
        hier.base_history.append((res.iterations, res.converged))
        if not res.converged:
            log.debug("base solver stopped after %d iterations, |r|=%g",
                      res.iterations, res.residual_norm)
        return res.u

    coarse = hier.levels[level_index - 1]
    u = PVector.zeros(level.n, level.precision)
    u = jacobi_smooth(level, u, b, sm.nu1, sm.omega, policy)
    r = residual(level.A, u, b, policy, level.counter)
    rescale = (hier.rescale_transitions and coarse.precision is FP16
               and level.precision is not FP16)
    r_c, scale = restrict_with_cast(coarse.R_from_finer, r, coarse.precision,
                                    rescale, policy, level.counter)
    c_c = v_cycle(hier, level_index - 1, r_c, rhs_scale / scale)
    u = prolongate_add(coarse.P_to_finer, c_c, u, scale, policy,
                       coarse.counter)
    u = jacobi_smooth(level, u, b, sm.nu2, sm.omega, policy)
    if hier.validate:
        _check_level(hier, level, u)
    return u
