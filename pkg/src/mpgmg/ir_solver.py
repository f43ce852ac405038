"""Binary64 iterative refinement preconditioned by one multigrid V-cycle.

Each outer step normalizes the binary64 residual by its euclidean norm,
casts it to the finest multigrid level's format, runs one V-cycle and adds
the (rescaled) correction back in binary64 with a fused update of solution
and residual.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from mpgmg.mesh_fem import (ProblemSpec, assemble_rhs, assemble_stiffness,
                            nodal_l2_error)
from mpgmg.multigrid import VariantConfig, build_hierarchy
from mpgmg.precision import DEFAULT_POLICY, FP64
from mpgmg.sparse import (PVector, TrafficCounter, UsageError, cast_vector,
                          norm2, residual, update_residuum_correction)

__all__ = ['IrConfig', 'SolveReport', 'DivergenceError', 'ir_solve',
           'residual_norm', 'initial_guess', 'solve_problem']


class DivergenceError(ArithmeticError):
    """The binary64 residual became NaN or infinite."""

    def __init__(self, iteration, value):
        super().__init__(f"residual norm {value} at outer iteration "
                         f"{iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class IrConfig:
    """Outer iteration settings.

    ``initial_guess`` is ``'zeros'`` or ``'random'`` (uniform on [0, 1)
    from ``numpy.random.default_rng(seed)``). ``residual_scaling=None``
    scales for every variant except ``D_MG``. The residual is recomputed
    from scratch every ``refresh_interval`` steps.
    """

    outer_tolerance: float = 1e-9
    max_outer_iterations: int = 100
    initial_guess: str = 'zeros'
    seed: int = 0
    residual_scaling: bool = None
    refresh_interval: int = 10

    def __post_init__(self):
        if not self.outer_tolerance > 0:
            raise UsageError("outer tolerance must be positive")
        if self.initial_guess not in ('zeros', 'random'):
            raise UsageError(f"unknown initial guess {self.initial_guess!r}")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_history: list
    traffic: dict = field(default_factory=dict)
    wall_time: float = 0.0
    final_error_l2: float = None
    min_nonzero_low: list = field(default_factory=list)

    @property
    def final_residual(self):
        return self.residual_history[-1]

    @property
    def value_bytes(self):
        return sum(c.value_bytes for c in self.traffic.values())


def initial_guess(n, config):
    if config.initial_guess == 'zeros':
        return PVector.zeros(n)
    rng = np.random.default_rng(config.seed)
    return PVector(rng.random(n))


def residual_norm(A, u, b):
    """``||b - A u||_2`` with binary64 accumulation in a fixed order."""
    if A.precision is not FP64:
        raise UsageError("residual_norm expects a binary64 operator")
    return norm2(residual(A, u, b))


def ir_solve(A_high, b_high, hierarchy, config=IrConfig(), u0=None):
    """Solve ``A_high u = b_high`` to ``config.outer_tolerance``.

    Returns ``(u, report)``. Running out of iterations yields a report with
    ``converged=False``; a NaN or infinite residual raises
    :class:`DivergenceError`.
    """
    if A_high.precision is not FP64 or b_high.precision is not FP64:
        raise UsageError("outer operator and right-hand side must be binary64")
    if A_high.n_rows != hierarchy.finest.n or len(b_high) != A_high.n_rows:
        raise UsageError("outer system does not match the finest level")
    scaling = config.residual_scaling
    if scaling is None:
        scaling = hierarchy.variant.name != 'D_MG'
    low = hierarchy.finest.precision
    outer = TrafficCounter()
    hierarchy.reset_traffic()
    t0 = time.perf_counter()

    u = u0.copy() if u0 is not None else initial_guess(A_high.n_rows, config)
    r = residual(A_high, u, b_high, counter=outer)
    history = []
    report = SolveReport(False, 0, history)
    it = 0
    while True:
        alpha = norm2(r, outer)
        history.append(alpha)
        if not np.isfinite(alpha):
            raise DivergenceError(it, alpha)
        if alpha < config.outer_tolerance \
                or it >= config.max_outer_iterations:
            break
        scale = alpha if scaling else 1.0
        r_low = cast_vector(r, low, scale, hierarchy.policy, outer)
        nz = np.abs(r_low.data[r_low.data != 0.0])
        report.min_nonzero_low.append(float(nz.min()) if nz.size else 0.0)
        c_low = hierarchy.cycle(r_low, rhs_scale=alpha / scale)
        r, u = update_residuum_correction(r, u, A_high, c_low, scale, outer)
        it += 1
        if config.refresh_interval and it % config.refresh_interval == 0:
            r = residual(A_high, u, b_high, counter=outer)

    report.converged = history[-1] < config.outer_tolerance
    report.iterations = it
    report.wall_time = time.perf_counter() - t0
    report.traffic = {'outer': outer, 'multigrid': hierarchy.traffic()}
    return u, report


def solve_problem(spec, variant, ir_config=IrConfig(), smoother=None,
                  base=None, policy=None, validate=False):
    """Assemble ``spec``, build the ``variant`` hierarchy and run
    :func:`ir_solve`. The report carries the nodal L2 error."""
    policy = policy or DEFAULT_POLICY
    if isinstance(variant, str):
        variant = VariantConfig.named(variant, spec.levels)
    hier = build_hierarchy(spec, variant, smoother, base, policy,
                           validate=validate)
    grid = spec.finest
    if hier.finest.precision is FP64:
        A = hier.finest.A
    else:
        A = assemble_stiffness(grid)
    b = assemble_rhs(grid, spec.k)
    u, report = ir_solve(A, b, hier, ir_config)
    report.final_error_l2 = nodal_l2_error(grid, u, spec.k)
    return u, report
