"""Mixed-precision geometric multigrid for Q1 finite-element Poisson problems.

Iterative refinement in binary64, preconditioned by one V-cycle whose grid
levels run in emulated binary16, binary32 or binary64.
"""
from mpgmg.precision import (ArithmeticPolicy, Fp16Value, PrecisionTag, FP16,
                             FP32, FP64)
from mpgmg.sparse import EllMatrix, PVector, TrafficCounter, UsageError
from mpgmg.mesh_fem import ProblemSpec, StructuredGrid
from mpgmg.multigrid import (BaseSolverConfig, BuildError, MgHierarchy,
                             SmootherConfig, VariantConfig, build_hierarchy)
from mpgmg.ir_solver import (DivergenceError, IrConfig, SolveReport,
                             ir_solve, solve_problem)

__version__ = '0.1.0'
