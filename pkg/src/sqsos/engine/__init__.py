from .config import HESSIAN_MODES, SqpConfig
from .filter import (Filter, armijo, augment_filter, envelope_progress, f_type_switch,
                     filter_acceptable, restoration_penalty)
from .hessian import damped_bfgs, regularize
from .program import (Constraint, NLProblem, RestorationProblem, SOSProgram, build_subproblem,
                      solve_subproblem)
from .solver import (LOCALLY_INFEASIBLE, MAX_ITER, OPTIMAL, STALLED, IterateState, SolveOutcome,
                     TraceRow, scaled_termination, solve)

__all__ = [
    "HESSIAN_MODES", "SqpConfig", "Filter", "armijo", "augment_filter", "envelope_progress",
    "f_type_switch", "filter_acceptable", "restoration_penalty", "damped_bfgs", "regularize",
    "Constraint", "NLProblem", "RestorationProblem", "SOSProgram", "build_subproblem",
    "solve_subproblem", "LOCALLY_INFEASIBLE", "MAX_ITER", "OPTIMAL", "STALLED", "IterateState",
    "SolveOutcome", "TraceRow", "scaled_termination", "solve",
]
