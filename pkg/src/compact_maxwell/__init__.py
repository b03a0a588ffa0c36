"""Compact fourth-order schemes for Maxwell's equations on staggered grids."""
from .analytic import EigenmodeSolution, exact_tm_fields, mean_abs_error
from .grid import StaggeredGrid, build_3d_grid, build_tm_grid, classify_node
from .schemes import (
    C4Stepper,
    EMStateTM,
    RunConfig,
    StencilParams,
    initial_state,
    march,
    step_explicit_stencil,
    step_yee2,
)

__version__ = "0.1.0"
