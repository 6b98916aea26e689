"""Monte Carlo laboratory for BSDEs driven by a Brownian motion and a finite-activity Poisson random measure."""
from .levy import (
    LevyModel,
    PathEnsemble,
    TimeGrid,
    ValidationError,
    lnu_norm,
    simulate_forward,
    truncate_levy,
)
from .rho import RhoFunction
from .generators import (
    GeneratorSpec,
    build_fn,
    build_hn,
    make_generator,
    project_ball,
    theta_r,
    truncate_terminal,
)
from .solver import BsdeSolution, SchemeConfig, TerminalCondition, make_terminal, solve_bsde

__version__ = "0.1.0"
