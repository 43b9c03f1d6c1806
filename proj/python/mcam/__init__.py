"""Average-reward reinsurance/investment/dividend policies for a
regime-switching surplus diffusion, computed on an approximating Markov
chain. Thin wrapper over the compiled core; see ``mcam.run``.
"""

try:  # installed wheel: extension lives inside the package
    from ._mcam import (
        ConfigFailure,
        SolverFailure,
        ValidationFailure,
        eval_policy_gamma,
        parse_config,
        run,
    )
except ImportError:  # build tree: extension sits next to the package on sys.path
    from _mcam import (  # noqa: F401
        ConfigFailure,
        SolverFailure,
        ValidationFailure,
        eval_policy_gamma,
        parse_config,
        run,
    )

__all__ = [
    "run",
    "parse_config",
    "eval_policy_gamma",
    "ValidationFailure",
    "ConfigFailure",
    "SolverFailure",
]
