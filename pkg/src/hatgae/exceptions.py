"""Exception types raised across the package."""


class HatGaeError(Exception):
    """Base class for all package errors."""


class GraphFormatError(HatGaeError, ValueError):
    """A graph bundle is malformed or violates a graph invariant."""


class NonConvergence(HatGaeError, ArithmeticError):
    """Power iteration did not reach tolerance within ``max_iter`` steps."""

    def __init__(self, max_iter, residual):
        super().__init__(
            f"power iteration did not converge in {max_iter} iterations "
            f"(last L1 change {residual:.3e})"
        )
        self.max_iter = max_iter
        self.residual = residual


class ZeroVector(HatGaeError, ArithmeticError):
    """An iterate collapsed to the zero vector."""


class ScheduleExhausted(HatGaeError, ValueError):
    """A masking round would mask zero dimensions.

    ``last_feasible_round`` is the last round index (1-based) whose count was
    positive; 0 means not even the first round is feasible.
    """

    def __init__(self, round_index, last_feasible_round):
        super().__init__(
            f"masking schedule exhausted at round {round_index}: floor(remaining * pf) == 0; "
            f"last feasible round is {last_feasible_round}"
        )
        self.round_index = round_index
        self.last_feasible_round = last_feasible_round


class AllClean(HatGaeError, ValueError):
    """No node was selected for corruption, so the loss is undefined."""


class FiniteCheckError(HatGaeError, FloatingPointError):
    """A forward op produced NaN or Inf."""


class TrainingDiverged(HatGaeError, FloatingPointError):
    def __init__(self, epoch, detail=""):
        msg = f"training diverged at epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.epoch = epoch


class ConfigError(HatGaeError, ValueError):
    """Invalid run configuration."""


class ZeroNorm(HatGaeError, ArithmeticError):
    """A cosine was requested for a (near-)zero vector."""
