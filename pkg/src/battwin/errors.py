"""Exception types shared across the toolkit."""


class BattwinError(Exception):
    """Base class for toolkit errors."""


class DomainError(BattwinError):
    """Input outside the mathematical domain of a function."""


class StoichiometryOutOfRange(BattwinError):
    """Surface stoichiometry left (0.001, 0.999); model over-charged/discharged."""


class NonFiniteState(BattwinError):
    """Solver state became non-finite or left (0, c_max)."""


class LengthMismatch(BattwinError):
    """Trajectories of unequal length where a common grid is required."""


class UnsupportedActivation(BattwinError):
    """Activation lacks the derivatives needed for jet propagation."""


class LineSearchFailure(BattwinError):
    """Backtracking line search could not find an acceptable step."""


class NoOverlap(BattwinError):
    """Trajectories share no overlapping time/voltage range."""


class BackendMismatch(BattwinError):
    """Forward-model protocol does not match the segment protocol."""


class Divergence(BattwinError):
    """Training loss became non-finite."""


class MissingLabel(BattwinError):
    """Campaign record lacks an SOH label."""


class InsufficientSpan(BattwinError):
    """Ledger does not span the requested SOH range."""


class InsufficientFolds(BattwinError):
    """Not enough distinct cells/profiles/conditions for the requested split."""


class ZeroVariance(BattwinError):
    """Pearson correlation undefined for a constant series."""


class ExtrapolationWarning(UserWarning):
    """Surrogate evaluated outside its trained parameter box."""
