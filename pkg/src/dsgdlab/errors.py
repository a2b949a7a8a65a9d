"""Exception types shared across the package."""


class DsgdLabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidTopology(DsgdLabError):
    """Requested graph size or shape cannot form the topology."""


class InvalidWeight(DsgdLabError):
    """Self-weight or edge weight outside the admissible range."""


class DisconnectedGraph(DsgdLabError):
    """Graph has more than one connected component."""


class NotDoublyStochastic(DsgdLabError):
    """Mixing-matrix validation failed (symmetry, sums or nonnegativity)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NoMixing(DsgdLabError):
    """Spectral gap is numerically zero: the matrix does not mix."""


class InvalidSpec(DsgdLabError):
    """Objective-family specification is inconsistent (e.g. non-SPD matrix)."""


class DimensionError(DsgdLabError):
    """Vector or matrix argument has the wrong shape."""


class NumericalDivergence(DsgdLabError):
    """Non-finite value encountered during iteration."""

    def __init__(self, message, iteration=None, run=None):
        super().__init__(message)
        self.iteration = iteration
        self.run = run


class HorizonExceeded(DsgdLabError):
    """Step schedule evaluated outside its configured horizon."""


class ShapeMismatch(DsgdLabError):
    """Trajectories or summaries do not share a common grid."""


class MissingDebugData(DsgdLabError):
    """Per-step verification requested on a run recorded without debug state."""


class Inapplicable(DsgdLabError):
    """A verification's hypotheses are not met by the supplied inputs."""


class ConfigSyntax(DsgdLabError):
    """Config file line does not parse as ``section.key = value``."""


class ConfigInvalid(DsgdLabError):
    """Config field missing, malformed, or inconsistent."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NothingToPlot(DsgdLabError):
    """Plot requested with no usable summaries."""
