"""Exception types shared by the library and the CLI."""


class WickGibbsError(Exception):
    pass


class DomainError(WickGibbsError, ValueError):
    """Argument outside the mathematical domain of an operation (e.g. sigma <= 0)."""


class RangeError(WickGibbsError, ValueError):
    """Lattice index or cutoff outside the stored mode set."""


class AliasingError(WickGibbsError, ValueError):
    """Grid too coarse for exact synthesis or quadrature."""


class ResourceError(WickGibbsError, RuntimeError):
    pass


class EstimationError(WickGibbsError, RuntimeError):
    pass


class StiffnessError(WickGibbsError, RuntimeError):
    pass
