"""Exception hierarchy shared by the simulator and the harness."""


class KineticsError(Exception):
    """Base class for every error raised by heavytail_kinetics."""


class ConfigError(KineticsError, ValueError):
    """Invalid parameters, including a violated accommodation hypothesis."""


class GridError(KineticsError, ValueError):
    """Invalid grid, or fields living on mismatched grids."""


class DiscretizationError(KineticsError):
    """A numerical defect: negative density, unresolved tails, failed bound."""


class CFLError(KineticsError):
    """Explicit transport step larger than the CFL limit."""


class AdmissibilityError(KineticsError):
    """Field with nonzero global mass or violating the boundary condition."""


class FitError(KineticsError):
    """Time series that cannot be fitted by an exponential."""
