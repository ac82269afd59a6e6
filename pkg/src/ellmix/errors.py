"""Exception and warning types raised across the package."""


class EllmixError(Exception):
    """Base class for all package errors."""


class DomainError(EllmixError, ValueError):
    """An argument lies outside the domain of the operation."""


class UnsupportedDimensionError(DomainError):
    pass


class IllConditionedShapeError(EllmixError, ValueError):
    """Shape matrix is not symmetric positive definite within tolerance."""


class DegenerateCloudError(EllmixError, ValueError):
    """Point cloud scatter has rank < d (e.g. all points identical or coplanar in 3D)."""


class InitDegenerateError(EllmixError):
    """K-means initialisation produced a cluster too small to fit."""


class SamplerStallError(EllmixError, RuntimeError):
    pass


class NumericError(EllmixError, ArithmeticError):
    """A numerical routine failed to reach its requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ComponentCollapse(EllmixError):
    """Raised by the M-step when a component's responsibility mass is too small."""

    def __init__(self, component, mass, threshold):
        super().__init__(
            f"component {component} has responsibility mass {mass:.6g} < {threshold:.6g}"
        )
        self.component = component
        self.mass = mass
        self.threshold = threshold


class ValidityWarning(UserWarning):
    """Noise level outside the thin-shell regime where the small-sigma forms hold."""


class DataFormatError(EllmixError, ValueError):
    """Malformed point or model file.  ``row``/``column`` locate the problem when known."""

    def __init__(self, message, path=None, row=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{': '.join([', '.join(loc), message]) if loc else message}")
        self.path = path
        self.row = row
        self.column = column
