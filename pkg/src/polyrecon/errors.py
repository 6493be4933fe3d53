"""Exception hierarchy shared by every stage of the reconstruction pipeline."""


class ReconstructionError(Exception):
    """Base class for all library errors."""


class DegenerateInput(ReconstructionError, ValueError):
    """Input geometry is degenerate (collinear, coplanar, too few points)."""


class SingularEvaluation(ReconstructionError, ArithmeticError):
    """A kernel was evaluated at or too close to a singularity."""


class ParseError(ReconstructionError, ValueError):
    """A point cloud or mesh file could not be parsed."""

    def __init__(self, message, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.offset = offset


class EmptyCloud(ParseError):
    """A point cloud file parsed successfully but contained no points."""


class MeshIOError(ReconstructionError, OSError):
    """A mesh could not be written or read back."""


class NoPlanesFound(ReconstructionError):
    """Plane detection did not find any plane with enough support."""


class DegenerateConfiguration(ReconstructionError):
    """Detected planes cannot bound a volume."""


class UnboundedSpace(DegenerateConfiguration):
    """The external half-spaces do not enclose a finite volume."""

    def __init__(self, directions):
        self.directions = list(directions)
        super().__init__(
            "external planes leave the space open towards " + ", ".join(self.directions)
        )


class NonConvergence(ReconstructionError):
    """Iterative labeling stopped without labeling every cell."""

    def __init__(self, message, states=()):
        super().__init__(message)
        self.states = list(states)


class EmptySelection(ReconstructionError):
    """No cell was labeled inside, so there is no surface to extract."""


class ConfigError(ReconstructionError, ValueError):
    """A configuration value lies outside its domain."""
