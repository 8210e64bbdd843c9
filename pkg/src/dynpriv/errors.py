"""Exception hierarchy shared by every module of the package."""


class DynPrivError(Exception):
    """Base class for all package errors."""


# graph
class GraphError(DynPrivError, ValueError):
    pass


class SelfEdge(GraphError):
    pass


class NotStronglyConnected(GraphError):
    def __init__(self, source: int, target: int):
        # user-facing labels are 1-based
        super().__init__(f"no directed path from node {source + 1} to node {target + 1}")
        self.source = source
        self.target = target


class IndexOutOfRange(GraphError):
    pass


class TooSmall(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


# objectives
class DimensionMismatch(DynPrivError, ValueError):
    pass


class SingularGlobalHessian(DynPrivError, ValueError):
    pass


# weights / presets
class EmptySimplex(DynPrivError, ValueError):
    pass


class StochasticityViolation(DynPrivError, ValueError):
    def __init__(self, matrix: str, detail: str):
        super().__init__(f"{matrix}: {detail}")
        self.matrix = matrix


class WrongPreset(DynPrivError, ValueError):
    pass


# engine
class NonFiniteState(DynPrivError, ArithmeticError):
    def __init__(self, k: int, detail: str = ""):
        msg = f"non-finite state produced at iteration {k}"
        super().__init__(msg + (f" ({detail})" if detail else ""))
        self.k = k


# privacy
class MissingSidecar(DynPrivError, ValueError):
    pass


class TopologyMismatch(DynPrivError, ValueError):
    pass


class NoCounterpart(DynPrivError, ValueError):
    pass


class DenominatorNearZero(DynPrivError, ValueError):
    def __init__(self, node: int, coordinate: int, value: float):
        super().__init__(
            f"y^0[{coordinate}] of node {node + 1} shifted to {value:.3e}; choose another delta"
        )
        self.node = node
        self.coordinate = coordinate


class StructureMismatch(DynPrivError, ValueError):
    pass


class NotConvergedWarning(UserWarning):
    pass


# analysis
class BufferTooShort(DynPrivError, ValueError):
    pass


class DimensionTooLarge(DynPrivError, ValueError):
    pass


class SeriesTooShort(DynPrivError, ValueError):
    pass


class NonPositiveError(DynPrivError, ValueError):
    pass


# cli
class ConfigError(DynPrivError, ValueError):
    pass
