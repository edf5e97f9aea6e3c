from __future__ import annotations

from typing import Sequence


class PlannerError(Exception):
    """Base class for every error raised by the planner package."""


class InvariantViolation(PlannerError):
    """An internal consistency check failed."""


class InvalidConfig(PlannerError, ValueError):
    pass


class ExpressionParseError(PlannerError, ValueError):
    pass


class UnboundSymbol(PlannerError, ValueError):
    def __init__(self, name: str) -> None:
        super().__init__(f"Symbol '{name}' is not bound")
        self.name = name


class DuplicateId(PlannerError, ValueError):
    def __init__(self, item_id: str) -> None:
        super().__init__(f"Duplicate id '{item_id}'")
        self.item_id = item_id


class UnknownTensor(PlannerError, ValueError):
    def __init__(self, tensor_id: str, op_id: str | None = None) -> None:
        where = f" (referenced by op '{op_id}')" if op_id else ""
        super().__init__(f"Unknown tensor '{tensor_id}'{where}")
        self.tensor_id = tensor_id
        self.op_id = op_id


class DanglingTensor(PlannerError, ValueError):
    def __init__(self, tensor_id: str) -> None:
        super().__init__(f"Tensor '{tensor_id}' has no producer and is not an input")
        self.tensor_id = tensor_id


class CycleDetected(PlannerError, ValueError):
    def __init__(self, path: Sequence[str]) -> None:
        super().__init__("Cycle detected: " + " -> ".join(path))
        self.path = list(path)


class ShapeMismatch(PlannerError, ValueError):
    def __init__(self, op_id: str, detail: str) -> None:
        super().__init__(f"Shape mismatch in op '{op_id}': {detail}")
        self.op_id = op_id
        self.detail = detail


class GraphFrozen(PlannerError):
    def __init__(self, graph_name: str) -> None:
        super().__init__(f"Graph '{graph_name}' is validated and can no longer change")


class GraphFormatError(PlannerError, ValueError):
    pass


class MissingWeightDeclaration(PlannerError, ValueError):
    pass


class DivisionByZeroForward(PlannerError, ZeroDivisionError):
    pass


class TooLargeForExhaustive(PlannerError, ValueError):
    def __init__(self, op_count: int, limit: int) -> None:
        super().__init__(
            f"Exhaustive footprint search supports at most {limit} ops, got {op_count}"
        )
        self.op_count = op_count


class InsufficientPoints(PlannerError, ValueError):
    pass


class NonPositiveValue(PlannerError, ValueError):
    pass


class NonPositiveError(PlannerError, ValueError):
    pass


class ZeroExponent(PlannerError, ValueError):
    pass


class OutsidePowerLawRegion(PlannerError, ValueError):
    pass


class ZeroTile(PlannerError, ValueError):
    pass


class EmptyCandidates(PlannerError, ValueError):
    pass


class UnassignedLayer(PlannerError, ValueError):
    def __init__(self, layers: Sequence[str]) -> None:
        super().__init__("Layers without a device: " + ", ".join(layers))
        self.layers = list(layers)


class CapacityInfeasible(PlannerError, ValueError):
    def __init__(self, max_gb: float, capacity_gb: float) -> None:
        super().__init__(
            f"Max footprint {max_gb:.1f} GB exceeds device capacity {capacity_gb:.1f} GB"
        )
        self.max_gb = max_gb
        self.capacity_gb = capacity_gb
