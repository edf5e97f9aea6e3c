# mypy: ignore-errors

from __future__ import annotations

import logging
from typing import Any, List, Sequence, Tuple, cast

from ortools.linear_solver import pywraplp  # type: ignore

from planner.exceptions import InvalidConfig

logger = logging.getLogger(__name__)

SOLVER_BACKENDS = ("SCIP", "CBC")


class LayerPartitionSolver:
    """Split an ordered list of layers into contiguous device groups.

    Minimises the largest per-device cost (footprint bytes by default);
    every device receives at least one layer.
    """

    def __init__(self, time_limit_ms: int = 10000) -> None:
        self.solver = None
        self.time_limit_ms = time_limit_ms

    def _create_solver(self) -> Any:
        for backend in SOLVER_BACKENDS:
            solver = pywraplp.Solver.CreateSolver(backend)
            if solver:
                logger.debug("Using %s for layer partitioning", backend)
                return cast(Any, solver)
        raise InvalidConfig(f"No MIP backend available among {SOLVER_BACKENDS}")

    def _setup_variables(self, layers: int, devices: int) -> Tuple[List[List[Any]], Any]:
        assign = [
            [self.solver.BoolVar(f"assign_{i}_{d}") for d in range(devices)]
            for i in range(layers)
        ]
        peak = self.solver.NumVar(0, self.solver.infinity(), "peak")
        return assign, peak

    def _setup_constraints(
        self,
        costs: Sequence[float],
        devices: int,
        assign: List[List[Any]],
        peak: Any,
    ) -> None:
        layers = len(costs)
        for i in range(layers):
            self.solver.Add(sum(assign[i]) == 1)
        device_of = [sum(d * assign[i][d] for d in range(devices)) for i in range(layers)]
        # contiguous, in order, no device skipped
        self.solver.Add(device_of[0] == 0)
        self.solver.Add(device_of[-1] == devices - 1)
        for i in range(layers - 1):
            step = device_of[i + 1] - device_of[i]
            self.solver.Add(step >= 0)
            self.solver.Add(step <= 1)
        for d in range(devices):
            self.solver.Add(sum(costs[i] * assign[i][d] for i in range(layers)) <= peak)

    def partition(self, costs: Sequence[float], devices: int) -> List[List[int]]:
        """Layer indices per device, in layer order."""
        if devices < 1:
            raise InvalidConfig(f"device count must be at least 1, got {devices}")
        if devices > len(costs):
            raise InvalidConfig(f"cannot split {len(costs)} layers over {devices} devices")
        if devices == 1:
            return [list(range(len(costs)))]

        self.solver = self._create_solver()
        self.solver.SetTimeLimit(self.time_limit_ms)
        assign, peak = self._setup_variables(len(costs), devices)
        self._setup_constraints(costs, devices, assign, peak)
        self.solver.Minimize(peak)

        logger.info("Partitioning %d layers over %d devices", len(costs), devices)
        result = self.solver.Solve()
        logger.info("Layer partition solved with status %s", result)
        if result != pywraplp.Solver.OPTIMAL and result != pywraplp.Solver.FEASIBLE:
            raise InvalidConfig(f"layer partition has no feasible solution (status {result})")

        groups: List[List[int]] = [[] for _ in range(devices)]
        for i, row in enumerate(assign):
            device = max(range(devices), key=lambda d: row[d].solution_value())
            groups[device].append(i)
        return groups


def partition_layers(costs: Sequence[float], devices: int) -> List[List[int]]:
    return LayerPartitionSolver().partition(costs, devices)
