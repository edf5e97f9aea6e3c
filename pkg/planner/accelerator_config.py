from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Optional

from config.asset_env import get_asset_path
from planner.exceptions import InvalidConfig, ZeroTile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TilePolicy:
    """Square tiles of ``operands`` matrices sharing the cache.

    ``concurrent_tiles`` divides the cache between tiles in flight on
    separate cores.
    """

    operands: int = 3
    concurrent_tiles: int = 1

    def __post_init__(self) -> None:
        if self.operands < 1 or self.concurrent_tiles < 1:
            raise InvalidConfig("tile policy counts must be at least 1")

    def tile_side(self, cache_bytes: float, dtype_bytes: int = 4) -> int:
        per_element = self.operands * dtype_bytes * self.concurrent_tiles
        if cache_bytes < per_element:
            raise ZeroTile(
                f"cache of {cache_bytes:.0f} B cannot hold one element of "
                f"{self.operands} operands"
            )
        return int(math.isqrt(int(cache_bytes // per_element)))


@dataclass(frozen=True)
class AcceleratorConfig:
    peak_flops: float
    mem_bandwidth: float
    cache_bytes: float
    mem_capacity: float
    interconnect_bandwidth: float
    achievable_compute_frac: float = 0.80
    achievable_bandwidth_frac: float = 0.70
    name: str = "accelerator"
    tile_policy: TilePolicy = field(default_factory=TilePolicy)

    def __post_init__(self) -> None:
        for label in ("peak_flops", "mem_bandwidth", "cache_bytes", "mem_capacity", "interconnect_bandwidth"):
            if getattr(self, label) <= 0:
                raise InvalidConfig(f"{label} must be positive, got {getattr(self, label)}")
        for label in ("achievable_compute_frac", "achievable_bandwidth_frac"):
            value = getattr(self, label)
            if not 0 < value <= 1:
                raise InvalidConfig(f"{label} must lie in (0, 1], got {value}")

    @property
    def achievable_flops(self) -> float:
        return self.peak_flops * self.achievable_compute_frac

    @property
    def achievable_bandwidth(self) -> float:
        return self.mem_bandwidth * self.achievable_bandwidth_frac

    def with_tile_policy(self, **changes: Any) -> AcceleratorConfig:
        policy = TilePolicy(**{**asdict(self.tile_policy), **changes})
        return replace(self, tile_policy=policy)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> AcceleratorConfig:
        policy = data.get("tile_policy", {})
        return AcceleratorConfig(
            peak_flops=float(data["peak_flops"]),
            mem_bandwidth=float(data["mem_bandwidth"]),
            cache_bytes=float(data["cache_bytes"]),
            mem_capacity=float(data["mem_capacity"]),
            interconnect_bandwidth=float(data["interconnect_bandwidth"]),
            achievable_compute_frac=float(data.get("achievable_compute_frac", 0.80)),
            achievable_bandwidth_frac=float(data.get("achievable_bandwidth_frac", 0.70)),
            name=data.get("name", "accelerator"),
            tile_policy=TilePolicy(
                operands=int(policy.get("operands", 3)),
                concurrent_tiles=int(policy.get("concurrent_tiles", 1)),
            ),
        )

    @staticmethod
    def fallback() -> AcceleratorConfig:
        return AcceleratorConfig(
            peak_flops=15.67e12,
            mem_bandwidth=898e9,
            cache_bytes=6e6,
            mem_capacity=32e9,
            interconnect_bandwidth=56e9,
            name="target-accelerator",
        )

    @staticmethod
    def default_config(path: Optional[str] = None) -> AcceleratorConfig:
        """Load the accelerator description from the config file."""
        config_path = path or get_asset_path("accelerator_config.json")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                config_data: Dict[str, Any] = json.load(f)
            return AcceleratorConfig.from_dict(config_data)
        except (FileNotFoundError, KeyError, json.JSONDecodeError) as e:
            if path is not None:
                raise InvalidConfig(f"Could not load accelerator config from {config_path}: {e}") from e
            logger.warning(
                "Could not load accelerator config from %s: %s. Using fallback default values",
                config_path,
                e,
            )
            return AcceleratorConfig.fallback()
