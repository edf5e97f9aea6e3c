from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Optional, Tuple

from config.asset_env import get_asset_path
from planner.exceptions import InvalidConfig

logger = logging.getLogger(__name__)

DOMAINS = ("word_lm", "char_lm", "nmt", "speech", "image")
RESNET_DEPTHS = (18, 34, 50, 101, 152)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture dimensions for one model in the zoo.

    ``hidden``, ``vocab``, ``seq_len``, ``subbatch`` and the optional
    widths become symbol defaults of the built graph, so any of them can
    be rebound at analysis time. The depth knobs are structural and fixed
    when the graph is built. ``layers`` is structural too, except for a
    word LM whose identical layers are stacked into one op with symbol
    ``l`` (``stack_layers``); layer-parallel plans turn stacking off so
    every layer can be placed on its own.
    """

    domain: str
    hidden: int = 1024
    layers: int = 2
    vocab: int = 10000
    seq_len: int = 26
    subbatch: int = 32
    embedding: Optional[int] = None
    projection: Optional[int] = None
    rhn_depth: int = 10
    target_len: Optional[int] = None
    decoder_layers: Optional[int] = None
    encoder_bidirectional: bool = True
    features: int = 40
    pool_after: Tuple[int, ...] = (1, 2)
    attention_conv_channels: int = 32
    attention_conv_width: int = 31
    resnet_depth: int = 152
    width: int = 1
    image_size: int = 224
    classes: int = 1000
    stack_layers: bool = True

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise InvalidConfig(f"Unknown domain '{self.domain}', expected one of {DOMAINS}")
        sizes = {
            "hidden": self.hidden,
            "layers": self.layers,
            "vocab": self.vocab,
            "seq_len": self.seq_len,
            "subbatch": self.subbatch,
            "rhn_depth": self.rhn_depth,
            "features": self.features,
            "width": self.width,
            "image_size": self.image_size,
            "classes": self.classes,
            "embedding": self.embedding,
            "projection": self.projection,
            "target_len": self.target_len,
            "decoder_layers": self.decoder_layers,
        }
        for name, value in sizes.items():
            if value is not None and value <= 0:
                raise InvalidConfig(f"{name} must be positive, got {value}")
        if self.projection is not None and self.projection > self.hidden:
            raise InvalidConfig(
                f"projection {self.projection} exceeds hidden size {self.hidden}"
            )
        if self.domain == "image" and self.resnet_depth not in RESNET_DEPTHS:
            raise InvalidConfig(
                f"ResNet depth {self.resnet_depth} not in {RESNET_DEPTHS}"
            )
        if self.domain == "speech" and any(
            layer < 1 or layer >= self.layers for layer in self.pool_after
        ):
            raise InvalidConfig(
                f"pool_after {self.pool_after} must name layers between 1 and {self.layers - 1}"
            )

    @property
    def embedding_dim(self) -> int:
        return self.embedding if self.embedding is not None else self.hidden

    @property
    def decoder_len(self) -> int:
        return self.target_len if self.target_len is not None else self.seq_len

    @property
    def decoder_depth(self) -> int:
        return self.decoder_layers if self.decoder_layers is not None else self.layers

    def with_overrides(self, **overrides: Any) -> ModelConfig:
        unknown = set(overrides) - set(asdict(self))
        if unknown:
            raise InvalidConfig(f"Unknown model options: {sorted(unknown)}")
        if "pool_after" in overrides:
            overrides["pool_after"] = tuple(overrides["pool_after"])
        return replace(self, **overrides)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def fallback(domain: str) -> ModelConfig:
        return ModelConfig(domain=domain, **_FALLBACK_DEFAULTS.get(domain, {}))

    @staticmethod
    def default_config(domain: str, path: Optional[str] = None) -> ModelConfig:
        """Load the domain's default architecture from the domain constants file."""
        config_path = path or get_asset_path("domain_constants.json")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                config_data: Dict[str, Any] = json.load(f)
            model = dict(config_data["domains"][domain]["model"])
            if "pool_after" in model:
                model["pool_after"] = tuple(model["pool_after"])
            return ModelConfig(domain=domain, **model)
        except (FileNotFoundError, KeyError, json.JSONDecodeError) as e:
            if path is not None:
                raise InvalidConfig(f"Could not load model config from {config_path}: {e}") from e
            logger.warning(
                "Could not load model config for %s from %s: %s. Using fallback default values",
                domain,
                config_path,
                e,
            )
            return ModelConfig.fallback(domain)


_FALLBACK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "word_lm": {"hidden": 1024, "layers": 2, "vocab": 800000, "seq_len": 26, "subbatch": 128},
    "char_lm": {"hidden": 1024, "layers": 1, "vocab": 100, "seq_len": 150, "rhn_depth": 10, "subbatch": 96},
    "nmt": {"hidden": 1024, "layers": 4, "vocab": 32000, "seq_len": 29, "subbatch": 96},
    "speech": {
        "hidden": 512,
        "layers": 4,
        "vocab": 30,
        "seq_len": 300,
        "target_len": 79,
        "decoder_layers": 1,
        "subbatch": 128,
    },
    "image": {"resnet_depth": 152, "width": 1, "subbatch": 32},
}


def layer_blocks(depth: int) -> Tuple[Tuple[int, ...], bool]:
    """Blocks per residual stage and whether blocks are bottlenecks."""
    table: Dict[int, Tuple[Tuple[int, ...], bool]] = {
        18: ((2, 2, 2, 2), False),
        34: ((3, 4, 6, 3), False),
        50: ((3, 4, 6, 3), True),
        101: ((3, 4, 23, 3), True),
        152: ((3, 8, 36, 3), True),
    }
    if depth not in table:
        raise InvalidConfig(f"ResNet depth {depth} not in {RESNET_DEPTHS}")
    return table[depth]

