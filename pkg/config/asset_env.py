from __future__ import annotations

import logging
import os
from enum import Enum
from typing import Final

logger = logging.getLogger(__name__)


class AssetEnvironment(Enum):
    """Where the planner reads its JSON assets from"""

    SHIPPED = "shipped"
    OVERRIDE = "override"


CURRENT_ENVIRONMENT: Final[AssetEnvironment] = AssetEnvironment.SHIPPED

SHIPPED_ASSET_DIR: Final[str] = os.path.dirname(os.path.abspath(__file__))

# Environment variable override
ENV_VAR_NAME: Final[str] = "CAPACITY_ASSET_DIR"


def get_current_environment() -> AssetEnvironment:
    """Get the current asset environment"""
    directory = os.getenv(ENV_VAR_NAME)
    if directory:
        if os.path.isdir(directory):
            return AssetEnvironment.OVERRIDE
        logger.warning(
            "Invalid %s value '%s'. Using shipped assets in %s",
            ENV_VAR_NAME,
            directory,
            SHIPPED_ASSET_DIR,
        )
    return CURRENT_ENVIRONMENT


def get_asset_dir(environment: AssetEnvironment | None = None) -> str:
    if environment is None:
        environment = get_current_environment()
    if environment is AssetEnvironment.OVERRIDE:
        return os.environ[ENV_VAR_NAME]
    return SHIPPED_ASSET_DIR


def get_asset_path(file_name: str, environment: AssetEnvironment | None = None) -> str:
    """Get the path of an asset file for the specified environment"""
    return os.path.join(get_asset_dir(environment), file_name)
