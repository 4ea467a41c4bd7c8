from ._lightpeft import (
    BadMagicError,
    BadVersionError,
    ChecksumError,
    CompatibilityError,
    ConfigError,
    ContractError,
    DataError,
    Error,
    LoadError,
    Run,
    drop_count,
    normalize_config,
    run,
    select_ffn_dims,
    select_heads,
    swap_eval,
)

__all__ = [
    "BadMagicError",
    "BadVersionError",
    "ChecksumError",
    "CompatibilityError",
    "ConfigError",
    "ContractError",
    "DataError",
    "Error",
    "LoadError",
    "Run",
    "drop_count",
    "normalize_config",
    "run",
    "select_ffn_dims",
    "select_heads",
    "swap_eval",
]
