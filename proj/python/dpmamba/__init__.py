"""DPMamba speech separation: C++ core with a thin Python surface."""

from ._core import (
    ConfigError,
    FormatError,
    MetricError,
    ModelConfig,
    NormKind,
    SeparationModel,
    count_parameters,
    gradcheck,
    load_model,
    parse_config,
    preset,
    read_wav,
    sdr,
    si_snr,
    synth_source,
    to_text,
    write_wav,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "MetricError",
    "ModelConfig",
    "NormKind",
    "SeparationModel",
    "count_parameters",
    "gradcheck",
    "load_model",
    "parse_config",
    "preset",
    "read_wav",
    "sdr",
    "si_snr",
    "synth_source",
    "to_text",
    "write_wav",
]
