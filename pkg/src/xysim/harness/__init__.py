"""Experiment harness: config parsing, protocol drivers, CLI."""

from .config import ConfigError, ExperimentConfig, dump_config, parse_config
from .protocols import (PROTOCOL_RUNNERS, REFERENCE, ReferenceConstants, Result, run_dimer, run_excitations,
                        run_kz, run_quench, scan_coherent_shifts)

__all__ = [
    "ConfigError", "ExperimentConfig", "dump_config", "parse_config", "PROTOCOL_RUNNERS", "REFERENCE",
    "ReferenceConstants", "Result", "run_dimer", "run_excitations", "run_kz", "run_quench",
    "scan_coherent_shifts",
]
