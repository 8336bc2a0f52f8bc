"""Problem setup, optimization driver, presets and output files."""
from .config import ConfigError, ProblemConfig, load_config, read_design, write_design
from .driver import RunResult, run

__all__ = ["ConfigError", "ProblemConfig", "load_config", "read_design", "write_design",
           "RunResult", "run"]
