# Helper Functions

import os
import time
import logging
import yaml

from pathlib import Path
from enum import Enum, auto
from dataclasses import dataclass, field
from typing import Union, Optional, Dict, Any
from logging.handlers import RotatingFileHandler

from edg_multigrid.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

WORKERS_ENV = "EDG_MG_WORKERS"
DEFAULT_WORKERS = 2
LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s (in %(pathname)s:%(lineno)d)"
LOG_MAX_BYTES = 1_048_576


class Status(Enum):
    STAGED = auto()
    RUNNING = auto()
    FINISHED = auto()
    CANCELLED = auto()
    ERRORED = auto()

@dataclass(frozen=False)
class State():
    status: Status | None = None
    last_error: str | None = None
    since: float = field(default_factory=lambda: time.time())
    elapsed: float = 0.0

    def set(self, status: Status, error: Optional[str] = None) -> None:
        now = time.time()
        if self.status is Status.RUNNING:
            self.elapsed += now - self.since
        self.status = status
        self.since = now
        if error is not None:
            self.last_error = error


def get_nested(data: dict, path: list, default=None):
    """
    Walk a settings dict along `path`, e.g. ["presets", "table1", "steps"].

    Returns:
        The value at the end of the path, or `default` as soon as a key is
        missing or a non-dict is reached.
    """
    current = data
    for key in path:
        if not isinstance(current, dict) or key not in current:
            return default
        current = current[key]
    return current

def worker_count(default: Optional[int] = None) -> int:
    """
    Number of concurrent study workers: the EDG_MG_WORKERS environment
    variable wins over the given default.

    Raises:
        ConfigurationError: If the resulting value is not a positive integer.
    """
    raw = os.environ.get(WORKERS_ENV)
    value = raw if raw is not None else (default if default is not None else DEFAULT_WORKERS)
    try:
        workers = int(value)
    except (TypeError, ValueError):
        raise ConfigurationError("workers", value, "must be a positive integer") from None
    if workers < 1:
        raise ConfigurationError("workers", value, "must be a positive integer")
    return workers

def _attach(root: logging.Logger, handler: logging.Handler, level: int) -> None:
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT))
    root.addHandler(handler)

def setup_logger(
    log_file_path: Optional[Union[str, Path]] = None,
    level: int = logging.INFO,
    console: bool = True,
    console_level: Optional[int] = None
    ) -> logging.Logger:
    """
    Route all package logging through the root logger.

    Args:
        log_file_path: Rotating log file, parent directories are created. None disables it.
        level: Level of the file handler, and of the console unless `console_level` is given.
        console: Add a stderr handler. Tables go to stdout, so the two never mix.
        console_level: Separate level for the stderr handler.
    Returns:
        The root logger.
    """
    root = logging.getLogger()
    root.handlers.clear()
    stderr_level = console_level or level
    root.setLevel(min(level, stderr_level))
    if log_file_path:
        path = Path(log_file_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        _attach(root, RotatingFileHandler(filename=str(path), maxBytes=LOG_MAX_BYTES, backupCount=2), level)
    if console:
        _attach(root, logging.StreamHandler(), stderr_level)
    return root


class ConfigHandler:
    """
    Experiment settings from config/experiments.yaml:

        defaults:  settings applied to every study
        presets:   named partial settings (e.g. table1, table2) layered on top
        workers:   default number of concurrent studies
    """
    def __init__(
        self,
        config_override: Optional[Dict[str, Any]] = None,
        project_root: Optional[Path] = None,
        config_path: Optional[Path] = None,
        ) -> None:
        """
        Initialize the config handler.

        Args:
            config_override (Optional[Dict[str, Any]]): Custom config provided by the user.
            project_root (Optional[Path]): Root directory of the project for default config loading.
            config_path (Optional[Path]): Explicit YAML file, takes precedence over project_root.
        Raises:
            ValueError: If no source is given.
            FileNotFoundError: If the YAML file does not exist.
        """
        if config_override is not None:
            self.config = config_override
        elif config_path is not None:
            self.config = self._load(Path(config_path))
        elif project_root is not None:
            self.config = self._get_default_config(Path(project_root))
        else:
            raise ValueError("Either config_override, config_path or project_root must be provided.")

    def _get_default_config(self, project_root: Path) -> Dict[str, Any]:
        """
        Load default YAML config from project root dir
        """
        return self._load(project_root / 'config' / 'experiments.yaml')

    @staticmethod
    def _load(config_path: Path) -> Dict[str, Any]:
        if not config_path.exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")
        with open(config_path, 'r') as file:
            config = yaml.safe_load(file) or {}
        if not isinstance(config, dict):
            raise ConfigurationError(str(config_path), type(config).__name__, "top level must be a mapping")
        logger.info("Loaded config [%s]", config_path)
        return config

    def get_config(self) -> Dict[str, Any]:
        return self.config

    def get_settings(self, preset: Optional[str] = None) -> Dict[str, Any]:
        """
        Defaults merged with a named preset.

        Raises:
            ConfigurationError: If the preset is unknown.
        """
        settings = dict(get_nested(self.config, ["defaults"], {}) or {})
        if preset is not None:
            values = get_nested(self.config, ["presets", preset])
            if values is None:
                known = sorted(get_nested(self.config, ["presets"], {}) or {})
                raise ConfigurationError("preset", preset, f"known presets: {known}")
            settings.update(values)
        return settings

    def get_workers(self) -> Optional[int]:
        return get_nested(self.config, ["workers"])
