"""
Base classes shared by the pipeline services.
Result container, exception hierarchy, service lifecycle and configuration management.
"""

import json
import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError as PydanticValidationError

from models import PipelineConfig

logger = logging.getLogger(__name__)


class StageStatus(Enum):
    """Enumeration for stage and operation results"""
    SUCCESS = "success"
    FAILURE = "failure"
    INVALID_CONFIG = "invalid_config"
    MISSING_INPUT = "missing_input"
    INVALID_DATA = "invalid_data"


@dataclass
class OperationResult:
    """Generic result container for stage operations"""
    status: StageStatus
    data: Any = None
    error_message: Optional[str] = None
    warnings: List[str] = None
    metadata: Dict[str, Any] = None

    def __post_init__(self):
        if self.warnings is None:
            self.warnings = []
        if self.metadata is None:
            self.metadata = {}

    @property
    def is_success(self) -> bool:
        return self.status == StageStatus.SUCCESS


class ToolkitError(Exception):
    """Root of all toolkit errors"""
    exit_code = 1
    status = StageStatus.FAILURE


class ConfigError(ToolkitError):
    """Invalid configuration key, value or type"""
    exit_code = 2
    status = StageStatus.INVALID_CONFIG


class MissingInputError(ToolkitError):
    """A declared input artifact does not exist"""
    exit_code = 3
    status = StageStatus.MISSING_INPUT

    def __init__(self, artifact: str, path: Optional[str] = None):
        self.artifact = artifact
        self.path = path
        where = f" at {path}" if path else ""
        super().__init__(f"missing input '{artifact}'{where}")


class DataValidationError(ToolkitError, ValueError):
    """Malformed or inconsistent input data"""
    exit_code = 4
    status = StageStatus.INVALID_DATA


class ParseError(DataValidationError):
    def __init__(self, message: str, line_number: Optional[int] = None, source: Optional[str] = None):
        self.line_number = line_number
        self.source = source
        prefix = f"{source}:" if source else ""
        location = f"{prefix}line {line_number}: " if line_number is not None else prefix
        super().__init__(f"{location}{message}")


class DuplicateIdError(DataValidationError):
    def __init__(self, entity_id: str, line_number: Optional[int] = None):
        self.entity_id = entity_id
        self.line_number = line_number
        where = f" (line {line_number})" if line_number is not None else ""
        super().__init__(f"duplicate id '{entity_id}'{where}")


class UnknownEntityError(DataValidationError):
    def __init__(self, entity_id: str, context: str = ""):
        self.entity_id = entity_id
        suffix = f" in {context}" if context else ""
        super().__init__(f"unresolvable id '{entity_id}'{suffix}")


class SpanError(DataValidationError):
    """Mention span does not fit its text or group"""
    pass


class DimensionMismatchError(DataValidationError):
    pass


class BaseService(ABC):
    """Abstract base class for pipeline services"""

    def __init__(self):
        self.logger = logging.getLogger(self.__class__.__name__)
        self._initialized = False

    def initialize(self) -> OperationResult:
        """Initialize the service"""
        try:
            self._initialize_internal()
            self._initialized = True
            self.logger.debug(f"{self.__class__.__name__} initialized successfully")
            return OperationResult(status=StageStatus.SUCCESS)
        except ToolkitError as e:
            self.logger.error(f"Failed to initialize {self.__class__.__name__}: {e}")
            return OperationResult(status=e.status, error_message=str(e), metadata={"exception": e})

    @abstractmethod
    def _initialize_internal(self):
        """Internal initialization logic - to be implemented by subclasses"""
        pass

    def ensure_initialized(self):
        if not self._initialized:
            raise RuntimeError(f"{self.__class__.__name__} not initialized. Call initialize() first.")

    def handle_stage_error(self, error: Exception, context: str = "") -> OperationResult:
        """Centralized conversion of stage exceptions into results"""
        error_msg = f"{context}: {error}" if context else str(error)
        self.logger.error(error_msg)
        status = error.status if isinstance(error, ToolkitError) else StageStatus.FAILURE
        return OperationResult(status=status, error_message=error_msg, metadata={"exception": error})


def _set_dotted(target: Dict[str, Any], dotted_key: str, value: Any):
    parts = dotted_key.split(".")
    node = target
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = {}
            node[part] = child
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set '{dotted_key}': '{part}' is not a section")
        node = child
    node[parts[-1]] = value


def parse_override(assignment: str) -> tuple:
    """Split a `key=value` override; the value is parsed as JSON, falling back to a plain string"""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{assignment}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


class ConfigurationManager:
    """Manages pipeline configuration with validation"""

    CONFIG_ENV = "NED_TOOLKIT_CONFIG"
    JOBS_ENV = "NED_TOOLKIT_JOBS"
    OUTPUT_DIR_ENV = "NED_TOOLKIT_OUTPUT_DIR"

    DEFAULT_CONFIG: Dict[str, Any] = PipelineConfig(jobs=1).model_dump(mode="json", exclude={"jobs"})

    def __init__(self, config: Optional[Dict[str, Any]] = None, base_dir: Optional[Path] = None):
        self.raw: Dict[str, Any] = json.loads(json.dumps(self.DEFAULT_CONFIG))
        self.base_dir = base_dir
        if config:
            self._merge(self.raw, config)
        self.config = self._validate()

    @classmethod
    def from_sources(cls, config_path: Optional[str] = None, overrides: Optional[List[str]] = None) -> "ConfigurationManager":
        """Config file (argument or environment), then environment overrides, then `--set` overrides"""
        path = config_path or os.getenv(cls.CONFIG_ENV)
        loaded: Dict[str, Any] = {}
        base_dir = None
        if path:
            config_file = Path(path)
            if not config_file.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                loaded = json.loads(config_file.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
            if not isinstance(loaded, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
            base_dir = config_file.parent

        if os.getenv(cls.JOBS_ENV):
            _set_dotted(loaded, "jobs", os.getenv(cls.JOBS_ENV))
        if os.getenv(cls.OUTPUT_DIR_ENV):
            _set_dotted(loaded, "paths.output_dir", os.getenv(cls.OUTPUT_DIR_ENV))
        for assignment in overrides or []:
            key, value = parse_override(assignment)
            _set_dotted(loaded, key, value)
        return cls(loaded, base_dir=base_dir)

    @staticmethod
    def _merge(target: Dict[str, Any], updates: Dict[str, Any]):
        for key, value in updates.items():
            if isinstance(value, dict) and isinstance(target.get(key), dict) and key not in ("raw", "corpora"):
                ConfigurationManager._merge(target[key], value)
            else:
                target[key] = value

    def _validate(self) -> PipelineConfig:
        """Validate configuration values"""
        try:
            config = PipelineConfig.model_validate(self.raw)
        except PydanticValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"invalid configuration: {problems}") from e
        if self.base_dir is not None:
            config = self._resolve_paths(config)
        return config

    def _resolve_paths(self, config: PipelineConfig) -> PipelineConfig:
        """Relative paths in a config file are relative to that file"""
        def resolve(value):
            if value is None:
                return None
            path = Path(value)
            return str(path if path.is_absolute() else self.base_dir / path)

        paths = config.paths
        resolved = paths.model_copy(update={
            "kb": resolve(paths.kb),
            "mapping": resolve(paths.mapping),
            "gold_mapping": resolve(paths.gold_mapping),
            "target_kb": resolve(paths.target_kb),
            "raw": {split: resolve(p) for split, p in paths.raw.items()},
            "corpora": {split: resolve(p) for split, p in paths.corpora.items()},
            "entity_vectors": resolve(paths.entity_vectors),
            "context_vectors": resolve(paths.context_vectors),
            "scores": resolve(paths.scores),
            "pool_filter": resolve(paths.pool_filter),
            "output_dir": resolve(paths.output_dir),
        })
        return config.model_copy(update={"paths": resolved})

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value by dotted key"""
        node: Any = self.config
        for part in key.split("."):
            if isinstance(node, dict):
                if part not in node:
                    return default
                node = node[part]
            elif hasattr(node, part):
                node = getattr(node, part)
            else:
                return default
        return node

    def update(self, updates: Dict[str, Any]):
        """Apply dotted-key updates and re-validate"""
        for key, value in updates.items():
            _set_dotted(self.raw, key, value)
        self.config = self._validate()

    def dump(self) -> Dict[str, Any]:
        """Effective configuration, including the resolved threshold"""
        data = self.config.model_dump(mode="json")
        data["effective_threshold"] = self.config.effective_threshold
        return data

    def config_hash_payload(self) -> str:
        """Canonical JSON of everything that can change artifacts (worker count excluded)"""
        data = self.config.model_dump(mode="json", exclude={"jobs"})
        data["params"].pop("shards", None)
        data["toggles"].pop("progress", None)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))


def require_file(path: Optional[str], artifact: str) -> Path:
    """Resolve a declared input, raising MissingInputError naming the artifact"""
    if not path:
        raise MissingInputError(artifact)
    resolved = Path(path)
    if not resolved.exists():
        raise MissingInputError(artifact, str(resolved))
    return resolved


def iter_json_lines(path: Path, artifact: str):
    """
    Iterate (line_number, object) over a JSON-lines artifact

    Raises:
        MissingInputError: file absent
        ParseError: a line is not a JSON object
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(artifact, str(path))
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line_number, artifact) from e
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", line_number, artifact)
            yield line_number, record
