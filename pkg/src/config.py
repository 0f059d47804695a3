"""
Configuration management for the query-trained belief propagation toolkit.

Two layers live here:

* ``Settings`` - ambient runtime knobs (logging, worker cap, output directory) resolved
  from environment variables and ``.env`` files with Pydantic Settings.
* ``RunConfig`` - the per-run experiment configuration, read from a flat ``key = value``
  file and overridden by command-line flags. Unknown keys are rejected.
"""

from typing import Any, Dict, List, Literal, Optional, Tuple
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings
from functools import lru_cache
import os
from pathlib import Path

from .errors import ConfigError
from .models.params import ModelKind
from .models.training import QuerySpec, TrainConfig


class Settings(BaseSettings):
    """Ambient settings with type validation and environment variable support."""

    log_level: str = Field(default="INFO", description="Logging level")
    log_json: bool = Field(default=False, description="Emit log records as JSON lines")
    threads: int = Field(default=1, ge=1, le=256, description="Default worker cap")
    output_dir: str = Field(default="runs", description="Default directory for run artifacts")
    enable_debug_mode: bool = Field(default=False, description="Force DEBUG logging and log tracebacks of failed commands")

    @field_validator('log_level')
    def validate_log_level(cls, v):
        """Validate log level is supported."""
        valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if v.upper() not in valid_levels:
            raise ValueError(f'Log level must be one of: {valid_levels}')
        return v.upper()

    @property
    def effective_log_level(self) -> str:
        """DEBUG whenever debug mode is on, otherwise ``log_level``."""
        return "DEBUG" if self.enable_debug_mode else self.log_level

    model_config = {
        "env_prefix": "QTBP_",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "extra": "ignore",
    }


def get_env_file() -> str:
    """Dynamically determine which .env file to load based on ENVIRONMENT variable."""
    environment = os.getenv("ENVIRONMENT", "local").lower()
    base_path = Path(__file__).parent.parent

    if environment == "test":
        env_files = [
            base_path / "tests" / ".env.test",
            base_path / f".env.{environment}",
            base_path / ".env.example",
        ]
    else:
        env_files = [
            base_path / f".env.{environment}",
            base_path / ".env",
            base_path / ".env.example",
        ]

    for env_file in env_files:
        if env_file.exists():
            return str(env_file)

    return str(base_path / ".env.example")


class DevelopmentSettings(Settings):
    """Development settings with verbose logging."""

    enable_debug_mode: bool = Field(default=True)
    log_level: str = Field(default="DEBUG")


@lru_cache()
def get_settings() -> Settings:
    """
    Get ambient settings with caching.

    Returns:
        Settings: Configured settings instance
    """
    environment = os.getenv("ENVIRONMENT", "local").lower()
    env_file = get_env_file()

    if environment == "development":
        return DevelopmentSettings(_env_file=env_file)
    return Settings(_env_file=env_file)


def validate_configuration(settings: Settings) -> List[str]:
    """
    Validate ambient settings and return a list of warnings.

    Args:
        settings: Settings instance to validate

    Returns:
        List[str]: List of validation messages
    """
    messages = []
    if settings.enable_debug_mode:
        messages.append("INFO: Debug mode is enabled")
    if settings.log_level == "DEBUG":
        messages.append("INFO: Debug logging is enabled")
    cpu_count = os.cpu_count() or 1
    if settings.threads > cpu_count:
        messages.append(f"WARNING: threads={settings.threads} exceeds the {cpu_count} available CPUs")
    return messages


def print_configuration_summary(settings: Settings) -> None:
    """Print a summary of the current ambient configuration."""
    env_file_name = Path(get_env_file()).name

    print("Configuration Summary:")
    print(f"  Environment: {os.getenv('ENVIRONMENT', 'local')}")
    print(f"  Config File: {env_file_name}")
    print(f"  Log Level: {settings.log_level}")
    print(f"  JSON Logs: {settings.log_json}")
    print(f"  Threads: {settings.threads}")
    print(f"  Output Dir: {settings.output_dir}")

    messages = validate_configuration(settings)
    if messages:
        print("\nConfiguration Messages:")
        for message in messages:
            print(f"  {message}")


class RunConfig(BaseModel):
    """Flat experiment configuration shared by every subcommand."""

    model: ModelKind = ModelKind.RBM
    visible: Optional[int] = Field(default=None, gt=0)
    hidden: int = Field(default=5, gt=0)
    hidden2: int = Field(default=2, gt=0)
    layers: int = Field(default=10, gt=0)
    temperature: Optional[float] = Field(default=None, ge=0.0, description="None = learned")
    lr: float = Field(default=0.01, gt=0.0)
    lr_grid: Optional[List[float]] = None
    batch_size: int = Field(default=500, gt=0)
    max_epochs: int = Field(default=50, gt=0)
    patience: int = Field(default=5, ge=0)
    seed: int = Field(default=0, ge=0)
    query: Optional[str] = Field(default=None, description="None = the model's default query")
    epsilon: float = Field(default=1e-4, gt=0.0)
    n_clones: int = Field(default=8, gt=0)
    image_rows: Optional[int] = Field(default=None, gt=0)
    image_cols: Optional[int] = Field(default=None, gt=0)
    data_path: Optional[str] = None
    train_path: Optional[str] = None
    valid_path: Optional[str] = None
    test_path: Optional[str] = None
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    output_dir: str = "runs"
    threads: int = Field(default=1, ge=1)
    record_wall_time: bool = False

    model_config = {"extra": "forbid"}

    @field_validator('lr_grid')
    def validate_lr_grid(cls, v):
        """Every learning rate in the grid must be positive."""
        if v is not None:
            if not v:
                raise ValueError('lr_grid must not be empty')
            if any(lr <= 0 for lr in v):
                raise ValueError('lr_grid entries must be positive')
        return v

    @field_validator('query')
    def validate_query(cls, v):
        """Query strings must parse."""
        if v is not None:
            QuerySpec.parse(v)
        return v

    @model_validator(mode="after")
    def validate_image_shape(self):
        """Image rows and columns come together."""
        if (self.image_rows is None) != (self.image_cols is None):
            raise ValueError('image_rows and image_cols must be given together')
        return self

    @property
    def image_shape(self) -> Optional[Tuple[int, int]]:
        if self.image_rows is None:
            return None
        return (self.image_rows, self.image_cols)

    def query_spec(self) -> QuerySpec:
        """The configured query, else the image-to-labels query for the grid model and
        Bernoulli(0.5) for the others."""
        if self.query is None:
            return QuerySpec.parse("fixed" if self.model == ModelKind.GMRF else "bernoulli:0.5")
        return QuerySpec.parse(self.query)

    def train_config(self, visible: int) -> TrainConfig:
        """Project the run configuration onto the trainer's configuration."""
        try:
            return TrainConfig(
                model=self.model,
                visible=visible,
                hidden=self.hidden,
                hidden2=self.hidden2,
                layers=self.layers,
                temperature=self.temperature,
                lr=self.lr,
                lr_grid=self.lr_grid,
                batch_size=self.batch_size,
                max_epochs=self.max_epochs,
                patience=self.patience,
                seed=self.seed,
                query=self.query_spec(),
                epsilon=self.epsilon,
                n_clones=self.n_clones,
                image_shape=self.image_shape,
                threads=self.threads,
                record_wall_time=self.record_wall_time,
            )
        except ValidationError as e:
            raise ConfigError(str(e)) from e


class GenDataConfig(BaseModel):
    """Flags of the dataset generator."""

    kind: Literal["border", "rbm", "texture"]
    n: int = Field(default=1000, gt=0)
    rows: int = Field(default=12, gt=0)
    cols: int = Field(default=12, gt=0)
    shape: Literal["rectangle", "ellipse"] = "rectangle"
    p_drop: float = Field(default=0.2, ge=0.0, le=1.0)
    n_spurious: int = Field(default=8, ge=0)
    spur_len: int = Field(default=3, gt=0)
    visible: int = Field(default=10, gt=0)
    hidden: int = Field(default=5, gt=0)
    weight_scale: float = Field(default=1.0, gt=0.0)
    seed: int = Field(default=0, ge=0)

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def validate_rbm_size(self):
        """Exact sampling enumerates every joint state of the ground-truth RBM."""
        if self.kind == "rbm" and self.visible + self.hidden > 20:
            raise ValueError('visible + hidden must not exceed 20 for exact sampling')
        return self


_LIST_KEYS = {"lr_grid", "split_fractions"}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        if key in _LIST_KEYS:
            values[key] = [item.strip() for item in value.split(",") if item.strip()]
        else:
            values[key] = value
    return values


def load_run_config(
    path: Optional[str],
    overrides: Optional[Dict[str, Any]] = None,
    defaults: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    Build a validated RunConfig: ``defaults`` < config file < flag ``overrides``.

    Raises:
        ConfigError: unreadable file, unknown key or invalid value
    """
    values: Dict[str, Any] = dict(defaults or {})
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        values.update(parse_config_text(text, source=path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    if str(values.get("temperature", "")).lower() == "learned":
        values["temperature"] = None
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


if __name__ == "__main__":
    print_configuration_summary(get_settings())
