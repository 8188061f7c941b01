"""
User Configuration for Training and Command Runs

Dataclass configurations validated on construction, plus the sectioned
``key = value`` run configuration read by the command-line entry point. A
run manifest can stand in for the configuration file to repeat a run.
"""

import configparser
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

from .exceptions import ConfigurationError
from .key_matcher import find_close_matches, match_key

logger = logging.getLogger(__name__)

VALID_OPTIMIZERS = ("adam", "sgd")
VALID_SOURCES = ("skeleton", "planted")
VALID_FORMATS = ("text", "json")


def parse_layers(value: Union[str, Tuple[int, ...], list]) -> Tuple[int, ...]:
    """Parse ``"32,8"`` (or a sequence) into a tuple of layer widths"""
    if isinstance(value, str):
        try:
            return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
        except ValueError:
            raise ConfigurationError(f"Invalid layer list: '{value}'", config_field="layers")
    return tuple(int(v) for v in value)


@dataclass(frozen=True)
class ModelDims:
    """
    Landmark count and encoder layer widths k₁…kₙ.

    Example:
        >>> dims = ModelDims(p=15, layers=(32, 8))
        >>> dims.n
        2
    """

    p: int
    layers: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", parse_layers(self.layers))
        self.validate()

    def validate(self) -> None:
        if self.p < 1:
            raise ConfigurationError("p must be at least 1", config_field="p")
        if len(self.layers) == 0:
            raise ConfigurationError("at least one layer width is required", config_field="layers")
        if any(k < 1 for k in self.layers):
            raise ConfigurationError(
                f"layer widths must be positive, got {list(self.layers)}",
                config_field="layers"
            )

    @property
    def n(self) -> int:
        return len(self.layers)

    def to_dict(self) -> Dict[str, Any]:
        return {"p": self.p, "layers": list(self.layers)}

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "ModelDims":
        return ModelDims(p=int(data["p"]), layers=tuple(data["layers"]))


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("Adam betas must lie in [0, 1)", config_field="beta1")
        if self.eps <= 0:
            raise ConfigurationError("Adam eps must be positive", config_field="eps")


@dataclass
class TrainConfig:
    """
    Configuration for mini-batch training.

    Attributes:
        dims: Model dimensions
        batch_size: Frames per optimizer step
        epochs: Passes over the shuffled dataset
        learning_rate: Optimizer step size
        optimizer: 'adam' or 'sgd'
        adam: Adam moment settings
        seed: Seed for initialization and shuffling
        log_every: Record the batch loss every this many steps
        coherence_every: Record coherence of the final dictionary every this many steps
        threads: Worker threads for per-frame forward/backward
        init_threshold: Initial value of every encoder/decoder threshold
        track_shape_error: Record shape error alongside coherence when ground truth exists
    """

    dims: ModelDims
    batch_size: int = 32
    epochs: int = 300
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    log_every: int = 10
    coherence_every: int = 50
    threads: int = 1
    init_threshold: float = 0.01
    track_shape_error: bool = True

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1", config_field="batch_size")
        if self.epochs < 0:
            raise ConfigurationError("epochs cannot be negative", config_field="epochs")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate cannot be negative", config_field="lr")
        if self.optimizer not in VALID_OPTIMIZERS:
            raise ConfigurationError(
                f"Invalid optimizer: '{self.optimizer}'. "
                f"Must be one of: {', '.join(VALID_OPTIMIZERS)}",
                config_field="optimizer"
            )
        if self.log_every < 1:
            raise ConfigurationError("log_every must be at least 1", config_field="log_every")
        if self.coherence_every < 1:
            raise ConfigurationError("coherence_every must be at least 1",
                                     config_field="coherence_every")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1", config_field="threads")
        if self.init_threshold < 0:
            raise ConfigurationError("init_threshold cannot be negative",
                                     config_field="init_threshold")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["dims"] = self.dims.to_dict()
        return data


@dataclass
class SynthConfig:
    """
    Configuration for dataset synthesis.

    Attributes:
        source: 'skeleton', 'planted', or a path to a mocap CSV / landmark file with ground truth
        frames: Number of frames to generate (or the cap on frames read from a file)
        seed: Root seed for shapes, cameras, noise and the holdout split
        noise: Per-frame noise ratio ‖N‖_F / ‖W‖_F
        p: Landmark count of the planted source
        layers: Layer widths of the planted source
        active_blocks: Nonzero top-code entries per planted frame (the rest pose included)
        deformation: Largest weight of a planted deformation entry
        holdout: Fraction of frames written to a separate held-out file
        delimiter: Field delimiter of mocap CSV sources
    """

    source: str = "skeleton"
    frames: int = 1000
    seed: int = 0
    noise: float = 0.0
    p: int = 15
    layers: Tuple[int, ...] = (32, 8)
    active_blocks: int = 2
    deformation: float = 0.1
    holdout: float = 0.0
    delimiter: str = ","

    def __post_init__(self) -> None:
        self.layers = parse_layers(self.layers)
        self.validate()

    def validate(self) -> None:
        if self.frames < 1:
            raise ConfigurationError("frames must be at least 1", config_field="frames")
        if not self.noise >= 0:
            raise ConfigurationError("noise ratio must be nonnegative", config_field="noise")
        if not 0.0 <= self.holdout < 1.0:
            raise ConfigurationError("holdout must lie in [0, 1)", config_field="holdout")
        if not self.deformation > 0:
            raise ConfigurationError("deformation must be positive", config_field="deformation")
        if not self.delimiter:
            raise ConfigurationError("delimiter cannot be empty", config_field="delimiter")

    @property
    def dims(self) -> ModelDims:
        return ModelDims(p=self.p, layers=self.layers)


# Run configuration: per-command keys with their parsers and defaults.
# ``None`` defaults mean "required unless given positionally or on the command line".

def _parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{value}'")


def _parse_optional_str(value: Any) -> Optional[str]:
    if value is None:
        return None
    text = str(value).strip()
    return text or None


Parser = Callable[[Any], Any]

COMMAND_SCHEMAS: Dict[str, Dict[str, Tuple[Parser, Any]]] = {
    "synth": {
        "source": (str, "skeleton"),
        "frames": (int, 1000),
        "seed": (int, 0),
        "noise": (float, 0.0),
        "p": (int, 15),
        "layers": (parse_layers, (32, 8)),
        "active_blocks": (int, 2),
        "deformation": (float, 0.1),
        "holdout": (float, 0.0),
        "delimiter": (str, ","),
        "out": (_parse_optional_str, None),
    },
    "train": {
        "dataset": (_parse_optional_str, None),
        "out": (_parse_optional_str, None),
        "epochs": (int, 300),
        "batch_size": (int, 32),
        "lr": (float, 1e-3),
        "layers": (parse_layers, (32, 8)),
        "seed": (int, 0),
        "threads": (int, 1),
        "optimizer": (str, "adam"),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "log_every": (int, 10),
        "coherence_every": (int, 50),
        "init_threshold": (float, 0.01),
        "track_shape_error": (_parse_bool, True),
        "center": (_parse_bool, True),
    },
    "reconstruct": {
        "checkpoint": (_parse_optional_str, None),
        "dataset": (_parse_optional_str, None),
        "out": (_parse_optional_str, None),
        "format": (str, "text"),
        "threads": (int, 1),
        "center": (_parse_bool, True),
    },
    "eval": {
        "checkpoint": (_parse_optional_str, None),
        "dataset": (_parse_optional_str, None),
        "out": (_parse_optional_str, None),
        "threads": (int, 1),
        "center": (_parse_bool, True),
    },
    "coherence": {
        "checkpoint": (_parse_optional_str, None),
        "out": (_parse_optional_str, None),
    },
}


@dataclass
class RunConfig:
    """
    Fully resolved parameters of one command invocation.

    Resolution order is: schema defaults, then the command's section of the
    configuration file, then command-line overrides (flags win).

    Example:
        >>> cfg = RunConfig.resolve("train", overrides={"epochs": 5})
        >>> cfg["epochs"]
        5
    """

    command: str
    values: Dict[str, Any]
    config_file: Optional[str] = None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    @staticmethod
    def schema(command: str) -> Dict[str, Tuple[Parser, Any]]:
        if command not in COMMAND_SCHEMAS:
            raise ConfigurationError(
                f"Unknown command '{command}'",
                config_field="command",
                suggestions=find_close_matches(command, COMMAND_SCHEMAS)
            )
        return COMMAND_SCHEMAS[command]

    @classmethod
    def resolve(
        cls,
        command: str,
        config_file: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None
    ) -> "RunConfig":
        """
        Build a run configuration.

        Raises:
            ConfigurationError: On unknown sections/keys or unparsable values
        """
        schema = cls.schema(command)
        values: Dict[str, Any] = {key: default for key, (_, default) in schema.items()}

        if config_file is not None:
            for key, raw in read_config_section(config_file, command).items():
                values[key] = _parse_value(schema, key, raw)

        for raw_key, raw in (overrides or {}).items():
            if raw is None:
                continue
            key = _known_key(schema, raw_key)
            values[key] = _parse_value(schema, key, raw)

        if "optimizer" in values and values["optimizer"] not in VALID_OPTIMIZERS:
            raise ConfigurationError(
                f"Invalid optimizer: '{values['optimizer']}'",
                config_field="optimizer",
                suggestions=find_close_matches(values["optimizer"], VALID_OPTIMIZERS)
            )
        if "format" in values and values["format"] not in VALID_FORMATS:
            raise ConfigurationError(f"Invalid format: '{values['format']}'",
                                     config_field="format")

        return cls(command, values, None if config_file is None else str(config_file))

    def to_dict(self) -> Dict[str, Any]:
        """JSON-serializable form recorded in run manifests"""
        values = {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}
        return {"command": self.command, "config_file": self.config_file, "values": values}

    def train_config(self, p: int) -> TrainConfig:
        """Project a 'train' run configuration onto TrainConfig"""
        v = self.values
        return TrainConfig(
            dims=ModelDims(p=p, layers=v["layers"]),
            batch_size=v["batch_size"],
            epochs=v["epochs"],
            learning_rate=v["lr"],
            optimizer=v["optimizer"],
            adam=AdamConfig(beta1=v["beta1"], beta2=v["beta2"], eps=v["eps"]),
            seed=v["seed"],
            log_every=v["log_every"],
            coherence_every=v["coherence_every"],
            threads=v["threads"],
            init_threshold=v["init_threshold"],
            track_shape_error=v["track_shape_error"],
        )

    def synth_config(self) -> SynthConfig:
        """Project a 'synth' run configuration onto SynthConfig"""
        v = self.values
        return SynthConfig(
            source=v["source"],
            frames=v["frames"],
            seed=v["seed"],
            noise=v["noise"],
            p=v["p"],
            layers=v["layers"],
            active_blocks=v["active_blocks"],
            deformation=v["deformation"],
            holdout=v["holdout"],
            delimiter=v["delimiter"],
        )


def _known_key(schema: Mapping[str, Any], raw_key: str) -> str:
    key = match_key(raw_key, schema)
    if key is None:
        raise ConfigurationError(
            f"Unknown configuration key '{raw_key}'",
            config_field=raw_key,
            suggestions=find_close_matches(raw_key, schema)
        )
    return key


def _parse_value(schema: Mapping[str, Tuple[Parser, Any]], key: str, raw: Any) -> Any:
    parser, _ = schema[key]
    try:
        return parser(raw)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid value for '{key}': {raw!r} ({e})", config_field=key)


def _looks_like_manifest(path: Path) -> bool:
    if path.suffix == ".json":
        return True
    with open(path, "r", encoding="utf-8") as f:
        return f.read(256).lstrip().startswith("{")


def read_manifest_values(path: Union[str, Path], command: str) -> Dict[str, Any]:
    """
    Read the resolved values recorded in a run manifest.

    A manifest written by one command can seed a rerun of the same command;
    command-line flags still override what it recorded.

    Raises:
        ConfigurationError: If the file is not a manifest or records another command
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"Cannot parse manifest {path}: {e}", config_field="config")

    config = data.get("config") if isinstance(data, dict) else None
    if not isinstance(config, dict) or not isinstance(config.get("values"), dict):
        raise ConfigurationError(f"{path} is not a run manifest (no config.values)",
                                 config_field="config")
    recorded = config.get("command", data.get("command"))
    if recorded != command:
        raise ConfigurationError(
            f"{path} records a '{recorded}' run and cannot configure '{command}'",
            config_field="config"
        )

    schema = COMMAND_SCHEMAS[command]
    return {_known_key(schema, key): value for key, value in config["values"].items()}


def read_config_section(path: Union[str, Path], command: str) -> Dict[str, Any]:
    """
    Read the ``[command]`` section of a sectioned ``key = value`` file.

    A ``*.manifest.json`` written by an earlier run is accepted too (see
    :func:`read_manifest_values`). Unknown section names and keys are
    rejected with suggestions.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Configuration file not found: {path}", config_field="config")
    if _looks_like_manifest(path):
        return read_manifest_values(path, command)

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigurationError(f"Cannot parse configuration file {path}: {e}",
                                 config_field="config")

    for section in parser.sections():
        if section not in COMMAND_SCHEMAS:
            raise ConfigurationError(
                f"Unknown section [{section}] in {path}",
                config_field=section,
                suggestions=find_close_matches(section, COMMAND_SCHEMAS)
            )

    if not parser.has_section(command):
        logger.debug(f"No [{command}] section in {path}; using defaults")
        return {}

    schema = COMMAND_SCHEMAS[command]
    return {_known_key(schema, key): value for key, value in parser.items(command)}
