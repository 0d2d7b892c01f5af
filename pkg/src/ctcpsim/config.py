"""
Experiment configuration in the ``INI`` format. An example file::

    [experiment]
    # comma-separated lists
    variants = ctcp_v2, hybla, cubic
    per = 0, 0.005, 0.2
    rtt_ms = 500, 800
    link_rate_mbps = 10
    transfer_mb = 20
    repetitions = 5
    seed = 7
    parallel = 4

    [scenario]
    generation_size = 32
    symbol_size = 1000
    # empty means one bandwidth-delay product
    queue_capacity =
    max_open_generations = 128
    ack_loss = no
    duration_cap_s = 600
    receive_window_bytes = 4194304
    carry_payload = no
    pacing = yes

Notes on the format:

1. Use whole-line comments starting with ``#``, with no leading space.
   Do not use in-line comments.
2. Do not quote the values; quotation marks would be literal parts of the value.
3. 'yes', 'no', 'true', 'false' are recognized for the boolean keys.
4. Both sections and every key are optional; missing keys keep their defaults.

Values are resolved as built-in defaults, then the file, then whatever the
command line overrides (``ExperimentConfig.replace``).
"""
import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .congestion import Variant

MEGABYTE = 1_000_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioOverrides:
    generation_size: int = 32
    symbol_size: int = 1000
    # Packets; None means one bandwidth-delay product.
    queue_capacity: Optional[int] = None
    max_open_generations: int = 128
    ack_loss: bool = False
    duration_cap_s: float = 600.0
    receive_window_bytes: int = 4 * 1024 * 1024
    carry_payload: bool = True
    pacing: bool = True

    def validate(self) -> "ScenarioOverrides":
        if self.generation_size < 1 or self.generation_size > 255:
            raise ConfigError(f"scenario.generation_size must be in [1, 255], got {self.generation_size}")
        if self.symbol_size < 1:
            raise ConfigError(f"scenario.symbol_size must be positive, got {self.symbol_size}")
        if self.queue_capacity is not None and self.queue_capacity < 1:
            raise ConfigError(f"scenario.queue_capacity must be >= 1, got {self.queue_capacity}")
        if self.max_open_generations < 1:
            raise ConfigError(
                f"scenario.max_open_generations must be >= 1, got {self.max_open_generations}"
            )
        if not self.duration_cap_s > 0:
            raise ConfigError(f"scenario.duration_cap_s must be positive, got {self.duration_cap_s}")
        if self.receive_window_bytes < 1:
            raise ConfigError(
                f"scenario.receive_window_bytes must be positive, got {self.receive_window_bytes}"
            )
        return self


@dataclass(frozen=True)
class ExperimentConfig:
    variants: Tuple[Variant, ...] = tuple(Variant)
    per: Tuple[float, ...] = (0.0, 0.005, 0.01, 0.025, 0.05, 0.1, 0.2)
    rtt_ms: Tuple[float, ...] = (500.0, 600.0, 700.0, 800.0)
    link_rate_mbps: float = 10.0
    transfer_mb: float = 20.0
    repetitions: int = 5
    seed: int = 0
    parallel: int = 1
    scenario: ScenarioOverrides = field(default_factory=ScenarioOverrides)

    @property
    def link_rate_bps(self) -> float:
        return self.link_rate_mbps * 1e6

    @property
    def transfer_bytes(self) -> int:
        return int(round(self.transfer_mb * MEGABYTE))

    def validate(self) -> "ExperimentConfig":
        for name in ("variants", "per", "rtt_ms"):
            if not getattr(self, name):
                raise ConfigError(f"experiment.{name} must not be empty")
        for p in self.per:
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"experiment.per values must be in [0, 1), got {p}")
        for r in self.rtt_ms:
            if not r > 0:
                raise ConfigError(f"experiment.rtt_ms values must be positive, got {r}")
        if not self.link_rate_mbps > 0:
            raise ConfigError(f"experiment.link_rate_mbps must be positive, got {self.link_rate_mbps}")
        if self.transfer_mb < 0:
            raise ConfigError(f"experiment.transfer_mb must not be negative, got {self.transfer_mb}")
        if self.repetitions < 1:
            raise ConfigError(f"experiment.repetitions must be >= 1, got {self.repetitions}")
        if self.parallel < 1:
            raise ConfigError(f"experiment.parallel must be >= 1, got {self.parallel}")
        self.scenario.validate()
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        """
        Copy with ``changes`` applied; ``None`` values are ignored, so
        unset command-line flags can be passed through as they are.
        Keys of ``ScenarioOverrides`` are routed to ``scenario``.
        """
        scenario_keys = {f.name for f in dataclasses.fields(ScenarioOverrides)}
        top, sub = {}, {}
        for key, value in changes.items():
            if value is None:
                continue
            (sub if key in scenario_keys else top)[key] = value
        scenario = dataclasses.replace(self.scenario, **sub)
        return dataclasses.replace(self, scenario=scenario, **top).validate()


def read_ini_config_string(text: str, allow_no_value=True) -> configparser.ConfigParser:
    conf = configparser.ConfigParser(allow_no_value=allow_no_value)
    try:
        conf.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    return conf


def read_ini_config(file_name, **kwargs) -> configparser.ConfigParser:
    with open(file_name) as f:
        return read_ini_config_string(f.read(), **kwargs)


def _items(conf, section: str, known) -> dict:
    if not conf.has_section(section):
        return {}
    values = dict(conf[section])
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")
    return values


def _convert(section: str, key: str, raw, kind):
    where = f"{section}.{key}"
    try:
        if kind is bool:
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if kind == "list_float":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "list_variant":
            return tuple(Variant(v.strip()) for v in raw.split(",") if v.strip())
        if kind == "optional_int":
            return int(raw) if raw and raw.strip() else None
        return kind(raw)
    except (KeyError, ValueError, AttributeError, TypeError) as e:
        raise ConfigError(f"invalid value {raw!r} for {where}") from e


_EXPERIMENT_KEYS = {
    "variants": "list_variant",
    "per": "list_float",
    "rtt_ms": "list_float",
    "link_rate_mbps": float,
    "transfer_mb": float,
    "repetitions": int,
    "seed": int,
    "parallel": int,
}

_SCENARIO_KEYS = {
    "generation_size": int,
    "symbol_size": int,
    "queue_capacity": "optional_int",
    "max_open_generations": int,
    "ack_loss": bool,
    "duration_cap_s": float,
    "receive_window_bytes": int,
    "carry_payload": bool,
    "pacing": bool,
}


def experiment_config_from_ini(
    conf: configparser.ConfigParser, base: ExperimentConfig = None
) -> ExperimentConfig:
    base = base or ExperimentConfig()
    changes = {}
    for section, known in (("experiment", _EXPERIMENT_KEYS), ("scenario", _SCENARIO_KEYS)):
        for key, raw in _items(conf, section, known).items():
            kind = known[key]
            if raw is None and kind != "optional_int":
                raise ConfigError(f"{section}.{key} has no value")
            value = _convert(section, key, raw, kind)
            if key == "queue_capacity":
                # An empty value explicitly asks for the default.
                base = dataclasses.replace(
                    base, scenario=dataclasses.replace(base.scenario, queue_capacity=value)
                )
                continue
            changes[key] = value
    return base.replace(**changes)


def load_experiment_config(file_name=None, **overrides) -> ExperimentConfig:
    """Defaults, then ``file_name`` if given, then ``overrides``."""
    config = ExperimentConfig()
    if file_name:
        config = experiment_config_from_ini(read_ini_config(file_name), config)
    return config.replace(**overrides)
