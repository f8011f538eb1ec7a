"""Configuration management for vmtsim.

Simulation configuration is a tree of pydantic models loaded from YAML with
kebab-case keys. When no file is given, ``config.yaml`` under the user config
directory (platformdirs) is used if present, else the built-in defaults.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal

import yaml
from platformdirs import user_config_dir
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

BLOCK_SIZES = (32, 64, 128, 256, 512)


class ConfigError(Exception):
    """Invalid or unreadable configuration."""

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.field = field


class PipelineConfig(BaseModel):
    """Main pipeline clock and PHV buffering."""

    frequency_mhz: float = Field(default=250.0, gt=0, alias="frequency-mhz", description="Pipeline clock")
    phv_fifo_depth: int = Field(default=64, ge=1, alias="phv-fifo-depth", description="Per-VMT PHV input FIFO depth")
    source_buffer: int = Field(default=1024, ge=1, alias="source-buffer", description="Injector buffer depth")
    strict_order: bool = Field(default=False, alias="strict-order", description="Emit PHVs in arrival order per VMT")

    model_config = {"populate_by_name": True}

    @property
    def cycle_ns(self) -> float:
        return 1000.0 / self.frequency_mhz


class PmuConfig(BaseModel):
    """Physical match unit geometry and timing."""

    block_size: int = Field(default=256, alias="block-size", description="CAM entries per PMU")
    lookup_latency: int = Field(default=2, ge=1, alias="lookup-latency", description="tau_c in local cycles")
    initiation_interval: int = Field(default=2, ge=1, alias="initiation-interval", description="II_c in local cycles")
    clock_ratio: float = Field(default=1.0, gt=0, alias="clock-ratio", description="PMU clock relative to pipeline")
    request_queue: int = Field(default=16, ge=1, alias="request-queue", description="Q_r depth")
    response_queue: int = Field(default=16, ge=1, alias="response-queue", description="Q_p depth")
    miss_queue: int = Field(default=16, ge=1, alias="miss-queue", description="Q_m depth")
    negative_caching: bool = Field(default=False, alias="negative-caching", description="Cache NOT_FOUND resolutions")

    model_config = {"populate_by_name": True}

    @field_validator("block_size")
    @classmethod
    def _block_size(cls, v: int) -> int:
        if v not in BLOCK_SIZES:
            raise ValueError(f"block-size must be one of {BLOCK_SIZES}")
        return v


class FieldConfig(BaseModel):
    """A match field of a VMT key."""

    name: str
    width: int = Field(ge=1, le=512, description="Field width in bits")


class RulesetConfig(BaseModel):
    """Where a VMT's rules come from: a file or the generator."""

    file: Path | None = Field(default=None, description="Ruleset file")
    count: int = Field(default=1000, ge=1, description="Generated rule count")
    histogram: dict[int, float] = Field(
        default_factory=lambda: {24: 0.6, 32: 0.4},
        description="Prefix-length histogram of the last field",
    )
    actions: int = Field(default=64, ge=1, description="Distinct action ids (1..actions)")

    @field_validator("file")
    @classmethod
    def _exists(cls, v: Path | None) -> Path | None:
        if v is not None and not v.exists():
            raise ValueError(f"ruleset file {v} does not exist")
        return v


class VmtConfig(BaseModel):
    """One virtual match table."""

    id: int = Field(ge=0)
    key_fields: list[FieldConfig] = Field(
        default_factory=lambda: [FieldConfig(name="dst", width=32)], alias="fields"
    )
    table_bits: int = Field(default=8, ge=1, le=20, alias="table-bits", description="Lookup table has 2^N entries")
    await_depth: int = Field(default=64, ge=1, alias="await-depth", description="D: outstanding PHV bound")
    vnodes: int = Field(default=64, ge=1, description="Virtual nodes per PMU on the hash ring")
    default_action: int = Field(default=0, ge=0, alias="default-action")
    pmus: int = Field(default=1, ge=0, description="Initially associated PMUs")
    rules: RulesetConfig = Field(default_factory=RulesetConfig)

    model_config = {"populate_by_name": True}

    @property
    def key_bits(self) -> int:
        return sum(f.width for f in self.key_fields)

    @property
    def key_width(self) -> int:
        return self.key_bits // 8

    @model_validator(mode="after")
    def _whole_bytes(self) -> VmtConfig:
        if self.key_bits % 8:
            raise ValueError(f"VMT {self.id}: key width {self.key_bits} bits is not whole bytes")
        if self.key_width > 64:
            raise ValueError(f"VMT {self.id}: key width exceeds 64 bytes")
        return self


class InterconnectConfig(BaseModel):
    """Segmented request network and response bus."""

    channels: int = Field(default=4, ge=1, description="C")
    deferred_depth: int = Field(default=32, ge=1, alias="deferred-depth")
    response_latency: int = Field(default=1, ge=1, alias="response-latency")

    model_config = {"populate_by_name": True}


class EluConfig(BaseModel):
    """External lookup unit and memory model."""

    stride: int = Field(default=4, ge=1, le=16)
    n_banks: int = Field(default=8, ge=1, alias="n-banks")
    latency: int = Field(default=50, ge=1, description="L_mem in pipeline cycles")
    initiation_interval: int = Field(default=2, ge=1, alias="initiation-interval", description="II_mem per bank")
    node_bytes: int = Field(default=64, ge=1, alias="node-bytes")
    overhead: int = Field(default=4, ge=0, description="Constant per-lookup overhead cycles")
    orb_size: int = Field(default=64, ge=1, alias="orb-size")
    drain_width: int = Field(default=1, ge=1, alias="drain-width")
    issue_width: int = Field(default=1, ge=1, alias="issue-width")
    collect_width: int = Field(default=1, ge=1, alias="collect-width", description="PMU misses gathered per cycle")
    replicas: int = Field(default=1, ge=1, description="Trie copies across channels")
    request_queue_depth: int = Field(default=64, ge=1, alias="request-queue-depth", description="Q_m^G")
    reply_queue_depth: int = Field(default=16, ge=1, alias="reply-queue-depth", description="Q_l^G")

    model_config = {"populate_by_name": True}


class UslConfig(BaseModel):
    """USL coefficients of one CFG node."""

    alpha0: float = 0.0
    alpha1: float = 0.05
    beta0: float = 0.08
    beta1: float = 0.0


class OptimizerConfig(BaseModel):
    """Runtime allocation optimizer."""

    enabled: bool = False
    mode: Literal["exact", "heuristic"] = "heuristic"
    window_us: float = Field(default=10.0, gt=0, alias="window-us", description="Counter window")
    period_windows: int = Field(default=100, ge=1, alias="period-windows", description="Windows between OPT runs")
    gamma: float = Field(default=0.5, ge=0, le=1, description="Transition estimate smoothing")
    floor: int = Field(default=1, ge=0, description="Minimum PMUs per active node")
    realloc_threshold: float = Field(default=0.01, ge=0, alias="realloc-threshold")
    fit_online: bool = Field(default=False, alias="fit-online")
    usl: dict[int, UslConfig] = Field(default_factory=dict, description="Per-node USL parameters")
    default_usl: UslConfig = Field(default_factory=UslConfig, alias="default-usl")

    model_config = {"populate_by_name": True}


class ProfileSegment(BaseModel):
    """A traffic profile segment."""

    duration_ns: int = Field(gt=0, alias="duration-ns")
    rate_pps: float = Field(ge=0, alias="rate-pps")

    model_config = {"populate_by_name": True}


class TrafficConfig(BaseModel):
    """Traffic source: a trace file or the generator."""

    trace: Path | None = Field(default=None, description="Trace CSV to replay")
    flows: int = Field(default=1000, ge=0)
    rate_pps: float = Field(default=2.0e7, ge=0, alias="rate-pps", description="Target aggregate input rate")
    distribution: Literal["zipf", "pareto", "uniform", "file"] = "pareto"
    cdf_file: Path | None = Field(default=None, alias="cdf-file")
    size_param: float = Field(default=1.2, gt=0, alias="size-param", description="Zipf exponent or Pareto shape")
    max_size: int = Field(default=100_000, ge=1, alias="max-size")
    rule_zipf: float = Field(default=1.0, ge=0, alias="rule-zipf", description="Rule popularity exponent")
    uniform_starts: bool = Field(default=True, alias="uniform-starts")
    profile: list[ProfileSegment] = Field(default_factory=list)

    model_config = {"populate_by_name": True}

    @model_validator(mode="after")
    def _files(self) -> TrafficConfig:
        if self.trace is not None and not self.trace.exists():
            raise ValueError(f"trace file {self.trace} does not exist")
        if self.distribution == "file":
            if self.cdf_file is None:
                raise ValueError("distribution 'file' requires cdf-file")
            if not self.cdf_file.exists():
                raise ValueError(f"cdf file {self.cdf_file} does not exist")
        return self


class CfgConfig(BaseModel):
    """Control-flow graph over the VMTs."""

    file: Path | None = None
    builtin: Literal["chain", "two-path"] = "chain"

    @field_validator("file")
    @classmethod
    def _exists(cls, v: Path | None) -> Path | None:
        if v is not None and not v.exists():
            raise ValueError(f"CFG file {v} does not exist")
        return v


class SimConfig(BaseModel):
    """Root simulation configuration."""

    seed: int = Field(default=1, ge=0)
    duration_ns: int = Field(default=1_000_000, gt=0, alias="duration-ns")
    pmu_count: int = Field(default=8, ge=1, alias="pmu-count", description="P")
    drain_timeout_cycles: int = Field(default=1_000_000, ge=1, alias="drain-timeout-cycles")
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    pmu: PmuConfig = Field(default_factory=PmuConfig)
    vmts: list[VmtConfig] = Field(default_factory=lambda: [VmtConfig(id=0, pmus=4)])
    interconnect: InterconnectConfig = Field(default_factory=InterconnectConfig)
    elu: EluConfig = Field(default_factory=EluConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    traffic: TrafficConfig = Field(default_factory=TrafficConfig)
    cfg: CfgConfig = Field(default_factory=CfgConfig)

    model_config = {"populate_by_name": True}

    @model_validator(mode="after")
    def _consistency(self) -> SimConfig:
        if not self.vmts:
            raise ValueError("at least one VMT is required")
        ids = [v.id for v in self.vmts]
        if len(set(ids)) != len(ids):
            raise ValueError("VMT ids must be unique")
        if sum(v.pmus for v in self.vmts) > self.pmu_count:
            raise ValueError("initial VMT PMU counts exceed pmu-count")
        if self.cfg.builtin == "two-path" and self.cfg.file is None and sorted(ids) != [0, 1, 2, 3]:
            raise ValueError("builtin two-path CFG requires VMT ids 0..3")
        return self

    @property
    def window_cycles(self) -> int:
        return max(1, round(self.optimizer.window_us * 1000.0 / self.pipeline.cycle_ns))

    @property
    def duration_cycles(self) -> int:
        return int(self.duration_ns / self.pipeline.cycle_ns)

    def vmt(self, vmt_id: int) -> VmtConfig:
        for v in self.vmts:
            if v.id == vmt_id:
                return v
        raise KeyError(vmt_id)

    def usl_for(self, node: int) -> UslConfig:
        return self.optimizer.usl.get(node, self.optimizer.default_usl)


def get_config_dir() -> Path:
    """Get the user configuration directory path."""
    return Path(user_config_dir("vmtsim", appauthor=False))


def get_config_path() -> Path:
    """Get the default configuration file path."""
    return get_config_dir() / "config.yaml"


def _format_validation(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err["loc"])
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


def config_from_dict(data: dict[str, Any] | None) -> SimConfig:
    """Validate a configuration mapping."""
    try:
        return SimConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigError(_format_validation(e)) from e


def load_config(path: Path | None = None) -> SimConfig:
    """Load configuration from ``path``, the user default, or built-in defaults.

    Raises:
        ConfigError: If the file cannot be read or fails validation
    """
    if path is None:
        env_path = get_env_override("config")
        path = Path(env_path) if env_path else get_config_path()
        if not path.exists():
            return SimConfig()
    elif not path.exists():
        raise ConfigError(f"Config file {path} does not exist")

    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Failed to load config from {path}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    return config_from_dict(data)


def config_to_dict(config: SimConfig) -> dict[str, Any]:
    """Dump with aliases and every default, paths as strings."""
    return config.model_dump(by_alias=True, mode="json")


def save_config(config: SimConfig, path: Path) -> None:
    """Save configuration to a YAML file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        yaml.dump(config_to_dict(config), default_flow_style=False, sort_keys=False),
        encoding="utf-8",
    )


def write_resolved(config: SimConfig, out_dir: Path) -> Path:
    """Write ``config.resolved`` echoing all defaults."""
    path = out_dir / "config.resolved"
    save_config(config, path)
    return path


def apply_overrides(config: SimConfig, seed: int | None = None) -> SimConfig:
    """Apply CLI/environment overrides."""
    if seed is None:
        env_seed = get_env_override("seed")
        if env_seed:
            try:
                seed = int(env_seed)
            except ValueError as e:
                raise ConfigError(f"VMTSIM_SEED must be an integer, got {env_seed!r}", "seed") from e
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return config


def get_env_override(key: str) -> str | None:
    """Get environment variable override for a config key.

    Supported environment variables:
    - VMTSIM_SEED: Random seed
    - VMTSIM_OUT: Output directory
    - VMTSIM_VERBOSE: Enable verbose mode
    - VMTSIM_CONFIG: Configuration file
    """
    env_map = {
        "seed": "VMTSIM_SEED",
        "out": "VMTSIM_OUT",
        "verbose": "VMTSIM_VERBOSE",
        "config": "VMTSIM_CONFIG",
    }
    env_var = env_map.get(key)
    if env_var:
        return os.environ.get(env_var)
    return None
