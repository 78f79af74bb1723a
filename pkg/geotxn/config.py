"""
Scenario files: TOML documents validated into a ``ScenarioConfig``.

Durations are given in milliseconds (``*_ms``) unless a key says otherwise;
the ``*_us`` properties convert them to the simulator's microseconds.
Unknown keys are rejected everywhere.
"""
import tomllib
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from geotxn.conf import get_setting
from geotxn.exceptions import ConfigError
from geotxn.sim import FAULT_KINDS, FaultSpec, LatencyMatrix
from geotxn.txtime.authority import DIRECTIONS
from geotxn.txtime.timestamps import Mode
from geotxn.verify.workload import ARRIVAL_MODELS, WorkloadSpec

BUNDLED_SCENARIOS = Path(__file__).resolve().parent / 'scenarios'

SCENARIO_KINDS = ('cluster', 'dual_anomaly', 'rcp_example')


def ms(value):
    
    return int(round(value * 1000))


class Section(BaseModel):
    
    model_config = ConfigDict(extra='forbid', frozen=True)


class TopologyConfig(Section):
    """
    ``latency_ms`` maps ``"<region>-><region>"`` to the one-way delay of that
    link; links are symmetric unless both directions are given.
    ``gtm_extra_delay_ms`` is added to every round trip to the GTM server.
    """
    
    regions: list[str] = ['east', 'central', 'west']
    latency_ms: dict[str, float] = {}
    default_latency_ms: float = 25.0
    intra_region_latency_ms: float = 0.25
    jitter: float = Field(0.0, ge=0, lt=1)
    bandwidth_mbps: float = Field(0.0, ge=0)
    compute_nodes: int = Field(3, ge=1)
    shards: int = Field(6, ge=1)
    replicas_per_shard: int = Field(2, ge=0)
    placement: str = 'hash'
    tables: int = Field(4, ge=1)
    gtm_region: str = None
    gtm_extra_delay_ms: float = Field(0.0, ge=0)
    
    @field_validator('placement')
    @classmethod
    def check_placement(cls, value):
        
        if value not in ('hash', 'range'):
            raise ValueError('placement must be "hash" or "range"')
        
        return value
    
    @model_validator(mode='after')
    def check_regions(self):
        
        if not self.regions:
            raise ValueError('at least one region is required')
        
        if self.gtm_region is not None and self.gtm_region not in self.regions:
            raise ValueError(f'unknown gtm_region "{self.gtm_region}"')
        
        for link in self.latency_ms:
            src, _, dst = link.partition('->')
            if src.strip() not in self.regions or dst.strip() not in self.regions:
                raise ValueError(f'latency_ms names an unknown link "{link}"')
        
        return self
    
    def latency_matrix(self):
        
        links = {}
        for link, latency in self.latency_ms.items():
            src, _, dst = link.partition('->')
            links[(src.strip(), dst.strip())] = latency
        
        delays = {}
        bandwidth = {}
        for src in self.regions:
            for dst in self.regions:
                if src == dst:
                    latency = self.intra_region_latency_ms
                else:
                    latency = links.get((src, dst), links.get((dst, src), self.default_latency_ms))
                
                delays[(src, dst)] = ms(latency)
                if self.bandwidth_mbps:
                    bandwidth[(src, dst)] = self.bandwidth_mbps * 125_000
        
        return LatencyMatrix(list(self.regions), delays, self.jitter, bandwidth)


class ClockConfig(Section):
    
    drift_ppm: float = Field(200.0, ge=0)
    sync_interval_ms: float = Field(1.0, gt=0)
    sync_roundtrip_us: int = Field(60, ge=0)
    pinned_offsets_us: dict[str, float] = {}


class TransitionConfig(Section):
    
    at_ms: float = Field(ge=0)
    direction: str
    
    @field_validator('direction')
    @classmethod
    def check_direction(cls, value):
        
        if value not in DIRECTIONS:
            raise ValueError(f'direction must be one of {", ".join(sorted(DIRECTIONS))}')
        
        return value


class ModesConfig(Section):
    
    initial: Mode = Mode.GTM
    enable_dual_wait: bool = True
    auto_fallback: bool = True
    auto_return: bool = False
    transitions: list[TransitionConfig] = []
    
    @field_validator('initial')
    @classmethod
    def check_initial(cls, value):
        
        if value is Mode.DUAL:
            raise ValueError('a cluster cannot start in DUAL mode')
        
        return value


class ReplicationConfig(Section):
    """
    ``lag_ms`` delays shipping to every replica; ``random_lag_ms`` adds a
    seeded uniform draw in ``[0, random_lag_ms]`` per replica; ``lags_ms``
    overrides both for individual replicas.
    """
    
    mode: str = 'async'
    lag_ms: float = Field(0.0, ge=0)
    random_lag_ms: float = Field(0.0, ge=0)
    lags_ms: dict[str, float] = {}
    batch_size: int = Field(64, ge=1)
    quorum_timeout_ms: float = Field(1000.0, gt=0)
    in_doubt_after_ms: float = Field(2000.0, gt=0)
    
    @field_validator('mode')
    @classmethod
    def check_mode(cls, value):
        
        if value not in ('async', 'quorum', 'local_quorum'):
            raise ValueError('mode must be "async", "quorum" or "local_quorum"')
        
        return value
    
    @property
    def quorum_timeout_us(self):
        
        return ms(self.quorum_timeout_ms)


class RorConfig(Section):
    
    rcp_interval_ms: float = Field(50.0, gt=0)
    heartbeat_interval_ms: float = Field(100.0, ge=0)
    metrics_interval_ms: float = Field(100.0, gt=0)
    collector_timeout_ms: float = Field(500.0, gt=0)
    read_timeout_ms: float = Field(1000.0, gt=0)
    down_after: int = Field(3, ge=1)


class WorkloadConfig(Section):
    
    name: str = 'default'
    start_ms: float = Field(0.0, ge=0)
    duration_ms: float = Field(None, gt=0)
    clients: int = Field(6, ge=1)
    read_fraction: float = Field(0.5, ge=0, le=1)
    multi_shard_fraction: float = Field(0.5, ge=0, le=1)
    key_space: int = Field(1000, ge=1)
    keys_per_txn: int = Field(2, ge=1)
    value_size: int = Field(16, ge=1)
    staleness_bound_ms: float = Field(None, ge=0)
    arrival: str = 'closed'
    rate_per_client: float = Field(100.0, gt=0)
    think_time_ms: float = Field(0.0, ge=0)
    read_only_mode: bool = False
    remote_fraction: float = Field(None, ge=0, le=1)
    replica_reads: bool = True
    
    @field_validator('arrival')
    @classmethod
    def check_arrival(cls, value):
        
        if value not in ARRIVAL_MODELS:
            raise ValueError(f'arrival must be one of {", ".join(ARRIVAL_MODELS)}')
        
        return value
    
    def spec(self, default_duration_ms):
        
        duration = self.duration_ms if self.duration_ms is not None else default_duration_ms - self.start_ms
        
        return WorkloadSpec(
            name=self.name,
            duration_us=ms(duration),
            start_us=ms(self.start_ms),
            clients=self.clients,
            read_fraction=self.read_fraction,
            multi_shard_fraction=self.multi_shard_fraction,
            key_space=self.key_space,
            keys_per_txn=self.keys_per_txn,
            value_size=self.value_size,
            staleness_bound_us=ms(self.staleness_bound_ms) if self.staleness_bound_ms is not None else None,
            arrival=self.arrival,
            rate_per_client=self.rate_per_client,
            think_time_us=ms(self.think_time_ms),
            read_only_mode=self.read_only_mode,
            remote_fraction=self.remote_fraction,
            replica_reads=self.replica_reads,
        )


class FaultConfig(Section):
    
    kind: str
    target: str
    at_ms: float = Field(ge=0)
    params: dict = {}
    
    @field_validator('kind')
    @classmethod
    def check_kind(cls, value):
        
        if value not in FAULT_KINDS:
            raise ValueError(f'kind must be one of {", ".join(FAULT_KINDS)}')
        
        return value
    
    def spec(self):
        
        return FaultSpec(self.kind, self.target, ms(self.at_ms), dict(self.params))


class DdlConfig(Section):
    
    at_ms: float = Field(ge=0)
    table: str
    cn: str = None


class ChecksConfig(Section):
    
    external_serializability: bool = True
    replica_consistency: bool = True
    monotonic_freshness: bool = True
    bounded_staleness: bool = True
    clock_envelope: bool = True
    transition_liveness: bool = True
    liveness_window_ms: float = Field(200.0, gt=0)


class MutationsConfig(Section):
    """
    Deliberate protocol breakages. Each one must make at least one checker
    fail.
    """
    
    disable_commit_wait: bool = False
    disable_rcp_clamp: bool = False
    heartbeat_bypass_log: bool = False


class AnomalyConfig(Section):
    """
    Settings for the scripted DUAL-mode anomaly replay. ``runs`` replays are
    made with consecutive seeds starting at the scenario seed.
    """
    
    runs: int = Field(100, ge=1)
    randomize: bool = False
    sync_roundtrip_us: int = Field(60, ge=0)


class OutputConfig(Section):
    
    dir: str = None
    history: bool = True


class ScenarioConfig(Section):
    
    name: str = 'scenario'
    description: str = ''
    kind: str = 'cluster'
    seed: int = 0
    duration_ms: float = Field(1000.0, gt=0)
    rpc_timeout_ms: float = Field(500.0, gt=0)
    client_timeout_ms: float = Field(10_000.0, gt=0)
    
    topology: TopologyConfig = TopologyConfig()
    clock: ClockConfig = ClockConfig()
    modes: ModesConfig = ModesConfig()
    replication: ReplicationConfig = ReplicationConfig()
    ror: RorConfig = RorConfig()
    workloads: list[WorkloadConfig] = []
    faults: list[FaultConfig] = []
    ddl: list[DdlConfig] = []
    checks: ChecksConfig = ChecksConfig()
    mutations: MutationsConfig = MutationsConfig()
    anomaly: AnomalyConfig = AnomalyConfig()
    output: OutputConfig = OutputConfig()
    
    @field_validator('kind')
    @classmethod
    def check_kind(cls, value):
        
        if value not in SCENARIO_KINDS:
            raise ValueError(f'kind must be one of {", ".join(SCENARIO_KINDS)}')
        
        return value
    
    #
    # Conversions used by the cluster and its nodes
    #
    
    @property
    def duration_us(self):
        
        return ms(self.duration_ms)
    
    @property
    def initial_mode(self):
        
        return self.modes.initial
    
    @property
    def rpc_timeout_us(self):
        
        return ms(self.rpc_timeout_ms)
    
    @property
    def client_timeout_us(self):
        
        return ms(self.client_timeout_ms)
    
    @property
    def read_timeout_us(self):
        
        return ms(self.ror.read_timeout_ms)
    
    @property
    def rcp_interval_us(self):
        
        return ms(self.ror.rcp_interval_ms)
    
    @property
    def heartbeat_interval_us(self):
        
        return ms(self.ror.heartbeat_interval_ms)
    
    @property
    def metrics_interval_us(self):
        
        return ms(self.ror.metrics_interval_ms)
    
    @property
    def collector_timeout_us(self):
        
        return ms(self.ror.collector_timeout_ms)
    
    def workload_specs(self):
        
        return [w.spec(self.duration_ms) for w in self.workloads]


def apply_override(data, key, value):
    """
    Set the dotted ``key`` (e.g. ``topology.gtm_extra_delay_ms`` or
    ``workloads.0.clients``) in the raw scenario mapping ``data``.
    """
    
    parts = key.split('.')
    target = data
    
    for i, part in enumerate(parts[:-1]):
        if isinstance(target, list):
            try:
                target = target[int(part)]
            except (ValueError, IndexError):
                raise ConfigError(f'"{key}" does not name a scenario setting.')
        else:
            target = target.setdefault(part, {})
        
        if not isinstance(target, (dict, list)):
            raise ConfigError(f'"{".".join(parts[:i + 1])}" is not a section.')
    
    last = parts[-1]
    if isinstance(target, list):
        try:
            target[int(last)] = value
        except (ValueError, IndexError):
            raise ConfigError(f'"{key}" does not name a scenario setting.')
    else:
        target[last] = value


def parse_number(text):
    
    try:
        return int(text)
    except ValueError:
        pass
    
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f'"{text}" is not a number.')


def find_scenario(name):
    """
    Resolve ``name`` to a scenario file: an existing path, or a bundled or
    configured scenario name (with or without ``.toml``).
    """
    
    path = Path(name)
    if path.is_file():
        return path
    
    filename = name if name.endswith('.toml') else f'{name}.toml'
    search = [Path(d) for d in get_setting('SCENARIO_DIRS')] + [BUNDLED_SCENARIOS]
    
    for directory in search:
        candidate = directory / filename
        if candidate.is_file():
            return candidate
    
    raise ConfigError(f'Scenario "{name}" not found.')


def validate_scenario(data):
    
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        problems = '; '.join(
            f'{".".join(str(p) for p in error["loc"]) or "<root>"}: {error["msg"]}' for error in e.errors()
        )
        raise ConfigError(f'Invalid scenario: {problems}')


def read_scenario(name):
    
    path = find_scenario(name)
    
    try:
        with path.open('rb') as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'Cannot parse {path}: {e}')


def load_scenario(name, overrides=None):
    """
    Load and validate a scenario. ``overrides`` maps dotted keys to values
    applied before validation.
    """
    
    data = read_scenario(name)
    
    for key, value in (overrides or {}).items():
        apply_override(data, key, value)
    
    return validate_scenario(data)
