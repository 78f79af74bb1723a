"""
Builds a simulated cluster from a ``ScenarioConfig`` and runs it.

Node ids follow a fixed scheme: ``gtm`` for the GTM server, ``cn-<n>`` for
compute nodes (numbered from 1), ``dn-<shard>`` for the primary of a shard,
``rep-<shard>-<k>`` for its replicas and ``client-<n>`` for workload
clients. Regions are assigned round-robin in the configured order, a
shard's replicas going to the regions after its primary's.
"""
import logging
from dataclasses import dataclass, field

from geotxn.clocks import ClockService
from geotxn.config import ms
from geotxn.coordinator import coordinator_index
from geotxn.exceptions import ConfigError, GeoTxnError, UnknownTarget
from geotxn.nodes import ClientNode, ComputeNode, DataNode, GtmNode, ReplicaNode
from geotxn.replication.shipping import true_staleness
from geotxn.sim import Simulator
from geotxn.store import DistributionMap
from geotxn.txtime.transition import TransitionController
from geotxn.utils.mon import M, Mon, mon
from geotxn.verify import checkers
from geotxn.verify.history import History
from geotxn.verify.metrics import summarize
from geotxn.verify.workload import OperationStream

logger = logging.getLogger(__name__)

GTM_ID = 'gtm'


@dataclass
class RunResult:
    """
    Everything a finished run produced: the history, the primaries' logs,
    metrics, checker verdicts and the bookkeeping needed to reproduce it.
    """
    
    scenario: str
    seed: int
    duration_us: int
    history: History
    logs: dict
    transitions: list
    metrics: dict
    verdicts: dict
    trace_digest: str
    engine: dict = field(default_factory=dict)
    clock: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    phases: M = None
    
    @property
    def passed(self):
        
        return all(v['passed'] for v in self.verdicts.values() if v['enabled'])
    
    @property
    def violations(self):
        
        return [v for verdict in self.verdicts.values() for v in verdict['violations']]


class Cluster:
    
    def __init__(self, config, trace=True):
        
        self.config = config
        self.monitors = Mon()
        self.history = History()
        self.phases = M('commit')
        
        self.build(trace)
    
    @property
    def clients(self):
        
        return [node for node in self.sim.nodes.values() if isinstance(node, ClientNode)]
    
    @mon('build')
    def build(self, trace):
        
        config = self.config
        topology = config.topology
        regions = topology.regions
        
        self.sim = Simulator(topology.latency_matrix(), seed=config.seed, trace=trace)
        
        key_space = max((w.key_space for w in config.workloads), default=1000)
        self.distribution = DistributionMap(topology.shards, topology.placement, key_space, topology.tables)
        self.shards = list(range(topology.shards))
        
        clock = config.clock
        self.clocks = ClockService(
            self.sim, sync_interval_us=ms(clock.sync_interval_ms), sync_roundtrip_us=clock.sync_roundtrip_us,
            drift_bound_ppm=clock.drift_ppm,
            pinned_offsets={node: int(offset) for node, offset in clock.pinned_offsets_us.items()}
        )
        self.clocks.health_listeners.append(self._clock_health_changed)
        
        self.cn_ids = [f'cn-{i + 1}' for i in range(topology.compute_nodes)]
        self.gtm_id = GTM_ID
        
        self._build_storage(regions)
        
        modes = config.modes
        self.gtm = GtmNode(
            self.sim, GTM_ID, topology.gtm_region or regions[0], mode=modes.initial,
            enable_dual_wait=modes.enable_dual_wait, auto_fallback=modes.auto_fallback,
            auto_return=modes.auto_return, extra_delay_us=ms(topology.gtm_extra_delay_ms) // 2
        )
        self.gtm.controller = TransitionController(
            self.gtm, self.cn_ids, self.history, rpc_timeout=config.rpc_timeout_us
        )
        
        self.cns = []
        for i, cn_id in enumerate(self.cn_ids):
            cn = ComputeNode(self.sim, cn_id, regions[i % len(regions)], i + 1, self)
            self.clocks.add_node(cn)
            self.cns.append(cn)
        
        self._build_clients()
        
        for node in self.primaries.values():
            node.start()
        
        for i, cn in enumerate(self.cns):
            cn.start(collector=i == 0)
        
        for client in self.clients:
            client.start()
        
        self._schedule_events()
        
        logger.info(
            'Built "%s": %d regions, %d CNs, %d shards x %d replicas, %d clients', config.name, len(regions),
            len(self.cns), len(self.shards), topology.replicas_per_shard, len(self.clients)
        )
    
    def _build_storage(self, regions):
        
        config = self.config
        topology = config.topology
        replication = config.replication
        
        self.primaries = {}
        self.replicas = {}
        self.replica_shards = {}
        
        for shard in self.shards:
            home = shard % len(regions)
            
            replica_regions = {}
            for k in range(1, topology.replicas_per_shard + 1):
                replica_regions[f'rep-{shard}-{k}'] = regions[(home + k) % len(regions)]
            
            lags = {}
            for replica_id in replica_regions:
                lag = replication.lag_ms
                if replication.random_lag_ms:
                    lag += float(self.sim.rng.uniform(0, replication.random_lag_ms))
                lags[replica_id] = ms(replication.lags_ms.get(replica_id, lag))
            
            primary = DataNode(
                self.sim, f'dn-{shard}', regions[home], shard, self.distribution, replicas=list(replica_regions),
                replica_regions=replica_regions, replication_mode=replication.mode, lags=lags,
                read_timeout=config.read_timeout_us, rpc_timeout=config.rpc_timeout_us,
                quorum_timeout=replication.quorum_timeout_us, in_doubt_after=ms(replication.in_doubt_after_ms),
                coordinator_of=self.coordinator_of, batch_size=replication.batch_size
            )
            self.primaries[shard] = primary
            
            for replica_id, region in replica_regions.items():
                self.replicas[replica_id] = ReplicaNode(
                    self.sim, replica_id, region, shard, primary.id, read_timeout=config.read_timeout_us
                )
                self.replica_shards[replica_id] = shard
    
    def _build_clients(self):
        
        config = self.config
        number = 0
        
        for stream_id, spec in enumerate(config.workload_specs()):
            for i in range(spec.clients):
                number += 1
                preferred = i % len(self.cns)
                region = self.cns[preferred].region
                cn_ids = self.cn_ids[preferred:] + self.cn_ids[:preferred]
                local = [shard for shard, node in self.primaries.items() if node.region == region]
                
                stream = OperationStream(spec, config.seed, self.distribution, number, local, stream_id)
                ClientNode(
                    self.sim, f'client-{number}', region, number, cn_ids, stream, spec,
                    timeout=config.client_timeout_us, stop_at=spec.start_us + spec.duration_us
                )
    
    def _schedule_events(self):
        
        config = self.config
        
        for transition in config.modes.transitions:
            self.sim.schedule(
                lambda direction=transition.direction: self._start_transition(direction), ms(transition.at_ms)
            )
        
        for fault in config.faults:
            try:
                self.sim.inject_fault(fault.spec())
            except UnknownTarget as e:
                raise ConfigError(f'Fault {fault.kind} at {fault.at_ms}ms: {e}')
        
        for ddl in config.ddl:
            cn_id = ddl.cn or self.cn_ids[0]
            if cn_id not in self.cn_ids:
                raise ConfigError(f'DDL at {ddl.at_ms}ms names unknown compute node "{cn_id}".')
            
            self.sim.schedule(
                lambda cn_id=cn_id, table=ddl.table: self._run_ddl(cn_id, table), ms(ddl.at_ms), node=cn_id
            )
    
    def _start_transition(self, direction):
        
        try:
            self.gtm.controller.start_transition(direction)
        except (GeoTxnError, ValueError) as e:
            logger.warning('t=%d scheduled %s transition skipped: %s', self.sim.now, direction, e)
    
    def _run_ddl(self, cn_id, table):
        
        cn = self.sim.nodes[cn_id]
        cn.spawn(cn.coordinator.execute_ddl(table))
    
    def _clock_health_changed(self, node_id, healthy):
        
        node = self.sim.nodes.get(node_id)
        if isinstance(node, ComputeNode):
            node.on_clock_health(healthy)
    
    #
    # Lookups used by the nodes
    #
    
    @property
    def primary_ids(self):
        
        return [self.primaries[shard].id for shard in self.shards]
    
    def primary_of(self, shard):
        
        return self.primaries[shard].id
    
    def replicas_of(self, shard):
        
        return self.primaries[shard].replicas
    
    def coordinator_of(self, txn_id):
        
        return self.cn_ids[coordinator_index(txn_id) - 1]
    
    def true_staleness(self, shard, applied_lsn, at=None):
        
        return true_staleness(self.primaries[shard].log, applied_lsn, self.sim.now if at is None else at)
    
    @property
    def logs(self):
        
        return {shard: node.log for shard, node in self.primaries.items()}
    
    #
    # Running
    #
    
    @mon('simulate')
    def simulate(self):
        
        self.sim.run_until(self.config.duration_us)
        self.sim.finish()
    
    @mon('check')
    def check(self):
        
        return run_checks(self.config, self.history, self.logs, self.gtm.controller.transitions, self.clocks)
    
    def run(self):
        """
        Run the scenario to its configured duration and return a
        ``RunResult``.
        """
        
        self.simulate()
        verdicts = self.check()
        
        result = RunResult(
            scenario=self.config.name,
            seed=self.config.seed,
            duration_us=self.config.duration_us,
            history=self.history,
            logs=self.logs,
            transitions=list(self.gtm.controller.transitions),
            metrics=summarize(self.history, self.config.duration_us, self.phases),
            verdicts=verdicts,
            trace_digest=self.sim.trace_digest(),
            engine={
                'events': self.sim.stats.events,
                'messages': self.sim.stats.messages,
                'delivered': self.sim.stats.delivered,
                'dropped': self.sim.stats.dropped,
            },
            clock={
                'envelope_checks': self.clocks.envelope_checks,
                'envelope_violations': self.clocks.envelope_violations,
            },
            timings=self.monitors.as_dict(),
            phases=self.phases,
        )
        
        logger.info(
            'Run "%s" (seed %d): %d committed, %d aborted, %s', result.scenario, result.seed,
            result.metrics['committed'], result.metrics['aborted'], 'PASS' if result.passed else 'FAIL'
        )
        
        return result


def _verdict(enabled, violations):
    
    return {
        'enabled': enabled,
        'passed': not violations,
        'violations': [v.as_dict() for v in violations],
    }


def run_checks(config, history, logs, transitions, clocks=None):
    """
    Run every checker enabled in the scenario and return
    ``{check: {'enabled', 'passed', 'violations'}}``. Disabled checkers are
    reported as passing with no violations.
    """
    
    toggles = config.checks
    found = {}
    
    if toggles.external_serializability:
        found[checkers.EXTERNAL_SERIALIZABILITY] = checkers.check_external_serializability(history)
    
    if toggles.replica_consistency:
        found[checkers.REPLICA_CONSISTENCY] = checkers.check_replica_consistency(history, logs)
    
    if toggles.monotonic_freshness:
        found[checkers.MONOTONIC_FRESHNESS] = checkers.check_monotonic_freshness(history)
    
    if toggles.bounded_staleness:
        found[checkers.BOUNDED_STALENESS] = checkers.check_bounded_staleness(history, config.metrics_interval_us)
    
    if toggles.clock_envelope and clocks is not None:
        found[checkers.CLOCK_ENVELOPE] = checkers.check_clock_envelope(
            clocks.envelope_checks, clocks.envelope_violations
        )
    
    if toggles.transition_liveness:
        found[checkers.TRANSITION_LIVENESS] = checkers.check_transition_liveness(
            history, transitions, ms(toggles.liveness_window_ms)
        )
    
    return {check: _verdict(check in found, found.get(check, [])) for check in checkers.CHECKS}
