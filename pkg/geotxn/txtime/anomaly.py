"""
A scripted replay of the DUAL-mode visibility anomaly: a transaction begun in
GTM mode commits with a DUAL-range timestamp right after the GTM server has
been shown a large GClock value, and a GClock-mode transaction that starts
just afterwards on a slow-clocked CN gets a smaller snapshot. Unless GTM-mode
commits wait while the server is in DUAL mode, that second transaction cannot
see the first one's committed update.
"""
import logging
from dataclasses import dataclass, field

from geotxn.clocks import ClockService
from geotxn.nodes import GtmNode
from geotxn.replication.records import RedoLog
from geotxn.sim import LatencyMatrix, Node, Simulator
from geotxn.store import DistributionMap, ShardStore
from geotxn.txtime.authority import TimestampClient
from geotxn.txtime.timestamps import Mode
from geotxn.utils.logs import Loggable

logger = logging.getLogger(__name__)

KEY = 'k0'
TRX1 = 1

ANOMALY = "Trx2 cannot see Trx1's committed update"


@dataclass
class AnomalyReport:
    
    enable_wait: bool
    seed: int
    applicable: bool = True
    anomaly: bool = False
    ts1: int = None
    ts2: int = None
    ts3: int = None
    commit_wait_us: int = 0
    trx1_visible_at: int = None
    trx2_invoked_at: int = None
    offsets: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)
    
    @property
    def clean(self):
        
        return not self.anomaly
    
    @property
    def detail(self):
        
        if not self.applicable:
            return 'not applicable: the cluster never leaves GClock mode'
        
        if self.anomaly:
            return f'{ANOMALY} (ts2={self.ts2} < ts1={self.ts1})'
        
        return f'Trx2 sees Trx1 (ts2={self.ts2} >= ts1={self.ts1})'
    
    def as_dict(self):
        
        return {
            'enable_wait': self.enable_wait,
            'seed': self.seed,
            'applicable': self.applicable,
            'anomaly': self.anomaly,
            'detail': self.detail,
            'ts1': self.ts1,
            'ts2': self.ts2,
            'ts3': self.ts3,
            'commit_wait_us': self.commit_wait_us,
            'trx1_visible_at': self.trx1_visible_at,
            'trx2_invoked_at': self.trx2_invoked_at,
            'offsets': self.offsets,
            'steps': list(self.steps),
        }


class ScriptedNode(Node):
    
    role = 'compute'


class DualAnomalyReplay(Loggable):
    """
    Replays the interleaving step by step on a three-CN cluster whose clocks
    are pinned: ``cn-3`` runs fast and ``cn-2`` slow by just under half a
    sync roundtrip each. With ``randomize`` the offsets are drawn from the
    seed instead, within the same range.
    """
    
    def __init__(self, enable_wait, seed=0, randomize=False, initial_mode=Mode.GTM, sync_roundtrip_us=60):
        
        super().__init__()
        
        self.enable_wait = enable_wait
        self.seed = seed
        self.initial_mode = initial_mode
        
        self.sim = Simulator(LatencyMatrix.uniform(['local'], 0, intra_us=1), seed=seed, trace=False)
        
        half = sync_roundtrip_us / 2
        if randomize:
            offsets = {f'cn-{i}': round(float(self.sim.rng.uniform(-half, half))) for i in (1, 2, 3)}
        else:
            margin = min(5, half)
            offsets = {'cn-1': 0, 'cn-2': -(half - margin), 'cn-3': half - margin}
        
        self.offsets = offsets
        self.clocks = ClockService(
            self.sim, sync_interval_us=10_000_000, sync_roundtrip_us=sync_roundtrip_us, drift_bound_ppm=0,
            pinned_offsets=offsets
        )
        
        self.gtm = GtmNode(self.sim, 'gtms', 'local', mode=initial_mode, enable_dual_wait=enable_wait)
        self.server = self.gtm.server
        
        self.cns = {}
        for index, node_id in enumerate(sorted(offsets)):
            node = ScriptedNode(self.sim, node_id, 'local')
            self.clocks.add_node(node)
            node.ts_client = TimestampClient(node, self.clocks, 'gtms', index, mode=initial_mode)
            self.cns[node_id] = node
        
        self.store = ShardStore(0, DistributionMap(1), RedoLog(0, clock=lambda: self.sim.now))
        self.store.set_clock(lambda: self.sim.now)
        
        self.report = AnomalyReport(enable_wait, seed, offsets=dict(offsets))
    
    def log_time(self):
        
        return self.sim.now
    
    def step(self, node, text, tag=None):
        
        self.log(f'{node:<6} {text}', tag=tag)
    
    def switch(self, node_id, mode):
        
        cn = self.cns[node_id]
        previous = cn.ts_client.mode
        cn.ts_client.mode = mode
        
        if mode is Mode.DUAL:
            reading = self.clocks.read(node_id)
            self.server.observe(max(cn.ts_client.max_gclock_issued, reading.upper), reading.t_err)
        
        self.step(node_id, f'{previous} mode = {mode} mode')
    
    def script(self):
        
        cn1, cn2, cn3 = (self.cns[n] for n in ('cn-1', 'cn-2', 'cn-3'))
        report = self.report
        
        # Start clear of time zero so no clock reads negative
        yield cn1.sleep(1000)
        
        snapshot = yield from cn1.ts_client.invocation_ts(TRX1)
        self.store.stage_write(TRX1, KEY, b'trx1', snapshot)
        
        self.server.state.gtms_mode = Mode.DUAL
        self.server.state.max_err_observed = 0
        self.step('GTMS', 'Running in DUAL mode')
        self.step('cn-1', 'Running Trx1 in GTM mode')
        
        self.switch('cn-2', Mode.DUAL)
        self.switch('cn-3', Mode.DUAL)
        self.switch('cn-1', Mode.DUAL)
        self.switch('cn-2', Mode.GCLOCK)
        
        ts3 = yield from cn3.ts_client.dual_next()
        report.ts3 = ts3.value
        self.step('cn-3', f'Send large GClock timestamp ts3={ts3.value} to GTMS')
        self.step('GTMS', f'Raise internal timestamp to ts3={self.server.counter}')
        
        self.store.mark_committing(TRX1, validate=True)
        ts1, wait_until = yield from cn1.ts_client.commit_ts(TRX1, Mode.GTM)
        acquired_at = self.sim.now
        yield from cn1.ts_client.commit_wait(ts1, wait_until)
        self.store.finalize(TRX1, ts1)
        
        report.ts1 = ts1.value
        report.trx1_visible_at = self.sim.now
        report.commit_wait_us = max(0, wait_until - acquired_at)
        
        if report.commit_wait_us:
            self.step('cn-1', f'Trx1 gets ts1={ts1.value} > ts3, waits {report.commit_wait_us}us and commits')
        else:
            self.step('cn-1', f'Trx1 gets ts1={ts1.value} > ts3 and commits without waiting')
        
        ts2 = cn2.ts_client.gclock_now()
        yield from cn2.ts_client.wait_past(ts2.value)
        report.ts2 = ts2.value
        report.trx2_invoked_at = self.sim.now
        
        version = self.store.read_at(KEY, ts2)
        report.anomaly = version is None or version.txn_id != TRX1
        
        if report.anomaly:
            self.step('cn-2', f'Trx2 starts with ts2={ts2.value} < ts1', tag='anomaly')
            self.step('cn-2', ANOMALY, tag='anomaly')
        else:
            self.step('cn-2', f'Trx2 starts with ts2={ts2.value} and sees Trx1')
    
    def run(self):
        
        self.start_log(f'dual-anomaly@{self.seed}')
        
        if self.initial_mode is Mode.GCLOCK:
            self.report.applicable = False
            self.step('GTMS', 'Running in GClock mode; no GTM transaction can be in flight')
        else:
            self.sim.env.process(self.script())
            self.sim.run_until(1_000_000)
        
        self.sim.finish()
        _, self.report.steps = self.end_log()
        
        logger.debug('DUAL anomaly replay, seed %d: %s', self.seed, self.report.detail)
        
        return self.report


def replay_dual_anomaly(enable_wait, seed=0, randomize=False, initial_mode=Mode.GTM, sync_roundtrip_us=60):
    """
    Replay the DUAL-mode anomaly interleaving once and return an
    ``AnomalyReport``.
    """
    
    replay = DualAnomalyReplay(enable_wait, seed, randomize, initial_mode, sync_roundtrip_us)
    
    return replay.run()
