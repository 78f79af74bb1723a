"""
The Replica Consistency Point: the largest timestamp at which every replica
in use has applied every commit. One CN, the collector, polls the replicas,
computes the RCP and publishes it to all CNs; the published value never moves
backwards, including across a failover to a new collector.
"""
import logging
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReplicaConsistencyPoint:
    
    ts: object
    computed_at: int
    epoch: int
    contributing: dict = field(default_factory=dict)
    stale: tuple = ()
    
    def serves(self, replica):
        """
        Return ``True`` if ``replica`` contributed to this RCP and so may
        serve reads at it.
        """
        
        return replica in self.contributing
    
    def as_dict(self):
        
        return {
            'ts': self.ts.value,
            'computed_at': self.computed_at,
            'epoch': self.epoch,
            'contributing': {replica: ts.value for replica, ts in sorted(self.contributing.items())},
            'stale': list(self.stale),
        }


def compute_rcp(maxima, floor=None, clamp=True):
    """
    Return the minimum of ``maxima`` (replica -> max commit timestamp), never
    below ``floor`` when clamping. Return ``floor`` if there are no maxima.
    """
    
    if not maxima:
        return floor
    
    raw = min(maxima.values())
    if clamp and floor is not None and raw < floor:
        return floor
    
    return raw


class RcpCollector:
    """
    Drives RCP collection on the designated CN.
    
    A replica that misses ``down_after`` consecutive polls is treated as down
    and stops contributing; until then its last known value is reused and
    flagged stale. While clamping, a replica only contributes once its max
    commit timestamp has reached the published floor, so a recovered replica
    rejoins only after catching up.
    """
    
    def __init__(self, node, replica_shards, interval, rpc_timeout, clamp=True, down_after=3, history=None):
        
        self.node = node
        self.replica_shards = dict(replica_shards)
        self.interval = interval
        self.rpc_timeout = rpc_timeout
        self.clamp = clamp
        self.down_after = down_after
        self.history = history
        
        self.active = False
        self.epoch = 0
        self.floor = None
        self.published = None
        
        self.known = {}
        self.misses = {}
    
    def start(self, epoch=0, floor=None):
        
        self.active = True
        self.epoch = epoch
        self.floor = floor
        self.known = {}
        self.misses = {}
        
        logger.info('t=%d %s collects the RCP (epoch %d, floor %s)', self.node.now, self.node.id, epoch,
                    floor.value if floor else None)
        
        self.node.spawn(self.run())
    
    def stop(self):
        
        self.active = False
    
    def run(self):
        
        while self.active:
            yield from self.collect_rcp()
            yield self.node.sleep(self.interval)
    
    def poll(self):
        
        replicas = sorted(self.replica_shards)
        outcomes = yield from self.node.parallel(
            self.node.call(replica, 'replica_status', timeout=self.rpc_timeout) for replica in replicas
        )
        
        responded = set()
        for replica, outcome in zip(replicas, outcomes):
            if outcome.ok:
                self.known[replica] = outcome.value['max_commit_ts']
                self.misses[replica] = 0
                responded.add(replica)
            else:
                self.misses[replica] = self.misses.get(replica, 0) + 1
        
        return responded
    
    def contributors(self, responded):
        
        contributing = {}
        stale = []
        
        for replica in sorted(self.replica_shards):
            ts = self.known.get(replica)
            if ts is None:
                continue
            
            if not self.clamp:
                if replica in responded:
                    contributing[replica] = ts
                continue
            
            if self.misses.get(replica, 0) >= self.down_after:
                continue
            
            if self.floor is not None and ts < self.floor:
                continue
            
            contributing[replica] = ts
            if replica not in responded:
                stale.append(replica)
        
        return contributing, tuple(stale)
    
    def collect_rcp(self):
        """
        Poll every replica, compute the RCP and publish it. Return the
        published ``ReplicaConsistencyPoint``, or ``None`` if collection
        stalled without anything to publish.
        """
        
        responded = yield from self.poll()
        if not self.active:
            return None
        
        contributing, stale = self.contributors(responded)
        ts = compute_rcp(contributing, self.floor, self.clamp)
        
        if ts is None:
            logger.debug('t=%d RCP collection stalled: no replica maxima known', self.node.now)
            return self.published
        
        rcp = ReplicaConsistencyPoint(ts, self.node.now, self.epoch, contributing, stale)
        if self.clamp:
            self.floor = ts
        
        self.publish(rcp)
        
        return rcp
    
    def publish(self, rcp):
        
        self.published = rcp
        
        if self.history is not None:
            self.history.record(
                'rcp_publish', self.node.now, ts=rcp.ts.value, epoch=rcp.epoch, collector=self.node.id,
                contributing=sorted(rcp.contributing)
            )
        
        for cn in self.node.peer_cns:
            if cn == self.node.id:
                self.node.accept_rcp(rcp)
            else:
                self.node.send(cn, 'rcp_publish', rcp)


class RcpCache:
    """
    A CN's view of the latest published RCP. Publications from an older
    epoch are discarded; so are regressions, unless clamping is disabled.
    """
    
    def __init__(self, clamp=True):
        
        self.clamp = clamp
        self.current = None
    
    def accept(self, rcp):
        
        current = self.current
        
        if current is not None:
            if rcp.epoch < current.epoch:
                return False
            
            if self.clamp and rcp.ts < current.ts:
                return False
        
        self.current = rcp
        
        return True
    
    def clear(self):
        
        self.current = None
