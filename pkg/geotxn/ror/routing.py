import logging
from dataclasses import dataclass, field

from geotxn.exceptions import GeoTxnError, ShardUnavailable
from geotxn.ror.skyline import NodeMetrics, build_skyline, estimate_staleness
from geotxn.txtime.timestamps import Mode

logger = logging.getLogger(__name__)

ALLOW = 'allow'
DENY = 'deny'


def ddl_gate(query_tables, rcp, table_ddl_ts, global_max_ddl_ts):
    """
    Decide whether a read-only query may run on replicas at ``rcp`` given the
    DDL history. All timestamps are compared by value.
    
    The query is allowed if the RCP is past the latest DDL on any table, or
    failing that, past the latest DDL on every table the query touches.
    """
    
    if global_max_ddl_ts is None or rcp > global_max_ddl_ts:
        return ALLOW
    
    for table in query_tables:
        ddl_ts = table_ddl_ts.get(table)
        if ddl_ts is not None and rcp <= ddl_ts:
            return DENY
    
    return ALLOW


@dataclass
class Route:
    """
    The node chosen to serve each shard of a read-only query.
    """
    
    nodes: dict = field(default_factory=dict)
    replicas: set = field(default_factory=set)
    
    @property
    def uses_replicas(self):
        
        return bool(self.replicas)
    
    @property
    def all_primary(self):
        
        return not self.replicas


def select_nodes(shards, candidates, staleness_bound=None):
    """
    Pick a node for each of ``shards`` from ``candidates`` (a mapping of
    shard to ``NodeMetrics``, primaries included). Within each shard's
    skyline, the healthy node with the lowest latency among those no more
    stale than ``staleness_bound`` (``None`` for unbounded) is chosen.
    
    Raise ``ShardUnavailable`` if no healthy node can serve a shard.
    """
    
    route = Route()
    
    for shard in sorted(shards):
        healthy = [m for m in candidates.get(shard, ()) if m.healthy]
        if not healthy:
            raise ShardUnavailable(shard)
        
        eligible = [
            m for m in build_skyline(healthy)
            if staleness_bound is None or m.staleness <= staleness_bound
        ]
        
        if not eligible:
            # The skyline always holds a node of minimal staleness; if even
            # that one is too stale, only a primary will do
            eligible = [m for m in healthy if m.is_primary]
            if not eligible:
                raise ShardUnavailable(shard)
        
        chosen = min(eligible, key=lambda m: (m.latency, m.staleness, m.node))
        route.nodes[shard] = chosen.node
        if not chosen.is_primary:
            route.replicas.add(chosen.node)
    
    return route


class MetricsTracker:
    """
    Keeps a CN's view of every primary and replica: round-trip latency as an
    exponentially weighted moving average (``alpha``), the last reported max
    commit timestamp and whether the node answered its last status poll. In GTM
    mode it also tracks the rate at which the GTM server issues timestamps,
    which staleness estimates are based on.
    """
    
    def __init__(self, node, cluster, interval, rpc_timeout, alpha=0.3):
        
        self.node = node
        self.cluster = cluster
        self.interval = interval
        self.rpc_timeout = rpc_timeout
        self.alpha = alpha
        
        self.samples = {}
        self.gtm_sample = None
        self.issue_rate = None
    
    def start(self):
        
        self.node.spawn(self.run())
    
    def run(self):
        
        while True:
            yield from self.poll()
            yield self.node.sleep(self.interval)
    
    def _poll(self, target, kind):
        
        sent_at = self.node.now
        reply = yield from self.node.call(target, kind, timeout=self.rpc_timeout)
        
        return self.node.now - sent_at, reply
    
    def poll(self):
        
        targets = [(p, 'status') for p in self.cluster.primary_ids]
        targets += [(r, 'replica_status') for r in sorted(self.cluster.replica_shards)]
        
        outcomes = yield from self.node.parallel(self._poll(target, kind) for target, kind in targets)
        
        for (target, _), outcome in zip(targets, outcomes):
            sample = self.samples.setdefault(target, {'latency': None, 'max_commit_ts': None, 'healthy': False})
            
            if not outcome.ok:
                sample['healthy'] = False
                continue
            
            rtt, reply = outcome.value
            if sample['latency'] is None:
                sample['latency'] = float(rtt)
            else:
                sample['latency'] = self.alpha * rtt + (1 - self.alpha) * sample['latency']
            
            sample['max_commit_ts'] = reply['max_commit_ts']
            sample['healthy'] = True
        
        if self.node.ts_client.mode is Mode.GTM:
            yield from self.poll_gtm()
    
    def poll_gtm(self):
        
        try:
            reply = yield from self.node.call(self.cluster.gtm_id, 'gtm_status', timeout=self.rpc_timeout)
        except GeoTxnError:
            return
        
        now = self.node.now
        previous = self.gtm_sample
        self.gtm_sample = (now, reply['counter'])
        
        if previous is not None and now > previous[0]:
            self.issue_rate = (reply['counter'] - previous[1]) / (now - previous[0])
    
    def staleness(self, max_commit_ts):
        
        mode = self.node.ts_client.mode
        
        if mode is Mode.GTM:
            last_issued = self.gtm_sample[1] if self.gtm_sample else max_commit_ts.value
            return estimate_staleness(mode, max_commit_ts.value, last_issued=last_issued,
                                      issue_rate=self.issue_rate)
        
        reading = self.cluster.clocks.read(self.node.id)
        
        return estimate_staleness(mode, max_commit_ts.value, clock_now=reading.t_clock)
    
    def candidates(self, shards, rcp):
        """
        Return ``{shard: [NodeMetrics]}`` for the given shards: the primary
        (staleness 0) and every replica serving ``rcp`` that has been
        sampled. Replicas are never reported fresher than 1us.
        """
        
        candidates = {}
        
        for shard in shards:
            metrics = []
            
            primary = self.cluster.primary_of(shard)
            sample = self.samples.get(primary)
            if sample and sample['latency'] is not None:
                metrics.append(NodeMetrics(primary, 0, sample['latency'], sample['healthy'], shard, True))
            
            for replica in self.cluster.replicas_of(shard):
                sample = self.samples.get(replica)
                if not sample or sample['latency'] is None or not rcp.serves(replica):
                    continue
                
                staleness = max(1, self.staleness(sample['max_commit_ts']))
                metrics.append(NodeMetrics(replica, staleness, sample['latency'], sample['healthy'], shard))
            
            candidates[shard] = metrics
        
        return candidates
