"""
Node roles: primary data nodes, replicas, the GTM server, compute nodes
(CNs) and workload clients.
"""
import logging

from geotxn.coordinator import Coordinator, Session
from geotxn.exceptions import (
    ClockUnhealthy, GeoTxnError, ReadTimeout, UnknownTransaction
)
from geotxn.replication.records import RedoLog
from geotxn.replication.replica import ReplicaState, read_unblocked
from geotxn.replication.shipping import Shipper
from geotxn.ror.rcp import RcpCache, RcpCollector
from geotxn.ror.routing import MetricsTracker
from geotxn.sim import Node
from geotxn.store import ShardStore
from geotxn.txtime.authority import GtmServer, TimestampClient
from geotxn.txtime.timestamps import Mode

logger = logging.getLogger(__name__)

REPLICATION_MODES = ('async', 'quorum', 'local_quorum')


def _version_reply(key, version):
    
    if version is None:
        return {'key': key, 'value': None, 'writer': None, 'version_ts': None}
    
    return {
        'key': key,
        'value': version.value,
        'writer': version.txn_id,
        'version_ts': version.commit_ts.value if version.commit_ts else None,
    }


class DataNode(Node):
    """
    The primary of one shard. Its redo log is durable; everything else is
    rebuilt from the log when the node recovers.
    """
    
    role = 'data'
    
    def __init__(self, sim, node_id, region, shard, distribution, replicas=(), replica_regions=None,
                 replication_mode='async', lags=None, read_timeout=1_000_000, rpc_timeout=500_000,
                 quorum_timeout=1_000_000, in_doubt_after=2_000_000, coordinator_of=None, batch_size=64, **kwargs):
        
        super().__init__(sim, node_id, region, **kwargs)
        
        if replication_mode not in REPLICATION_MODES:
            raise ValueError(f'Unknown replication mode "{replication_mode}".')
        
        self.shard = shard
        self.distribution = distribution
        self.replicas = list(replicas)
        self.replica_regions = replica_regions or {}
        self.replication_mode = replication_mode
        self.read_timeout = read_timeout
        self.rpc_timeout = rpc_timeout
        self.quorum_timeout = quorum_timeout
        self.in_doubt_after = in_doubt_after
        self.coordinator_of = coordinator_of
        
        self.log = RedoLog(shard, clock=lambda: self.sim.now)
        self.store = ShardStore(shard, distribution, self.log)
        self.store.set_clock(lambda: self.sim.now)
        
        lags = lags or {}
        self.shippers = {
            replica: Shipper(
                self, self.log, replica, lag_us=lags.get(replica, 0), batch_size=batch_size, rpc_timeout=rpc_timeout
            )
            for replica in self.replicas
        }
        self.log.subscribe(self._record_appended)
        
        self._ack_event = None
        
        self.handles('read', self.handle_read)
        self.handles('write', self.handle_write)
        self.handles('ddl_begin', self.handle_ddl_begin)
        self.handles('pending_commit', self.handle_pending_commit)
        self.handles('prepare', self.handle_prepare)
        self.handles('finalize', self.handle_finalize)
        self.handles('heartbeat', self.handle_heartbeat)
        self.handles('last_commit', lambda msg: self.store.last_committed_ts)
        self.handles('status', self.handle_status)
        self.handles('redo_ack', self.handle_redo_ack)
        self.handles('redo_resume', self.handle_redo_resume)
    
    def start(self):
        
        for shipper in self.shippers.values():
            shipper.start()
        
        self.spawn(self.in_doubt_monitor())
    
    def on_recover(self):
        
        self.store = ShardStore.rebuild(self.shard, self.distribution, self.log, now=lambda: self.sim.now)
        in_doubt = sorted(self.store.in_doubt())
        
        logger.info('t=%d %s rebuilt shard %d from %d records, %d in doubt', self.now, self.id, self.shard,
                    len(self.log), len(in_doubt))
        
        self.start()
        if in_doubt:
            self.spawn(self.resolve_in_doubt(in_doubt))
    
    def _record_appended(self, record):
        
        for shipper in self.shippers.values():
            shipper.notify()
    
    #
    # Transaction handlers
    #
    
    def handle_read(self, msg):
        
        payload = msg.payload
        snapshot = payload['snapshot']
        txn_id = payload.get('txn_id')
        
        results = []
        for key in payload['keys']:
            version = yield from read_unblocked(
                self, self.store, key, snapshot, self.read_timeout, ReadTimeout(self.id, key), txn_id
            )
            results.append(_version_reply(key, version))
        
        return {'results': results}
    
    def handle_write(self, msg):
        
        payload = msg.payload
        for key, value in payload['writes'].items():
            self.store.stage_write(payload['txn_id'], key, value, payload['snapshot'])
        
        return {'ok': True}
    
    def handle_ddl_begin(self, msg):
        
        self.store.begin_ddl(msg.payload['txn_id'], msg.payload['snapshot'])
        
        return {'ok': True}
    
    def handle_pending_commit(self, msg):
        
        locked = self.store.mark_committing(msg.payload['txn_id'], validate=msg.payload['validate'])
        
        return {'locked': locked}
    
    def handle_prepare(self, msg):
        
        return {'vote': self.store.prepare(msg.payload['txn_id'])}
    
    def handle_finalize(self, msg):
        
        payload = msg.payload
        record = self.store.finalize(payload['txn_id'], payload['commit_ts'], payload.get('ddl'))
        
        if payload['commit_ts'] is not None and self.replication_mode != 'async':
            yield from self.wait_for_replicas(record.lsn)
        
        return {'lsn': record.lsn}
    
    def handle_heartbeat(self, msg):
        
        record = self.store.append_heartbeat(msg.payload['ts'])
        
        return {'lsn': record.lsn}
    
    def handle_status(self, msg):
        
        return {'max_commit_ts': self.store.max_commit_ts, 'applied_lsn': self.log.last_lsn}
    
    #
    # Replication
    #
    
    def handle_redo_ack(self, msg):
        
        shipper = self.shippers.get(msg.payload['replica'])
        if shipper is not None:
            shipper.ack(msg.payload['applied_lsn'])
        
        if self._ack_event is not None and not self._ack_event.triggered:
            self._ack_event.succeed()
    
    def handle_redo_resume(self, msg):
        
        shipper = self.shippers.get(msg.payload['replica'])
        if shipper is not None and shipper.next_lsn is not None:
            shipper.resume(msg.payload['from_lsn'])
    
    def quorum_members(self):
        """
        Return ``(replicas, needed)``: the replicas whose acknowledgements
        count towards the commit quorum and how many of them are needed.
        """
        
        if self.replication_mode == 'local_quorum':
            local = [r for r in self.replicas if self.replica_regions.get(r) == self.region]
            return local, min(1, len(local))
        
        return self.replicas, len(self.replicas) // 2 + 1 if self.replicas else 0
    
    def wait_for_replicas(self, lsn):
        
        members, needed = self.quorum_members()
        deadline = self.now + self.quorum_timeout
        
        while sum(1 for r in members if self.shippers[r].acked_lsn >= lsn) < needed:
            remaining = deadline - self.now
            if remaining <= 0:
                logger.warning('t=%d %s gave up waiting for a replica quorum at lsn %d', self.now, self.id, lsn)
                return
            
            if self._ack_event is None or self._ack_event.triggered:
                self._ack_event = self.env.event()
            
            yield self._ack_event | self.sleep(remaining)
    
    #
    # In-doubt resolution
    #
    
    def in_doubt_monitor(self):
        
        interval = max(1, self.in_doubt_after // 2)
        
        while True:
            yield self.sleep(interval)
            
            stale = sorted(self.store.stale_locks(self.now - self.in_doubt_after))
            if stale:
                yield from self.resolve_in_doubt(stale)
    
    def resolve_in_doubt(self, txn_ids):
        """
        Ask each transaction's coordinator for its logged outcome and apply
        it. Unreachable coordinators are asked again on the next round.
        """
        
        for txn_id in txn_ids:
            try:
                reply = yield from self.call(
                    self.coordinator_of(txn_id), 'txn_outcome', {'txn_id': txn_id}, timeout=self.rpc_timeout
                )
            except GeoTxnError:
                continue
            
            if txn_id not in self.store.txn_locks:
                continue  # resolved meanwhile
            
            logger.info('t=%d %s resolves in-doubt txn %d: %s', self.now, self.id, txn_id, reply['outcome'])
            
            try:
                self.store.finalize(txn_id, reply.get('commit_ts'), reply.get('ddl'))
            except UnknownTransaction:
                pass


class ReplicaNode(Node):
    """
    An asynchronous replica of one shard. Its replayed state is durable.
    """
    
    role = 'replica'
    
    def __init__(self, sim, node_id, region, shard, primary, read_timeout=1_000_000, **kwargs):
        
        super().__init__(sim, node_id, region, **kwargs)
        
        self.shard = shard
        self.primary = primary
        self.read_timeout = read_timeout
        
        self.state = ReplicaState(shard, node_id)
        self.state.store.set_clock(lambda: self.sim.now)
        
        self._resume_requested = None
        
        self.handles('redo', self.handle_redo)
        self.handles('redo_position', lambda msg: {'applied_lsn': self.state.applied_lsn})
        self.handles('replica_status', self.handle_status)
        self.handles('read', self.handle_read)
        self.handles('heartbeat_direct', self.handle_heartbeat_direct)
    
    def on_recover(self):
        
        self.request_resume()
    
    def request_resume(self):
        
        from_lsn = self.state.applied_lsn + 1
        if self._resume_requested == from_lsn:
            return
        
        self._resume_requested = from_lsn
        self.send(self.primary, 'redo_resume', {'replica': self.id, 'from_lsn': from_lsn})
    
    def handle_redo(self, msg):
        
        records = [r for r in msg.payload['records'] if r.lsn > self.state.applied_lsn]
        if not records:
            return
        
        if records[0].lsn != self.state.applied_lsn + 1:
            self.request_resume()
            return
        
        for record in records:
            self.state.replay(record)
        
        self._resume_requested = None
        self.send(self.primary, 'redo_ack', {'replica': self.id, 'applied_lsn': self.state.applied_lsn})
    
    def handle_status(self, msg):
        
        return {'max_commit_ts': self.state.max_commit_ts, 'applied_lsn': self.state.applied_lsn}
    
    def handle_read(self, msg):
        
        snapshot = msg.payload['snapshot']
        
        results = []
        for key in msg.payload['keys']:
            version = yield from self.state.read(self, key, snapshot, self.read_timeout)
            results.append(_version_reply(key, version))
        
        return {'results': results, 'applied_lsn': self.state.applied_lsn, 'served_at': self.now}
    
    def handle_heartbeat_direct(self, msg):
        
        self.state.bypass_heartbeat(msg.payload['ts'])


class GtmNode(Node):
    """
    Hosts the GTM server and the mode transition controller.
    """
    
    role = 'gtm'
    
    def __init__(self, sim, node_id, region, mode=Mode.GTM, enable_dual_wait=True, auto_fallback=True,
                 auto_return=False, **kwargs):
        
        super().__init__(sim, node_id, region, **kwargs)
        
        self.server = GtmServer(mode, enable_dual_wait)
        self.controller = None
        
        self.auto_fallback = auto_fallback
        self.auto_return = auto_return
        self.unhealthy = set()
        
        self.handles('gtm_next', self.handle_gtm_next)
        self.handles('dual_next', self.handle_dual_next)
        self.handles('gtm_status', self.handle_status)
        self.handles('mode_query', lambda msg: {'mode': self.server.mode.value})
        self.handles('clock_alarm', self.handle_clock_alarm)
        self.handles('clock_healed', self.handle_clock_healed)
    
    def handle_gtm_next(self, msg):
        
        value, wait = self.server.gtm_next(msg.payload.get('txn_id'))
        
        return {'value': value, 'wait': wait}
    
    def handle_dual_next(self, msg):
        
        return {'value': self.server.dual_next(msg.payload['value'], msg.payload['err'])}
    
    def handle_status(self, msg):
        
        return {'counter': self.server.counter, 'issued': self.server.issued, 'mode': self.server.mode.value}
    
    def handle_clock_alarm(self, msg):
        
        self.unhealthy.add(msg.payload['cn'])
        
        if self.auto_fallback and self.controller.request_fallback():
            logger.warning('t=%d clock alarm from %s: falling back to GTM mode', self.now, msg.payload['cn'])
    
    def handle_clock_healed(self, msg):
        
        self.unhealthy.discard(msg.payload['cn'])
        
        if self.auto_return and not self.unhealthy and self.controller.request_return():
            logger.info('t=%d all clocks healthy again: returning to GClock mode', self.now)


class ComputeNode(Node):
    """
    A compute node: coordinates transactions for its clients, caches the
    published RCP, tracks replica metrics and, while it is the designated
    collector, collects the RCP and drives heartbeats.
    """
    
    role = 'compute'
    
    def __init__(self, sim, node_id, region, index, cluster, **kwargs):
        
        super().__init__(sim, node_id, region, **kwargs)
        
        config = cluster.config
        self.index = index
        self.cluster = cluster
        self.peer_cns = cluster.cn_ids
        
        rpc_timeout = config.rpc_timeout_us
        
        self.ts_client = TimestampClient(
            self, cluster.clocks, cluster.gtm_id, index, mode=config.initial_mode, rpc_timeout=rpc_timeout,
            disable_commit_wait=config.mutations.disable_commit_wait
        )
        
        clamp = not config.mutations.disable_rcp_clamp
        self.rcp_cache = RcpCache(clamp=clamp)
        self.collector = RcpCollector(
            self, cluster.replica_shards, config.rcp_interval_us, rpc_timeout, clamp=clamp,
            down_after=config.ror.down_after, history=cluster.history
        )
        self.metrics = MetricsTracker(self, cluster, config.metrics_interval_us, rpc_timeout)
        self.coordinator = Coordinator(self, cluster)
        
        self.outcomes = {}
        self.ddl_catalog = {}
        self.last_rcp_seen_at = None
        self.heartbeats_enabled = config.heartbeat_interval_us > 0
        
        self.handles('execute', self.handle_execute)
        self.handles('switch_mode', self.handle_switch_mode)
        self.handles('rcp_publish', lambda msg: self.accept_rcp(msg.payload))
        self.handles('rcp_query', self.handle_rcp_query)
        self.handles('txn_outcome', self.handle_txn_outcome)
        self.handles('ddl_committed', self.handle_ddl_committed)
        self.handles('ping', lambda msg: {'ok': True})
    
    @property
    def is_collector(self):
        
        return self.collector.active
    
    def start(self, collector=False):
        
        self.metrics.start()
        self.spawn(self.collector_watchdog())
        
        if collector:
            self.become_collector(epoch=0, floor=None)
    
    def on_crash(self):
        
        super().on_crash()
        self.collector.stop()
    
    def on_recover(self):
        
        self.rcp_cache.clear()
        self.last_rcp_seen_at = None
        self.ts_client.mode = None
        
        self.cluster.clocks.restart(self.id)
        self.spawn(self.rejoin())
    
    def rejoin(self):
        """
        Adopt the GTM server's current mode, then resume normal duties.
        """
        
        while self.ts_client.mode is None:
            try:
                reply = yield from self.call(self.cluster.gtm_id, 'mode_query', timeout=self.ts_client.rpc_timeout)
            except GeoTxnError:
                yield self.sleep(self.ts_client.rpc_timeout)
                continue
            
            self.ts_client.mode = Mode(reply['mode'])
        
        logger.info('t=%d %s rejoined in %s mode', self.now, self.id, self.ts_client.mode)
        self.start()
    
    #
    # Clients
    #
    
    def handle_execute(self, msg):
        
        if self.ts_client.mode is None:
            raise ClockUnhealthy(self.id)
        
        payload = msg.payload
        session = Session(**payload['session'])
        
        result = yield from self.coordinator.run_operation(
            payload['op'], session, payload['replica_reads'], payload['value_size']
        )
        
        return result
    
    #
    # Modes and clocks
    #
    
    def handle_switch_mode(self, msg):
        
        mode = Mode(msg.payload['mode'])
        self.ts_client.mode = mode
        
        max_gclock = self.ts_client.max_gclock_issued
        err = 0
        if self.cluster.clocks.is_healthy(self.id):
            reading = self.cluster.clocks.read(self.id)
            max_gclock = max(max_gclock, reading.upper)
            err = reading.t_err
        
        logger.debug('t=%d %s switched to %s', self.now, self.id, mode)
        
        return {'ack': True, 'max_gclock': max_gclock, 'err': err}
    
    def on_clock_health(self, healthy):
        
        if not self.alive:
            return
        
        kind = 'clock_healed' if healthy else 'clock_alarm'
        self.send(self.cluster.gtm_id, kind, {'cn': self.id})
    
    #
    # RCP
    #
    
    def accept_rcp(self, rcp):
        
        if self.rcp_cache.accept(rcp):
            self.last_rcp_seen_at = self.now
            if self.collector.active and rcp.epoch > self.collector.epoch:
                logger.info('t=%d %s steps down as collector (epoch %d)', self.now, self.id, rcp.epoch)
                self.collector.stop()
    
    def handle_rcp_query(self, msg):
        
        current = self.rcp_cache.current
        if current is None:
            return {'epoch': None, 'ts': None}
        
        return {'epoch': current.epoch, 'ts': current.ts}
    
    def become_collector(self, epoch, floor):
        
        self.collector.start(epoch, floor)
        
        if self.heartbeats_enabled:
            self.spawn(self.heartbeat_loop())
    
    def failover_collector(self):
        """
        Take over RCP collection: seed the floor from the largest RCP any
        live CN has seen and continue with the next epoch.
        """
        
        peers = [cn for cn in self.peer_cns if cn != self.id]
        outcomes = yield from self.parallel(
            self.call(cn, 'rcp_query', timeout=self.ts_client.rpc_timeout) for cn in peers
        )
        
        seen = [o.value for o in outcomes if o.ok and o.value['ts'] is not None]
        own = self.rcp_cache.current
        if own is not None:
            seen.append({'epoch': own.epoch, 'ts': own.ts})
        
        epoch = max((s['epoch'] for s in seen), default=-1) + 1
        floor = max((s['ts'] for s in seen), default=None)
        
        logger.warning('t=%d %s takes over RCP collection', self.now, self.id)
        self.become_collector(epoch, floor)
    
    def collector_watchdog(self):
        """
        Take over collection when no RCP has been published for a while and
        every CN ahead of this one in the configured order is unreachable.
        """
        
        timeout = self.cluster.config.collector_timeout_us
        
        while True:
            yield self.sleep(timeout)
            
            if self.collector.active:
                continue
            
            if self.last_rcp_seen_at is not None and self.now - self.last_rcp_seen_at < timeout:
                continue
            
            ahead = self.peer_cns[:self.peer_cns.index(self.id)]
            outcomes = yield from self.parallel(
                self.call(cn, 'ping', timeout=self.ts_client.rpc_timeout) for cn in ahead
            )
            
            if any(o.ok for o in outcomes):
                continue
            
            if not self.collector.active:
                yield from self.failover_collector()
    
    def heartbeat_loop(self):
        
        interval = self.cluster.config.heartbeat_interval_us
        
        while self.collector.active:
            yield from self.heartbeat_tick()
            yield self.sleep(interval)
    
    def heartbeat_tick(self):
        """
        Commit a no-op transaction on every primary so that replica max
        commit timestamps keep advancing on idle shards.
        """
        
        try:
            ts, wait_until = yield from self.ts_client.commit_ts(None, self.ts_client.mode)
            yield from self.ts_client.commit_wait(ts, wait_until)
        except GeoTxnError as exc:
            logger.debug('t=%d heartbeat skipped: %s', self.now, exc)
            return None
        
        if self.cluster.config.mutations.heartbeat_bypass_log:
            for replica in sorted(self.cluster.replica_shards):
                self.send(replica, 'heartbeat_direct', {'ts': ts})
            return ts
        
        yield from self.parallel(
            self.call(primary, 'heartbeat', {'ts': ts}, timeout=self.ts_client.rpc_timeout)
            for primary in self.cluster.primary_ids
        )
        
        return ts
    
    #
    # 2PC outcome log and DDL catalog
    #
    
    def handle_txn_outcome(self, msg):
        
        txn_id = msg.payload['txn_id']
        outcome = self.outcomes.get(txn_id)
        
        if outcome is None:
            # Presumed nothing: an undecided transaction is decided here
            outcome = self.outcomes[txn_id] = {'outcome': 'abort'}
        
        return outcome
    
    def handle_ddl_committed(self, msg):
        
        self.record_ddl(msg.payload['table'], msg.payload['ts'])
    
    def record_ddl(self, table, ts):
        
        current = self.ddl_catalog.get(table)
        if current is None or ts > current:
            self.ddl_catalog[table] = ts
    
    @property
    def global_max_ddl_ts(self):
        
        return max(self.ddl_catalog.values(), default=None)


class ClientNode(Node):
    """
    A workload client co-located with its preferred CN. It fails over to the
    next CN in its list when its current one stops answering.
    """
    
    role = 'client'
    
    def __init__(self, sim, node_id, region, client_id, cn_ids, stream, spec, timeout, stop_at, **kwargs):
        
        super().__init__(sim, node_id, region, **kwargs)
        
        self.client_id = client_id
        self.cn_ids = list(cn_ids)
        self.stream = stream
        self.spec = spec
        self.timeout = timeout
        self.stop_at = stop_at
        
        self.session = Session(client=client_id)
        self.current = 0
        self.issued = 0
        self.completed = 0
    
    def start(self):
        
        self.spawn(self.run())
    
    def run(self):
        
        yield self.sleep(self.spec.start_us)
        
        for op in self.stream:
            if op.delay:
                yield self.sleep(op.delay)
            
            if self.now >= self.stop_at:
                return
            
            self.issued += 1
            if self.spec.arrival == 'open':
                self.spawn(self.issue(op))
            else:
                yield from self.issue(op)
    
    def issue(self, op):
        
        for attempt in range(len(self.cn_ids)):
            cn = self.cn_ids[self.current]
            payload = {
                'op': op,
                'session': self.session.as_dict(),
                'replica_reads': self.spec.replica_reads,
                'value_size': self.spec.value_size,
            }
            
            try:
                result = yield from self.call(cn, 'execute', payload, timeout=self.timeout)
            except GeoTxnError as exc:
                logger.debug('t=%d client %d: %s failed: %s', self.now, self.client_id, cn, exc)
                self.current = (self.current + 1) % len(self.cn_ids)
                continue
            
            self.session.merge(result['session'])
            self.completed += 1
            
            return result
        
        return None
