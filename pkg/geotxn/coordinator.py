"""
Transaction coordination on a compute node: snapshot acquisition, shard
routing, the two-phase commit sequence, DDL and read-only routing.

Transaction ids embed the index of the coordinating CN in their upper bits,
so a data node holding an in-doubt transaction knows whom to ask for its
outcome.
"""
import itertools
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from geotxn.exceptions import (
    AuthorityUnavailable, ClockUnhealthy, GeoTxnError, ParticipantFailed, ReadTimeout,
    ReplicaReadTimeout, RpcTimeout, ShardUnavailable, TransactionAborted, UnknownTransaction, WriteConflict
)
from geotxn.ror.routing import DENY, ddl_gate, select_nodes
from geotxn.txtime.timestamps import Mode
from geotxn.verify.workload import READ_ONLY, READ_WRITE

logger = logging.getLogger(__name__)

DDL = 'ddl'

TXN_ID_SHIFT = 40

ACTIVE = 'active'
PREPARING = 'preparing'
COMMITTING = 'committing'
COMMITTED = 'committed'
ABORTED = 'aborted'

PHASES = ('invocation_wait', 'gtm_roundtrip', 'pending_commit', 'prepare', 'commit_wait', 'finalize', 'read')

# Checked in order, so subclasses come before their bases
ABORT_REASONS = (
    (ReplicaReadTimeout, 'replica_read_timeout'),
    (ReadTimeout, 'read_timeout'),
    (AuthorityUnavailable, 'authority_unavailable'),
    (ClockUnhealthy, 'clock_unhealthy'),
    (RpcTimeout, 'participant_timeout'),
    (ShardUnavailable, 'shard_unavailable'),
    (UnknownTransaction, 'participant_failed'),
)


def coordinator_index(txn_id):
    
    return txn_id >> TXN_ID_SHIFT


def abort_reason(exc):
    
    if isinstance(exc, TransactionAborted):
        return exc.reason
    
    for error_class, reason in ABORT_REASONS:
        if isinstance(exc, error_class):
            return reason
    
    return 'error'


@dataclass
class Session:
    """
    The consistency state a client carries between operations, by value.
    """
    
    client: int = None
    last_commit_ts: int = 0
    last_replica_snapshot: int = 0
    
    def as_dict(self):
        
        return asdict(self)
    
    def merge(self, other):
        
        self.last_commit_ts = max(self.last_commit_ts, other['last_commit_ts'])
        self.last_replica_snapshot = max(self.last_replica_snapshot, other['last_replica_snapshot'])


@dataclass
class TxnHandle:
    
    id: int
    coordinator: str
    mode_at_begin: Mode
    snapshot: object
    kind: str = READ_WRITE
    client: int = None
    shards_touched: set = field(default_factory=set)
    writes: dict = field(default_factory=lambda: defaultdict(dict))
    state: str = ACTIVE
    ddl_table: str = None
    commit_ts: object = None
    started_at: int = 0
    
    @property
    def committed(self):
        
        return self.state == COMMITTED


class Coordinator:
    
    def __init__(self, node, cluster):
        
        self.node = node
        self.cluster = cluster
        self.config = cluster.config
        self.history = cluster.history
        self.phases = cluster.phases
        
        self.active = {}
        self.fallbacks = 0
        self._seq = itertools.count(1)
    
    @property
    def ts_client(self):
        
        return self.node.ts_client
    
    @property
    def rpc_timeout(self):
        
        return self.config.rpc_timeout_us
    
    @property
    def read_call_timeout(self):
        
        return self.config.read_timeout_us + self.rpc_timeout
    
    def next_txn_id(self):
        
        return (self.node.index << TXN_ID_SHIFT) | next(self._seq)
    
    def _timed(self, phase, started_at):
        
        self.phases.child(phase).record(self.node.now - started_at)
    
    def _fan_out(self, calls):
        """
        Run ``{shard: call}`` concurrently. Return ``{shard: Outcome}``.
        """
        
        shards = sorted(calls)
        outcomes = yield from self.node.parallel(calls[shard] for shard in shards)
        
        return dict(zip(shards, outcomes))
    
    def _shards_of(self, keys):
        
        by_shard = defaultdict(list)
        for key in keys:
            by_shard[self.cluster.distribution.shard_for(key)].append(key)
        
        return dict(by_shard)
    
    #
    # Lifecycle
    #
    
    def begin(self, client, kind, keys_hint=None):
        """
        Start a transaction and fix its snapshot. In GClock mode a
        transaction confined to one shard takes that shard's last commit
        timestamp as its snapshot, skipping the invocation wait. Use with
        ``yield from``.
        """
        
        if keys_hint is None:
            shards = set(self.cluster.shards)
        else:
            shards = set(self._shards_of(keys_hint))
        
        mode = self.ts_client.mode
        txn_id = self.next_txn_id()
        started_at = self.node.now
        
        if mode is Mode.GCLOCK and len(shards) == 1:
            primary = self.cluster.primary_of(next(iter(shards)))
            snapshot = yield from self.node.call(primary, 'last_commit', timeout=self.rpc_timeout)
        else:
            snapshot = yield from self.ts_client.invocation_ts(txn_id)
        
        self._timed('invocation_wait', started_at)
        
        txn = TxnHandle(txn_id, self.node.id, mode, snapshot, kind, client, started_at=started_at)
        self.active[txn_id] = txn
        
        self.history.record(
            'invoke', self.node.now, txn_id, client=client, cn=self.node.id, snapshot=snapshot.value,
            mode=mode.value, route='primary', read_only=kind == READ_ONLY, started_at=started_at
        )
        
        return txn
    
    def read(self, txn, keys):
        """
        Read ``keys`` at the transaction's snapshot from the primaries.
        """
        
        by_shard = self._shards_of(keys)
        placement = {shard: self.cluster.primary_of(shard) for shard in by_shard}
        
        return (yield from self.read_keys(txn.id, txn.client, by_shard, placement, txn.snapshot, 'primary'))
    
    def read_keys(self, txn_id, client, by_shard, placement, snapshot, route, replicas=()):
        
        def read_shard(shard):
            
            target = placement[shard]
            payload = {'keys': by_shard[shard], 'snapshot': snapshot}
            if target not in replicas:
                payload['txn_id'] = txn_id
            
            return (yield from self.node.call(target, 'read', payload, timeout=self.read_call_timeout))
        
        started_at = self.node.now
        outcomes = yield from self._fan_out({shard: read_shard(shard) for shard in by_shard})
        
        for outcome in outcomes.values():
            if not outcome.ok:
                raise outcome.error
        
        self._timed('read', started_at)
        
        results = []
        for shard, outcome in outcomes.items():
            target = placement[shard]
            on_replica = target in replicas
            staleness = 0
            if on_replica:
                served = outcome.value
                staleness = self.cluster.true_staleness(shard, served['applied_lsn'], served['served_at'])
            
            for item in outcome.value['results']:
                self.history.record(
                    'read_return', self.node.now, txn_id, client=client, key=item['key'], writer=item['writer'],
                    version_ts=item['version_ts'], snapshot=snapshot.value, node=target,
                    route='replica' if on_replica else route, true_staleness=staleness
                )
                results.append(item)
        
        return results
    
    def write(self, txn, writes):
        """
        Stage ``writes`` (key -> value) on their primaries.
        """
        
        by_shard = defaultdict(dict)
        for key, value in writes.items():
            by_shard[self.cluster.distribution.shard_for(key)][key] = value
        
        calls = {
            shard: self.node.call(
                self.cluster.primary_of(shard), 'write',
                {'txn_id': txn.id, 'writes': shard_writes, 'snapshot': txn.snapshot}, timeout=self.rpc_timeout,
                size=sum(len(v) for v in shard_writes.values()) + 64
            )
            for shard, shard_writes in by_shard.items()
        }
        
        for shard in by_shard:
            txn.shards_touched.add(shard)
        
        outcomes = yield from self._fan_out(calls)
        
        for shard, outcome in outcomes.items():
            if not outcome.ok:
                raise outcome.error
            
            txn.writes[shard].update(by_shard[shard])
    
    def commit(self, txn):
        """
        Commit ``txn`` and return its commit timestamp once it is visible:
        
        1. PendingCommit on every touched shard; a single-shard transaction
           is validated here.
        2. For multi-shard transactions, Prepare on all; every vote must be
           yes.
        3. Acquire the commit timestamp, then wait it out.
        4. Log the outcome, then finalize on every shard.
        
        Errors before the outcome is logged leave the transaction for
        ``abort()``. Use with ``yield from``.
        """
        
        node = self.node
        txn.shards_touched = frozenset(txn.shards_touched)
        shards = sorted(txn.shards_touched)
        multi = len(shards) > 1
        
        txn.state = PREPARING
        started_at = node.now
        outcomes = yield from self._fan_out({
            shard: node.call(
                self.cluster.primary_of(shard), 'pending_commit', {'txn_id': txn.id, 'validate': not multi},
                timeout=self.rpc_timeout
            )
            for shard in shards
        })
        self._check_votes(txn, outcomes, 'locked')
        self._timed('pending_commit', started_at)
        
        if multi:
            started_at = node.now
            outcomes = yield from self._fan_out({
                shard: node.call(self.cluster.primary_of(shard), 'prepare', {'txn_id': txn.id},
                                 timeout=self.rpc_timeout)
                for shard in shards
            })
            self._check_votes(txn, outcomes, 'vote')
            self._timed('prepare', started_at)
        
        txn.state = COMMITTING
        requested_at = node.now
        ts, wait_until = yield from self.ts_client.commit_ts(txn.id, txn.mode_at_begin)
        self._timed('gtm_roundtrip', requested_at)
        
        started_at = node.now
        yield from self.ts_client.commit_wait(ts, wait_until)
        self._timed('commit_wait', started_at)
        
        if txn.id in node.outcomes:
            raise ParticipantFailed(txn.id, 'aborted by in-doubt resolution')
        
        node.outcomes[txn.id] = {'outcome': 'commit', 'commit_ts': ts, 'ddl': txn.ddl_table}
        txn.commit_ts = ts
        
        started_at = node.now
        yield from self.finalize(txn, ts)
        self._timed('finalize', started_at)
        
        txn.state = COMMITTED
        self.active.pop(txn.id, None)
        
        self.history.record(
            'commit_visible', node.now, txn.id, client=txn.client, commit_ts=ts.value, requested_at=requested_at,
            writes=sorted(k for shard in shards for k in txn.writes.get(shard, ())), shards=shards,
            read_only=False
        )
        
        return ts
    
    def _check_votes(self, txn, outcomes, field_name):
        
        for shard, outcome in outcomes.items():
            if not outcome.ok:
                raise ParticipantFailed(txn.id, f'shard {shard}: {outcome.error}')
        
        for shard, outcome in outcomes.items():
            if not outcome.value[field_name]:
                raise WriteConflict(txn.id, f'shard {shard}')
    
    def _finalize_calls(self, txn, shards, commit_ts):
        
        payload = {'txn_id': txn.id, 'commit_ts': commit_ts, 'ddl': txn.ddl_table if commit_ts else None}
        timeout = self.rpc_timeout + self.config.replication.quorum_timeout_us
        
        return {
            shard: self.node.call(self.cluster.primary_of(shard), 'finalize', payload, timeout=timeout)
            for shard in shards
        }
    
    def finalize(self, txn, commit_ts):
        """
        Send the outcome to every touched shard. Shards that do not answer
        are retried in the background; they also ask for the outcome
        themselves when they find the transaction in doubt.
        """
        
        shards = sorted(txn.shards_touched)
        outcomes = yield from self._fan_out(self._finalize_calls(txn, shards, commit_ts))
        pending = [
            shard for shard, o in outcomes.items()
            if not o.ok and not isinstance(o.error, UnknownTransaction)
        ]
        
        if pending and commit_ts is not None:
            self.node.spawn(self._retry_finalize(txn, pending, commit_ts))
    
    def _retry_finalize(self, txn, shards, commit_ts):
        
        while shards:
            yield self.node.sleep(self.rpc_timeout)
            
            outcomes = yield from self._fan_out(self._finalize_calls(txn, shards, commit_ts))
            shards = [
                shard for shard, o in outcomes.items()
                if not o.ok and not isinstance(o.error, UnknownTransaction)
            ]
    
    def abort(self, txn, exc):
        
        reason = abort_reason(exc)
        txn.state = ABORTED
        self.active.pop(txn.id, None)
        self.node.outcomes.setdefault(txn.id, {'outcome': 'abort'})
        
        logger.debug('t=%d %s aborts txn %d: %s', self.node.now, self.node.id, txn.id, exc)
        
        if txn.shards_touched:
            yield from self.finalize(txn, None)
        
        self.history.record('abort', self.node.now, txn.id, client=txn.client, reason=reason)
    
    #
    # Operations
    #
    
    def run_operation(self, op, session, replica_reads=True, value_size=16):
        
        if op.read_only:
            result = yield from self.execute_read_only(op, session, replica_reads)
        else:
            result = yield from self.execute_read_write(op, session, value_size)
        
        result['session'] = session.as_dict()
        
        return result
    
    def _failed(self, client, exc):
        
        reason = abort_reason(exc)
        self.history.record('abort', self.node.now, None, client=client, reason=reason)
        
        return {'ok': False, 'reason': reason}
    
    def execute_read_write(self, op, session, value_size=16):
        
        txn = None
        
        try:
            txn = yield from self.begin(op.client, READ_WRITE, op.keys)
            yield from self.read(txn, op.keys)
            
            value = f'{txn.id}'.encode('ascii').ljust(value_size, b'.')
            yield from self.write(txn, {key: value for key in op.keys})
            
            ts = yield from self.commit(txn)
        except GeoTxnError as exc:
            if txn is None:
                return self._failed(op.client, exc)
            
            yield from self.abort(txn, exc)
            return {'ok': False, 'reason': abort_reason(exc), 'txn_id': txn.id}
        
        session.last_commit_ts = max(session.last_commit_ts, ts.value)
        
        return {'ok': True, 'txn_id': txn.id, 'commit_ts': ts.value, 'route': 'primary'}
    
    def plan_replica_route(self, op, shards, session):
        """
        Return ``(route, rcp)`` if the query may run at the published RCP,
        or ``None`` if it has to go to the primaries with a fresh snapshot.
        """
        
        rcp = self.node.rcp_cache.current
        if rcp is None:
            return None
        
        clamp = not self.config.mutations.disable_rcp_clamp
        if clamp and session.last_replica_snapshot > rcp.ts.value:
            return None
        
        # Read-your-writes
        if session.last_commit_ts > rcp.ts.value:
            return None
        
        tables = {self.cluster.distribution.table_for(key) for key in op.keys}
        if ddl_gate(tables, rcp.ts.value, self.node.ddl_catalog, self.node.global_max_ddl_ts) == DENY:
            return None
        
        candidates = self.node.metrics.candidates(shards, rcp)
        try:
            route = select_nodes(shards, candidates, op.staleness_bound)
        except ShardUnavailable:
            return None
        
        if route.all_primary:
            return None
        
        return route, rcp
    
    def execute_read_only(self, op, session, replica_reads=True):
        """
        Run a read-only query: at the published RCP on the nodes chosen by
        the router when possible, otherwise on the primaries at a fresh
        snapshot. A replica route that fails falls back to the primaries.
        """
        
        by_shard = self._shards_of(op.keys)
        planned = self.plan_replica_route(op, set(by_shard), session) if replica_reads else None
        
        if planned is not None:
            route, rcp = planned
            try:
                result = yield from self._read_at_rcp(op, session, by_shard, route, rcp)
            except (ReadTimeout, RpcTimeout, ShardUnavailable) as exc:
                self.fallbacks += 1
                logger.debug('t=%d %s falls back to the primaries: %s', self.node.now, self.node.id, exc)
            else:
                return result
        
        try:
            txn = yield from self.begin(op.client, READ_ONLY, op.keys)
            yield from self.read(txn, op.keys)
        except GeoTxnError as exc:
            return self._failed(op.client, exc)
        
        self.active.pop(txn.id, None)
        self._record_query_done(txn.id, op.client)
        
        return {'ok': True, 'txn_id': txn.id, 'snapshot': txn.snapshot.value, 'route': 'primary'}
    
    def _read_at_rcp(self, op, session, by_shard, route, rcp):
        
        txn_id = self.next_txn_id()
        snapshot = rcp.ts
        kind = 'replica' if len(route.replicas) == len(by_shard) else 'mixed'
        
        self.history.record(
            'invoke', self.node.now, txn_id, client=op.client, cn=self.node.id, snapshot=snapshot.value,
            mode=snapshot.mode.value, route=kind, read_only=True, started_at=self.node.now,
            staleness_bound=op.staleness_bound
        )
        
        yield from self.read_keys(txn_id, op.client, by_shard, route.nodes, snapshot, 'primary', route.replicas)
        
        session.last_replica_snapshot = max(session.last_replica_snapshot, snapshot.value)
        self._record_query_done(txn_id, op.client)
        
        return {'ok': True, 'txn_id': txn_id, 'snapshot': snapshot.value, 'route': kind}
    
    def _record_query_done(self, txn_id, client):
        
        self.history.record(
            'commit_visible', self.node.now, txn_id, client=client, commit_ts=None, requested_at=None, writes=[],
            shards=[], read_only=True
        )
    
    def execute_ddl(self, table):
        """
        Commit a catalog version bump for ``table`` on every shard and return
        its commit timestamp. Use with ``yield from``.
        """
        
        txn = yield from self.begin(None, DDL)
        txn.ddl_table = table
        
        try:
            outcomes = yield from self._fan_out({
                shard: self.node.call(
                    self.cluster.primary_of(shard), 'ddl_begin', {'txn_id': txn.id, 'snapshot': txn.snapshot},
                    timeout=self.rpc_timeout
                )
                for shard in self.cluster.shards
            })
            txn.shards_touched.update(s for s, o in outcomes.items() if o.ok)
            
            for shard, outcome in outcomes.items():
                if not outcome.ok:
                    raise ParticipantFailed(txn.id, f'shard {shard}: {outcome.error}')
            
            ts = yield from self.commit(txn)
        except GeoTxnError as exc:
            yield from self.abort(txn, exc)
            raise
        
        self.node.record_ddl(table, ts.value)
        for cn in self.node.peer_cns:
            if cn != self.node.id:
                self.node.send(cn, 'ddl_committed', {'table': table, 'ts': ts.value})
        
        logger.info('t=%d DDL on %s committed at %d', self.node.now, table, ts.value)
        
        return ts
