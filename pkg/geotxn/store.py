"""
Per-shard MVCC storage.

A ``ShardStore`` is both the state of a primary data node and the mirror
state of a replica. Every mutation made on a primary is expressed as a redo
record that is appended to the shard's log and then applied with
``apply()``; replicas and recovering primaries run the exact same
``apply()`` over the shipped or durable records.
"""
import bisect
import enum
import hashlib
import logging
from dataclasses import dataclass

from geotxn.exceptions import ProtocolViolation, RoutingError, UnknownTransaction
from geotxn.replication.records import ABORT_KINDS, COMMIT_KINDS, LOCKING_KINDS, RecordKind
from geotxn.txtime.timestamps import ZERO

logger = logging.getLogger(__name__)


def key_name(index):
    
    return f'k{index}'


def key_index(key):
    
    return int(key[1:])


class VersionState(str, enum.Enum):
    
    COMMITTED = 'committed'
    PENDING = 'pending'
    ABORTED = 'aborted'


@dataclass
class VersionedValue:
    
    key: str
    value: bytes
    commit_ts: object
    txn_id: int
    state: VersionState = VersionState.COMMITTED


@dataclass
class Lock:
    """
    A key locked by a committing or prepared transaction. ``floor`` is the
    shard's ``max_commit_ts`` when the lock was taken: the transaction is
    guaranteed to commit above it.
    """
    
    txn_id: int
    floor: object
    kind: RecordKind
    taken_at: int = 0


class DistributionMap:
    """
    Maps keys to their primary shard, by a stable hash of the key or by
    contiguous ranges of the key index. Keys also belong to one of ``tables``
    tables, for DDL gating.
    """
    
    def __init__(self, shard_count, placement='hash', key_space=None, tables=1):
        
        if shard_count < 1:
            raise ValueError('shard_count must be at least 1.')
        
        if placement not in ('hash', 'range'):
            raise ValueError(f'Unknown placement "{placement}".')
        
        if placement == 'range' and not key_space:
            raise ValueError('Range placement requires a key_space.')
        
        self.shard_count = shard_count
        self.placement = placement
        self.key_space = key_space
        self.tables = tables
    
    def shard_for(self, key):
        
        if self.placement == 'range':
            return min(self.shard_count - 1, key_index(key) * self.shard_count // self.key_space)
        
        digest = hashlib.blake2b(key.encode('utf-8'), digest_size=8).digest()
        
        return int.from_bytes(digest, 'big') % self.shard_count
    
    def table_for(self, key):
        
        return f't{key_index(key) % self.tables}'
    
    def keys_by_shard(self, key_space):
        
        shards = {shard: [] for shard in range(self.shard_count)}
        for index in range(key_space):
            key = key_name(index)
            shards[self.shard_for(key)].append(key)
        
        return shards


class ShardStore:
    
    def __init__(self, shard, distribution=None, log=None):
        
        self.shard = shard
        self.distribution = distribution
        self.log = log
        
        self.versions = {}
        self.pending = {}
        self.locks = {}
        self.txn_locks = {}
        self.prepared = set()
        self.snapshots = {}
        self.catalog = {}
        
        self.max_commit_ts = ZERO
        self.applied_lsn = 0
        
        self._waiters = {}
        self._now = lambda: 0
    
    @classmethod
    def rebuild(cls, shard, distribution, log, now=None):
        """
        Rebuild a primary's state by replaying its own durable log.
        """
        
        store = cls(shard, distribution, log)
        if now:
            store._now = now
        
        for record in log.records:
            store.apply(record)
        
        return store
    
    @property
    def last_committed_ts(self):
        
        return self.max_commit_ts
    
    def set_clock(self, now):
        
        self._now = now
    
    #
    # Replay
    #
    
    def apply(self, record):
        """
        Apply one redo record. Records must arrive in log order without gaps.
        """
        
        if record.lsn != self.applied_lsn + 1:
            raise ProtocolViolation(
                f'Shard {self.shard} expected lsn {self.applied_lsn + 1}, got {record.lsn}.'
            )
        
        self.applied_lsn = record.lsn
        kind = record.kind
        
        if kind == RecordKind.WRITE:
            self.pending.setdefault(record.txn_id, {})[record.keys[0]] = record.payload
        elif kind in LOCKING_KINDS:
            self._lock(record)
        elif kind in COMMIT_KINDS:
            self._commit(record)
        elif kind in ABORT_KINDS:
            self.pending.pop(record.txn_id, None)
            self._release(record.txn_id)
        elif kind == RecordKind.HEARTBEAT:
            self._advance(record.commit_ts)
    
    def _lock(self, record):
        
        txn_id = record.txn_id
        held = self.txn_locks.setdefault(txn_id, set())
        for key in record.keys:
            lock = self.locks.get(key)
            if lock is not None and lock.txn_id != txn_id:
                raise ProtocolViolation(f'Shard {self.shard}: txn {txn_id} locks {key}, held by txn {lock.txn_id}.')
            
            if key not in held:
                self.locks[key] = Lock(txn_id, self.max_commit_ts, record.kind, self._now())
                held.add(key)
        
        if record.kind == RecordKind.PREPARE:
            self.prepared.add(txn_id)
    
    def _commit(self, record):
        
        ts = record.commit_ts
        txn_id = record.txn_id
        for key, value in self.pending.pop(txn_id, {}).items():
            version = VersionedValue(key, value, ts, txn_id)
            bisect.insort(self.versions.setdefault(key, []), version, key=lambda v: v.commit_ts.sort_key)
        
        if record.kind == RecordKind.DDL:
            self.catalog[record.payload.decode('utf-8')] = ts
        
        self._advance(ts)
        self._release(txn_id)
    
    def _advance(self, ts):
        
        if ts > self.max_commit_ts:
            self.max_commit_ts = ts
    
    def _release(self, txn_id):
        
        self.prepared.discard(txn_id)
        self.snapshots.pop(txn_id, None)
        
        for key in self.txn_locks.pop(txn_id, ()):
            lock = self.locks.get(key)
            if lock is None or lock.txn_id != txn_id:
                continue
            
            del self.locks[key]
            for callback in self._waiters.pop(key, ()):
                callback()
    
    #
    # Reads
    #
    
    def read_at(self, key, snapshot, txn_id=None):
        """
        Return the version of ``key`` visible at ``snapshot``: the transaction's
        own pending write if it has one, else the committed version with the
        largest commit timestamp ``<= snapshot``, else ``None``.
        """
        
        if txn_id is not None and key in self.pending.get(txn_id, {}):
            return VersionedValue(key, self.pending[txn_id][key], None, txn_id, VersionState.PENDING)
        
        versions = self.versions.get(key)
        if not versions:
            return None
        
        index = bisect.bisect_right(versions, snapshot.value, key=lambda v: v.commit_ts.value)
        if not index:
            return None
        
        return versions[index - 1]
    
    def blocking_txn(self, key, snapshot, txn_id=None):
        """
        Return the id of the unresolved transaction a read of ``key`` at
        ``snapshot`` must wait for, or ``None``. A lock only matters when the
        snapshot lies above its floor, since the locking transaction will
        commit above the floor.
        """
        
        lock = self.locks.get(key)
        if lock is None or lock.txn_id == txn_id:
            return None
        
        if snapshot.value > lock.floor.value:
            return lock.txn_id
        
        return None
    
    def add_waiter(self, key, callback):
        
        self._waiters.setdefault(key, []).append(callback)
    
    #
    # Primary mutations
    #
    
    def _emit(self, kind, txn_id=0, keys=(), commit_ts=None, payload=b''):
        
        record = self.log.append(kind, txn_id, keys, commit_ts, payload)
        self.apply(record)
        
        return record
    
    def _check_owner(self, key):
        
        owner = self.distribution.shard_for(key)
        if owner != self.shard:
            raise RoutingError(key, self.shard, owner)
    
    def knows(self, txn_id):
        
        return txn_id in self.pending or txn_id in self.txn_locks or txn_id in self.snapshots
    
    def stage_write(self, txn_id, key, value, snapshot):
        
        self._check_owner(key)
        self.snapshots.setdefault(txn_id, snapshot)
        
        return self._emit(RecordKind.WRITE, txn_id, (key, ), payload=value)
    
    def _locked_by_others(self, txn_id):
        
        locks = self.locks
        
        return [
            key for key in self.pending.get(txn_id, {})
            if key in locks and locks[key].txn_id != txn_id
        ]
    
    def conflicts(self, txn_id):
        """
        Return the keys on which ``txn_id`` loses under first-committer-wins:
        a newer committed version exists, or another transaction is already
        committing the key.
        """
        
        snapshot = self.snapshots.get(txn_id, ZERO)
        conflicting = []
        
        for key in self.pending.get(txn_id, {}):
            lock = self.locks.get(key)
            if lock is not None and lock.txn_id != txn_id:
                conflicting.append(key)
                continue
            
            versions = self.versions.get(key)
            if versions and versions[-1].commit_ts.value > snapshot.value:
                conflicting.append(key)
        
        return conflicting
    
    def mark_committing(self, txn_id, validate=False):
        """
        Append the PendingCommit record locking the transaction's keys. A key
        already locked by another committer aborts the transaction locally
        instead; with ``validate``, so does a newer committed version. Return
        ``True`` if the keys were locked.
        """
        
        if not self.knows(txn_id):
            raise UnknownTransaction(txn_id)
        
        if self._locked_by_others(txn_id) or (validate and self.conflicts(txn_id)):
            self._emit(RecordKind.ABORT, txn_id)
            return False
        
        keys = sorted(self.pending.get(txn_id, {}))
        self._emit(RecordKind.PENDING_COMMIT, txn_id, keys)
        
        return True
    
    def prepare(self, txn_id):
        """
        Validate the transaction and vote. A "no" vote discards its writes
        with an Abort record.
        """
        
        if not self.knows(txn_id):
            return False
        
        if self.conflicts(txn_id):
            logger.debug('shard %d votes no for txn %d', self.shard, txn_id)
            self._emit(RecordKind.ABORT, txn_id)
            return False
        
        keys = sorted(self.pending.get(txn_id, {}))
        self._emit(RecordKind.PREPARE, txn_id, keys)
        
        return True
    
    def finalize(self, txn_id, commit_ts=None, ddl_table=None):
        """
        Commit the transaction at ``commit_ts``, or abort it if ``commit_ts``
        is ``None``. Prepared transactions get CommitPrepared/AbortPrepared
        records, others Commit/Abort. A DDL commit is logged as a Ddl record.
        """
        
        if not self.knows(txn_id):
            raise UnknownTransaction(txn_id)
        
        two_phase = txn_id in self.prepared
        
        if commit_ts is None:
            kind = RecordKind.ABORT_PREPARED if two_phase else RecordKind.ABORT
            return self._emit(kind, txn_id)
        
        if ddl_table is not None:
            return self._emit(RecordKind.DDL, txn_id, commit_ts=commit_ts, payload=ddl_table.encode('utf-8'))
        
        kind = RecordKind.COMMIT_PREPARED if two_phase else RecordKind.COMMIT
        
        return self._emit(kind, txn_id, commit_ts=commit_ts)
    
    def begin_ddl(self, txn_id, snapshot):
        """
        Register a DDL transaction on this shard. It writes no keys and goes
        through the normal commit sequence with an empty key set.
        """
        
        self.snapshots.setdefault(txn_id, snapshot)
        self.pending.setdefault(txn_id, {})
    
    def append_heartbeat(self, ts):
        
        return self._emit(RecordKind.HEARTBEAT, commit_ts=ts)
    
    def in_doubt(self):
        """
        Return ``{txn_id: prepared}`` for transactions holding locks without
        a logged outcome.
        """
        
        return {txn_id: txn_id in self.prepared for txn_id in self.txn_locks}
    
    def stale_locks(self, older_than):
        
        stale = set()
        for lock in self.locks.values():
            if lock.taken_at <= older_than:
                stale.add(lock.txn_id)
        
        return stale
    
    def state_at(self, snapshot):
        """
        Return ``{key: (value, writer_txn_id)}`` for every key with a version
        visible at ``snapshot``.
        """
        
        state = {}
        for key in self.versions:
            version = self.read_at(key, snapshot)
            if version is not None:
                state[key] = (version.value, version.txn_id)
        
        return state


def replay_to(log, snapshot):
    """
    Build the brute-force historical state of a primary at ``snapshot``: the
    full log is replayed into a fresh store and read at the snapshot. Returns
    ``{key: (value, writer_txn_id)}``.
    """
    
    store = ShardStore(log.shard)
    for record in log.records:
        store.apply(record)
    
    return store.state_at(snapshot)
