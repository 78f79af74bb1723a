import logging
from dataclasses import dataclass

from geotxn.exceptions import ProtocolViolation, ReplicaReadTimeout
from geotxn.store import ShardStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReplicaRead:
    """
    The outcome of a single replica read attempt: the visible version (or
    ``None`` if the key is absent at the snapshot), or the id of the
    transaction the read is blocked on.
    """
    
    version: object = None
    blocked_by: int = None
    
    @property
    def blocked(self):
        
        return self.blocked_by is not None


class ReplicaState:
    """
    The replayed state of one replica of a shard.
    """
    
    def __init__(self, shard, replica_id):
        
        self.shard = shard
        self.replica_id = replica_id
        self.store = ShardStore(shard)
    
    @property
    def applied_lsn(self):
        
        return self.store.applied_lsn
    
    @property
    def max_commit_ts(self):
        
        return self.store.max_commit_ts
    
    @property
    def locked_keys(self):
        
        return {key: lock.txn_id for key, lock in self.store.locks.items()}
    
    def replay(self, record):
        
        previous = self.store.max_commit_ts
        self.store.apply(record)
        
        if self.store.max_commit_ts < previous:
            raise ProtocolViolation(f'max_commit_ts of {self.replica_id} moved backwards.')
    
    def bypass_heartbeat(self, ts):
        """
        Advance ``max_commit_ts`` without a log record. Only used by the
        ``heartbeat_bypass_log`` mutation, which is expected to break replica
        consistency.
        """
        
        if ts > self.store.max_commit_ts:
            self.store.max_commit_ts = ts
    
    def check_servable(self, snapshot):
        
        if snapshot.value > self.store.max_commit_ts.value:
            raise ProtocolViolation(
                f'Snapshot {snapshot.value} is above the max commit timestamp of {self.replica_id}.'
            )
    
    def replica_read_at(self, key, snapshot):
        """
        Make a single non-waiting read attempt of ``key`` at ``snapshot``.
        """
        
        self.check_servable(snapshot)
        
        blocker = self.store.blocking_txn(key, snapshot)
        if blocker is not None:
            return ReplicaRead(blocked_by=blocker)
        
        return ReplicaRead(version=self.store.read_at(key, snapshot))
    
    def read(self, node, key, snapshot, timeout):
        """
        Read ``key`` at ``snapshot`` on behalf of ``node``, waiting out any
        pending transaction the read is blocked on for up to ``timeout``
        microseconds. Use with ``yield from``.
        """
        
        self.check_servable(snapshot)
        
        return (yield from read_unblocked(
            node, self.store, key, snapshot, timeout, ReplicaReadTimeout(node.id, key)
        ))


def read_unblocked(node, store, key, snapshot, timeout, error, txn_id=None):
    """
    Read ``key`` at ``snapshot`` from ``store`` on behalf of ``node``, waiting
    for any transaction locking the key whose outcome could fall at or below
    the snapshot to resolve first. Raise ``error`` if that takes longer than
    ``timeout`` microseconds. Use with ``yield from``.
    """
    
    deadline = node.now + timeout
    
    while True:
        blocker = store.blocking_txn(key, snapshot, txn_id)
        if blocker is None:
            return store.read_at(key, snapshot, txn_id)
        
        remaining = deadline - node.now
        if remaining <= 0:
            raise error
        
        logger.debug('t=%d read of %s on %s waits for txn %d', node.now, key, node.id, blocker)
        
        released = node.env.event()
        store.add_waiter(key, lambda: released.triggered or released.succeed())
        
        yield released | node.sleep(remaining)
