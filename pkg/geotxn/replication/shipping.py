import logging

from geotxn.exceptions import GeoTxnError
from geotxn.replication.records import COMMIT_KINDS, RecordKind

logger = logging.getLogger(__name__)

ADVANCING_KINDS = COMMIT_KINDS + (RecordKind.HEARTBEAT, )


class Shipper:
    """
    Ships one shard's redo stream from its primary to one replica,
    asynchronously and in FIFO batches. The primary never waits on it.
    
    On start the shipper asks the replica for its applied position and ships
    from there, so a restarted primary or replica resumes from the last
    acknowledged record. ``lag_us`` holds every record back until that long
    after it was appended.
    """
    
    def __init__(self, node, log, replica_id, lag_us=0, batch_size=64, rpc_timeout=200_000):
        
        self.node = node
        self.log = log
        self.replica_id = replica_id
        self.lag = lag_us
        self.batch_size = batch_size
        self.rpc_timeout = rpc_timeout
        
        self.next_lsn = None
        self.acked_lsn = 0
        
        self._wakeup = None
    
    def start(self):
        
        self.next_lsn = None
        self.node.spawn(self.run())
    
    def notify(self):
        
        if self._wakeup is not None and not self._wakeup.triggered:
            self._wakeup.succeed()
    
    def resume(self, from_lsn):
        
        logger.debug('t=%d shipping shard %d to %s resumes at lsn %d', self.node.now, self.log.shard,
                     self.replica_id, from_lsn)
        
        self.next_lsn = from_lsn
        self.notify()
    
    def ack(self, lsn):
        
        self.acked_lsn = max(self.acked_lsn, lsn)
    
    def _locate(self):
        
        while self.next_lsn is None:
            try:
                reply = yield from self.node.call(
                    self.replica_id, 'redo_position', {'shard': self.log.shard}, timeout=self.rpc_timeout
                )
            except GeoTxnError:
                yield self.node.sleep(self.rpc_timeout)
                continue
            
            if self.next_lsn is None:
                self.next_lsn = reply['applied_lsn'] + 1
                self.ack(reply['applied_lsn'])
    
    def run(self):
        
        yield from self._locate()
        
        while True:
            pending = self.log.since(self.next_lsn - 1, limit=self.batch_size)
            
            if not pending:
                self._wakeup = self.node.env.event()
                yield self._wakeup
                continue
            
            now = self.node.now
            batch = [r for r in pending if r.appended_at + self.lag <= now]
            
            if not batch:
                yield self.node.sleep(pending[0].appended_at + self.lag - now)
                continue
            
            self.ship(batch)
    
    def ship(self, batch):
        
        size = sum(record.size for record in batch)
        self.node.send(self.replica_id, 'redo', {'shard': self.log.shard, 'records': batch}, size=size)
        self.next_lsn = batch[-1].lsn + 1


def true_staleness(log, applied_lsn, now):
    """
    Return the oracle staleness of a replica that has applied ``log`` up to
    ``applied_lsn``: how long ago the oldest commit or heartbeat record it
    has not yet applied was appended at the primary, or 0 if there is none.
    """
    
    for record in log.since(applied_lsn):
        if record.kind in ADVANCING_KINDS:
            return max(0, now - record.appended_at)
    
    return 0
