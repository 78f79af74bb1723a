from django.test import SimpleTestCase

from geotxn.exceptions import ProtocolViolation, ReplicaReadTimeout
from geotxn.nodes import DataNode, ReplicaNode
from geotxn.replication.records import (
    FRAME, RecordKind, RedoLog, RedoRecord, decode_records, encode_records
)
from geotxn.replication.replica import ReplicaState
from geotxn.replication.shipping import true_staleness
from geotxn.sim import LatencyMatrix, Simulator
from geotxn.store import DistributionMap, ShardStore
from geotxn.txtime.timestamps import ZERO, Mode, Timestamp
from geotxn.utils.tests import outcome_of


def ts(value):
    
    return Timestamp(value, 60, Mode.GCLOCK, 2, value)


class RecordTestCase(SimpleTestCase):
    
    def test_label(self):
        
        self.assertEqual(RecordKind.PENDING_COMMIT.label, 'PendingCommit')
        self.assertEqual(RecordKind.DDL.label, 'Ddl')
    
    def test_encode(self):
        """
        Test a record survives encoding with every field intact, including
        the mode, error bound and tie-breakers of its timestamp.
        """
        
        record = RedoRecord(7, RecordKind.COMMIT_PREPARED, 1 << 40 | 3, ts(1234), ('k1', 'k22'), b'\x00\xff')
        
        decoded = RedoRecord.decode(record.encode())
        
        self.assertEqual(decoded, record)
        self.assertIs(decoded.commit_ts.mode, Mode.GCLOCK)
        self.assertEqual(decoded.commit_ts.err, 60)
        self.assertEqual(record.size, FRAME.size + len(record.encode()))
    
    def test_encode__no_timestamp(self):
        
        record = RedoRecord(1, RecordKind.WRITE, 5, None, ('k1', ), b'value')
        
        self.assertIsNone(RedoRecord.decode(record.encode()).commit_ts)
    
    def test_decode__malformed(self):
        
        body = RedoRecord(1, RecordKind.ABORT, 5).encode()
        
        with self.assertRaises(ProtocolViolation):
            RedoRecord.decode(body + b'\x00')
    
    def test_stream(self):
        
        log = RedoLog(3)
        log.append(RecordKind.WRITE, 1, ('k1', ), payload=b'a')
        log.append(RecordKind.PENDING_COMMIT, 1, ('k1', ))
        log.append(RecordKind.COMMIT, 1, commit_ts=ts(10))
        log.append(RecordKind.HEARTBEAT, commit_ts=ts(20))
        
        self.assertEqual(decode_records(encode_records(log.records)), log.records)
        self.assertEqual(decode_records(log.encode()), log.records)


class RedoLogTestCase(SimpleTestCase):
    
    def test_append(self):
        
        now = [100]
        seen = []
        log = RedoLog(0, clock=lambda: now[0])
        log.subscribe(seen.append)
        
        first = log.append(RecordKind.WRITE, 1, ('k1', ), payload=b'a')
        now[0] = 250
        second = log.append(RecordKind.ABORT, 1)
        
        self.assertEqual((first.lsn, second.lsn), (1, 2))
        self.assertEqual((first.appended_at, second.appended_at), (100, 250))
        self.assertEqual(log.last_lsn, 2)
        self.assertEqual(seen, [first, second])
    
    def test_since(self):
        
        log = RedoLog(0)
        for i in range(5):
            log.append(RecordKind.HEARTBEAT, commit_ts=ts(i + 1))
        
        self.assertEqual([r.lsn for r in log.since(2)], [3, 4, 5])
        self.assertEqual([r.lsn for r in log.since(2, limit=2)], [3, 4])
        self.assertEqual(log.since(5), [])


class TrueStalenessTestCase(SimpleTestCase):
    
    def test_true_staleness(self):
        """
        Test staleness is measured from the append time of the oldest commit
        or heartbeat the replica has not applied.
        """
        
        now = [0]
        log = RedoLog(0, clock=lambda: now[0])
        log.append(RecordKind.WRITE, 1, ('k1', ), payload=b'a')
        log.append(RecordKind.PENDING_COMMIT, 1, ('k1', ))
        now[0] = 100
        log.append(RecordKind.COMMIT, 1, commit_ts=ts(100))
        now[0] = 300
        log.append(RecordKind.HEARTBEAT, commit_ts=ts(300))
        
        self.assertEqual(true_staleness(log, 0, 350), 250)
        self.assertEqual(true_staleness(log, 2, 350), 250)
        self.assertEqual(true_staleness(log, 3, 350), 50)
        self.assertEqual(true_staleness(log, 4, 350), 0)


class ReplicaStateTestCase(SimpleTestCase):
    
    def setUp(self):
        
        self.primary = ShardStore(0, DistributionMap(1), RedoLog(0))
        self.replica = ReplicaState(0, 'rep-0-1')
    
    def sync(self):
        
        for record in self.primary.log.since(self.replica.applied_lsn):
            self.replica.replay(record)
    
    def test_replay(self):
        
        self.primary.stage_write(1, 'k1', b'a', ZERO)
        self.primary.mark_committing(1)
        self.primary.finalize(1, ts(10))
        self.sync()
        
        self.assertEqual(self.replica.applied_lsn, 3)
        self.assertEqual(self.replica.max_commit_ts, ts(10))
        self.assertEqual(self.replica.replica_read_at('k1', ts(10)).version.txn_id, 1)
    
    def test_read__above_max_commit_ts(self):
        
        with self.assertRaises(ProtocolViolation):
            self.replica.replica_read_at('k1', ts(1))
    
    def test_read__blocked(self):
        """
        Test a replica read is blocked by a replayed PendingCommit that could
        still commit at or below the snapshot.
        """
        
        self.primary.append_heartbeat(ts(10))
        self.primary.stage_write(2, 'k1', b'b', ts(10))
        self.primary.mark_committing(2)
        self.primary.append_heartbeat(ts(20))
        self.sync()
        
        read = self.replica.replica_read_at('k1', ts(20))
        
        self.assertTrue(read.blocked)
        self.assertEqual(read.blocked_by, 2)
        self.assertEqual(self.replica.locked_keys, {'k1': 2})
        self.assertFalse(self.replica.replica_read_at('k1', ts(10)).blocked)
    
    def test_bypass_heartbeat(self):
        
        self.replica.bypass_heartbeat(ts(50))
        self.replica.bypass_heartbeat(ts(40))
        
        self.assertEqual(self.replica.max_commit_ts, ts(50))
        self.assertEqual(self.replica.applied_lsn, 0)


class ShippingTestCase(SimpleTestCase):
    
    def setUp(self):
        
        self.sim = Simulator(LatencyMatrix.uniform(['a', 'b'], 1000), seed=0)
        self.primary = DataNode(
            self.sim, 'dn-0', 'a', 0, DistributionMap(1), replicas=['rep-0-1'], replica_regions={'rep-0-1': 'b'},
            lags={'rep-0-1': 5000}
        )
        self.replica = ReplicaNode(self.sim, 'rep-0-1', 'b', 0, 'dn-0')
        self.primary.start()
    
    def commit(self, txn_id, key, commit_ts):
        
        store = self.primary.store
        store.stage_write(txn_id, key, b'v', ZERO)
        store.mark_committing(txn_id)
        store.finalize(txn_id, commit_ts)
    
    def test_lag(self):
        """
        Test records are held back by the configured lag, then shipped and
        acknowledged.
        """
        
        self.commit(1, 'k1', ts(10))
        
        self.sim.run_until(5999)
        self.assertEqual(self.replica.state.applied_lsn, 0)
        
        self.sim.run_until(6000)
        self.assertEqual(self.replica.state.applied_lsn, 3)
        
        self.sim.run_until(7000)
        self.assertEqual(self.primary.shippers['rep-0-1'].acked_lsn, 3)
    
    def test_resume_after_crash(self):
        """
        Test a replica that misses records while down asks for them again on
        recovery and catches up without a gap.
        """
        
        self.commit(1, 'k1', ts(10))
        self.sim.schedule(self.replica.crash, 10_000)
        self.sim.schedule(lambda: self.commit(2, 'k2', ts(20)), 11_000)
        self.sim.schedule(self.replica.recover, 20_000)
        
        self.sim.run_until(19_000)
        self.assertEqual(self.replica.state.applied_lsn, 3)
        
        self.sim.run_until(30_000)
        self.assertEqual(self.replica.state.applied_lsn, self.primary.log.last_lsn)
        self.assertEqual(self.replica.state.max_commit_ts, ts(20))
        self.assertEqual(self.replica.state.store.state_at(ts(20)), self.primary.store.state_at(ts(20)))
    
    def stage_pending(self):
        
        store = self.primary.store
        self.commit(1, 'k1', ts(5))
        store.append_heartbeat(ts(10))
        store.stage_write(2, 'k1', b'b', ts(10))
        store.mark_committing(2)
        store.append_heartbeat(ts(20))
    
    def test_replica_read__waits(self):
        """
        Test a replica read blocked by a replayed PendingCommit waits until
        the commit is shipped, then reads below it.
        """
        
        self.stage_pending()
        self.sim.run_until(7000)
        
        outcome = outcome_of(self.replica, self.replica.state.read(self.replica, 'k1', ts(20), 50_000))
        self.sim.schedule(lambda: self.primary.store.finalize(2, ts(25)), 10_000)
        
        self.sim.run_until(12_000)
        self.assertEqual(outcome, {})
        
        self.sim.run_until(30_000)
        self.assertEqual(outcome['value'].txn_id, 1)
    
    def test_replica_read__timeout(self):
        
        self.stage_pending()
        self.sim.run_until(7000)
        
        outcome = outcome_of(self.replica, self.replica.state.read(self.replica, 'k1', ts(20), 5000))
        self.sim.run_until(20_000)
        
        self.assertIsInstance(outcome['error'], ReplicaReadTimeout)
        self.assertEqual((outcome['error'].node, outcome['error'].key), ('rep-0-1', 'k1'))
    
    def test_replica_read__above_max_commit_ts(self):
        
        outcome = outcome_of(self.replica, self.replica.state.read(self.replica, 'k1', ts(1), 5000))
        self.sim.run_until(1000)
        
        self.assertIsInstance(outcome['error'], ProtocolViolation)
