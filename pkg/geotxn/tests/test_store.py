from django.test import SimpleTestCase

from geotxn.exceptions import ProtocolViolation, RoutingError, UnknownTransaction
from geotxn.replication.records import RecordKind, RedoLog, RedoRecord
from geotxn.store import DistributionMap, ShardStore, VersionState, key_index, key_name, replay_to
from geotxn.txtime.timestamps import ZERO, Mode, Timestamp


def ts(value, seq=0):
    
    return Timestamp(value, 0, Mode.GCLOCK, 1, seq)


class DistributionMapTestCase(SimpleTestCase):
    
    def test_key_names(self):
        
        self.assertEqual(key_name(12), 'k12')
        self.assertEqual(key_index('k12'), 12)
    
    def test_range(self):
        
        distribution = DistributionMap(2, 'range', key_space=10)
        
        self.assertEqual([distribution.shard_for(key_name(i)) for i in range(10)], [0] * 5 + [1] * 5)
    
    def test_hash__stable(self):
        """
        Test hash placement is a pure function of the key, and spreads keys
        over every shard.
        """
        
        a = DistributionMap(4)
        b = DistributionMap(4)
        keys = [key_name(i) for i in range(200)]
        
        self.assertEqual([a.shard_for(k) for k in keys], [b.shard_for(k) for k in keys])
        self.assertEqual({a.shard_for(k) for k in keys}, {0, 1, 2, 3})
    
    def test_keys_by_shard(self):
        
        distribution = DistributionMap(3, 'range', key_space=30)
        shards = distribution.keys_by_shard(30)
        
        self.assertEqual(shards[1][0], 'k10')
        self.assertEqual(sum(len(keys) for keys in shards.values()), 30)
    
    def test_table_for(self):
        
        distribution = DistributionMap(1, tables=4)
        
        self.assertEqual(distribution.table_for('k6'), 't2')
    
    def test_invalid(self):
        
        with self.assertRaises(ValueError):
            DistributionMap(0)
        
        with self.assertRaises(ValueError):
            DistributionMap(2, 'round_robin')
        
        with self.assertRaises(ValueError):
            DistributionMap(2, 'range')


class ShardStoreTestCase(SimpleTestCase):
    
    def setUp(self):
        
        self.now = 0
        self.log = RedoLog(0, clock=lambda: self.now)
        self.store = ShardStore(0, DistributionMap(2, 'range', key_space=10), self.log)
        self.store.set_clock(lambda: self.now)
    
    def commit(self, txn_id, key, value, commit_ts, snapshot=ZERO):
        
        self.store.stage_write(txn_id, key, value, snapshot)
        self.store.mark_committing(txn_id, validate=True)
        
        return self.store.finalize(txn_id, commit_ts)
    
    def test_read__own_pending_write(self):
        
        self.store.stage_write(1, 'k1', b'a', ZERO)
        
        own = self.store.read_at('k1', ts(100), txn_id=1)
        other = self.store.read_at('k1', ts(100), txn_id=2)
        
        self.assertEqual(own.value, b'a')
        self.assertIs(own.state, VersionState.PENDING)
        self.assertIsNone(other)
    
    def test_read__snapshot(self):
        """
        Test a read returns the version with the largest commit timestamp at
        or below the snapshot, whatever order the commits were applied in.
        """
        
        self.commit(1, 'k1', b'late', ts(20))
        self.commit(2, 'k1', b'early', ts(10), snapshot=ts(25))
        
        self.assertIsNone(self.store.read_at('k1', ts(9)))
        self.assertEqual(self.store.read_at('k1', ts(10)).value, b'early')
        self.assertEqual(self.store.read_at('k1', ts(15)).txn_id, 2)
        self.assertEqual(self.store.read_at('k1', ts(20)).txn_id, 1)
        self.assertEqual(self.store.max_commit_ts.value, 20)
    
    def test_routing(self):
        
        with self.assertRaises(RoutingError) as cm:
            self.store.stage_write(1, 'k7', b'a', ZERO)
        
        self.assertEqual(cm.exception.owner, 1)
        self.assertEqual(len(self.log), 0)
    
    def test_commit__records(self):
        
        self.commit(1, 'k1', b'a', ts(10))
        
        self.assertEqual(
            [r.kind for r in self.log.records], [RecordKind.WRITE, RecordKind.PENDING_COMMIT, RecordKind.COMMIT]
        )
        self.assertEqual(self.log.records[1].keys, ('k1', ))
        self.assertEqual(self.log.records[2].commit_ts, ts(10))
        self.assertEqual(self.store.applied_lsn, 3)
        self.assertEqual(self.store.locks, {})
    
    def test_conflict__concurrent_committer(self):
        """
        Test first-committer-wins: a transaction whose key is already locked
        by another committer aborts when validated.
        """
        
        self.store.stage_write(1, 'k1', b'a', ZERO)
        self.store.stage_write(2, 'k1', b'b', ZERO)
        self.store.mark_committing(1, validate=True)
        
        self.assertEqual(self.store.conflicts(2), ['k1'])
        self.assertFalse(self.store.mark_committing(2, validate=True))
        self.assertEqual(self.log.records[-1].kind, RecordKind.ABORT)
        self.assertFalse(self.store.knows(2))
    
    def test_conflict__concurrent_two_phase(self):
        """
        Test two multi-shard transactions racing on one key: the second
        PendingCommit is refused without validation, so only the first one's
        write is ever committed and its lock is never taken over.
        """
        
        self.store.stage_write(1, 'k1', b'a', ts(5))
        self.store.stage_write(2, 'k1', b'b', ts(5))
        
        self.assertTrue(self.store.mark_committing(1))
        self.assertTrue(self.store.prepare(1))
        
        self.assertFalse(self.store.mark_committing(2))
        self.assertEqual(self.log.records[-1].kind, RecordKind.ABORT)
        self.assertFalse(self.store.prepare(2))
        self.assertEqual(self.store.locks['k1'].txn_id, 1)
        
        self.store.finalize(1, ts(10))
        
        self.assertEqual(self.store.locks, {})
        self.assertEqual([v.txn_id for v in self.store.versions['k1']], [1])
    
    def test_apply__foreign_lock(self):
        
        self.store.stage_write(1, 'k1', b'a', ZERO)
        self.store.mark_committing(1)
        
        record = RedoRecord(self.store.applied_lsn + 1, RecordKind.PENDING_COMMIT, txn_id=2, keys=('k1', ))
        
        with self.assertRaises(ProtocolViolation):
            self.store.apply(record)
    
    def test_conflict__newer_version(self):
        
        self.commit(1, 'k1', b'a', ts(10))
        self.store.stage_write(2, 'k1', b'b', ts(5))
        
        self.assertFalse(self.store.prepare(2))
        self.assertEqual(self.log.records[-1].kind, RecordKind.ABORT)
    
    def test_two_phase(self):
        
        self.store.stage_write(1, 'k1', b'a', ZERO)
        self.store.mark_committing(1)
        
        self.assertTrue(self.store.prepare(1))
        self.assertEqual(self.store.in_doubt(), {1: True})
        
        self.store.finalize(1, ts(10))
        
        self.assertEqual(self.log.records[-1].kind, RecordKind.COMMIT_PREPARED)
        self.assertEqual(self.store.in_doubt(), {})
    
    def test_two_phase__abort(self):
        
        self.store.stage_write(1, 'k1', b'a', ZERO)
        self.store.mark_committing(1)
        self.store.prepare(1)
        self.store.finalize(1, None)
        
        self.assertEqual(self.log.records[-1].kind, RecordKind.ABORT_PREPARED)
        self.assertIsNone(self.store.read_at('k1', ts(100)))
    
    def test_unknown_transaction(self):
        
        with self.assertRaises(UnknownTransaction):
            self.store.mark_committing(99)
        
        with self.assertRaises(UnknownTransaction):
            self.store.finalize(99, ts(1))
        
        self.assertFalse(self.store.prepare(99))
    
    def test_blocking(self):
        """
        Test a lock only blocks reads at snapshots above the max commit
        timestamp at the time it was taken.
        """
        
        self.commit(1, 'k1', b'a', ts(10))
        self.store.stage_write(2, 'k1', b'b', ts(10))
        self.store.mark_committing(2, validate=True)
        
        self.assertIsNone(self.store.blocking_txn('k1', ts(10)))
        self.assertEqual(self.store.blocking_txn('k1', ts(11)), 2)
        self.assertIsNone(self.store.blocking_txn('k1', ts(11), txn_id=2))
        self.assertIsNone(self.store.blocking_txn('k2', ts(11)))
    
    def test_waiters(self):
        
        released = []
        self.store.stage_write(1, 'k1', b'a', ZERO)
        self.store.mark_committing(1)
        self.store.add_waiter('k1', lambda: released.append(self.store.read_at('k1', ts(50)).txn_id))
        
        self.store.finalize(1, ts(20))
        
        self.assertEqual(released, [1])
    
    def test_ddl(self):
        
        self.store.begin_ddl(5, ts(10))
        self.store.mark_committing(5)
        self.store.finalize(5, ts(30), ddl_table='t1')
        
        self.assertEqual(self.log.records[-1].kind, RecordKind.DDL)
        self.assertEqual(self.log.records[-1].payload, b't1')
        self.assertEqual(self.store.catalog, {'t1': ts(30)})
        self.assertEqual(self.store.max_commit_ts, ts(30))
    
    def test_heartbeat(self):
        
        self.store.append_heartbeat(ts(40))
        
        self.assertEqual(self.store.max_commit_ts.value, 40)
        self.assertEqual(self.store.versions, {})
    
    def test_apply__gap(self):
        
        with self.assertRaises(ProtocolViolation):
            self.store.apply(RedoRecord(2, RecordKind.HEARTBEAT, commit_ts=ts(1)))
    
    def test_stale_locks(self):
        
        self.store.stage_write(1, 'k1', b'a', ZERO)
        self.store.mark_committing(1)
        self.now = 500
        self.store.stage_write(2, 'k2', b'a', ZERO)
        self.store.mark_committing(2)
        
        self.assertEqual(self.store.stale_locks(100), {1})
        self.assertEqual(self.store.stale_locks(500), {1, 2})
    
    def test_rebuild(self):
        """
        Test replaying the durable log reproduces the committed state, and
        unresolved transactions are reported in doubt.
        """
        
        self.commit(1, 'k1', b'a', ts(10))
        self.commit(2, 'k2', b'b', ts(20))
        self.store.stage_write(3, 'k3', b'c', ZERO)
        self.store.mark_committing(3)
        self.store.prepare(3)
        
        rebuilt = ShardStore.rebuild(0, self.store.distribution, self.log)
        
        self.assertEqual(rebuilt.state_at(ts(100)), self.store.state_at(ts(100)))
        self.assertEqual(rebuilt.in_doubt(), {3: True})
        self.assertEqual(rebuilt.max_commit_ts, ts(20))
    
    def test_replay_to(self):
        
        self.commit(1, 'k1', b'a', ts(10))
        self.commit(2, 'k1', b'b', ts(20), snapshot=ts(10))
        self.commit(3, 'k2', b'c', ts(30), snapshot=ts(20))
        
        self.assertEqual(replay_to(self.log, ts(25)), {'k1': (b'b', 2)})
        self.assertEqual(replay_to(self.log, ts(30)), {'k1': (b'b', 2), 'k2': (b'c', 3)})
        self.assertEqual(replay_to(self.log, ts(5)), {})
