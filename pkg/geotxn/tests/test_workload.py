from django.test import SimpleTestCase

from geotxn.store import DistributionMap
from geotxn.verify.workload import READ_ONLY, OperationStream, WorkloadSpec, generate


class WorkloadSpecTestCase(SimpleTestCase):
    
    def test_invalid(self):
        
        invalid = [
            {'read_fraction': 1.5},
            {'multi_shard_fraction': -0.1},
            {'remote_fraction': 2},
            {'arrival': 'poisson'},
            {'clients': 0},
            {'keys_per_txn': 0},
            {'arrival': 'open', 'rate_per_client': 0},
        ]
        
        for kwargs in invalid:
            with self.assertRaises(ValueError, msg=kwargs):
                WorkloadSpec(**kwargs)


class OperationStreamTestCase(SimpleTestCase):
    
    def setUp(self):
        
        self.distribution = DistributionMap(4, 'range', key_space=40)
    
    def take(self, spec, count, seed=1, client=0, local_shards=()):
        
        stream = OperationStream(spec, seed, self.distribution, client, local_shards)
        
        return [next(stream) for _ in range(count)]
    
    def test_deterministic(self):
        
        spec = WorkloadSpec(key_space=40, think_time_us=500)
        
        self.assertEqual(self.take(spec, 50), self.take(spec, 50))
        self.assertNotEqual(self.take(spec, 50), self.take(spec, 50, seed=2))
        self.assertNotEqual(self.take(spec, 50), self.take(spec, 50, client=1))
    
    def test_streams_independent(self):
        """
        Test a client's operations do not depend on how many operations the
        other clients have drawn.
        """
        
        spec = WorkloadSpec(clients=3, key_space=40)
        
        operations = generate(spec, 9, self.distribution, 30)
        
        self.assertEqual(operations[1::3], self.take(spec, 10, seed=9, client=1))
        self.assertEqual([op.index for op in operations[:3]], [0, 0, 0])
    
    def test_keys(self):
        
        spec = WorkloadSpec(key_space=40, keys_per_txn=3, multi_shard_fraction=0.0)
        
        for op in self.take(spec, 100):
            self.assertEqual(len(op.keys), 3)
            self.assertEqual(list(op.keys), sorted(set(op.keys)))
            self.assertEqual(len({self.distribution.shard_for(k) for k in op.keys}), 1)
            self.assertFalse(op.multi_shard)
    
    def test_keys__multi_shard(self):
        
        spec = WorkloadSpec(key_space=40, keys_per_txn=2, multi_shard_fraction=1.0)
        
        for op in self.take(spec, 100):
            self.assertTrue(op.multi_shard)
            self.assertEqual(len({self.distribution.shard_for(k) for k in op.keys}), 2)
    
    def test_read_only_mode(self):
        
        spec = WorkloadSpec(key_space=40, read_only_mode=True, staleness_bound_us=5000)
        
        for op in self.take(spec, 50):
            self.assertEqual(op.kind, READ_ONLY)
            self.assertEqual(op.writes, ())
            self.assertEqual(op.staleness_bound, 5000)
    
    def test_read_fraction(self):
        
        writes_only = WorkloadSpec(key_space=40, read_fraction=0.0)
        
        for op in self.take(writes_only, 50):
            self.assertFalse(op.read_only)
            self.assertEqual(op.writes, op.keys)
    
    def test_remote_fraction(self):
        """
        Test a remote fraction of 0 keeps clients on their local shards, and
        1 keeps them off.
        """
        
        local = WorkloadSpec(key_space=40, multi_shard_fraction=0.0, remote_fraction=0.0)
        remote = WorkloadSpec(key_space=40, multi_shard_fraction=0.0, remote_fraction=1.0)
        
        for op in self.take(local, 50, local_shards=(2, )):
            self.assertEqual({self.distribution.shard_for(k) for k in op.keys}, {2})
        
        for op in self.take(remote, 50, local_shards=(2, )):
            self.assertNotIn(2, {self.distribution.shard_for(k) for k in op.keys})
    
    def test_arrival__closed(self):
        
        spec = WorkloadSpec(key_space=40)
        
        self.assertEqual({op.delay for op in self.take(spec, 20)}, {0})
    
    def test_arrival__open(self):
        
        spec = WorkloadSpec(key_space=40, arrival='open', rate_per_client=1000)
        delays = [op.delay for op in self.take(spec, 2000)]
        
        self.assertAlmostEqual(sum(delays) / len(delays), 1000, delta=100)
