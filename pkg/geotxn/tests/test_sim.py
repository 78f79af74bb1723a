from django.test import SimpleTestCase

from geotxn.exceptions import (
    EngineStopped, ReadTimeout, ReplicaReadTimeout, RoutingError, RpcTimeout, ShardUnavailable, UnknownTarget,
    WriteConflict
)
from geotxn.sim import FaultSpec, LatencyMatrix, Simulator
from geotxn.utils.tests import EchoNode, outcome_of


def two_region_sim(seed=0, jitter=0.0, trace=True):
    
    delays = {('a', 'a'): 10, ('a', 'b'): 1000, ('b', 'a'): 1000, ('b', 'b'): 10}
    sim = Simulator(LatencyMatrix(['a', 'b'], delays, jitter), seed=seed, trace=trace)
    
    return sim, EchoNode(sim, 'n-a', 'a'), EchoNode(sim, 'n-b', 'b')


class LatencyMatrixTestCase(SimpleTestCase):
    
    def test_uniform(self):
        
        matrix = LatencyMatrix.uniform(['a', 'b'], 500, intra_us=5)
        
        self.assertEqual(matrix.delay('a', 'b'), 500)
        self.assertEqual(matrix.delay('b', 'a'), 500)
        self.assertEqual(matrix.delay('a', 'a'), 5)
    
    def test_missing_entry(self):
        
        with self.assertRaisesRegex(ValueError, 'Missing latency for b -> a'):
            LatencyMatrix(['a', 'b'], {('a', 'a'): 0, ('a', 'b'): 1, ('b', 'b'): 0})
    
    def test_jitter_out_of_range(self):
        
        with self.assertRaises(ValueError):
            LatencyMatrix(['a'], {('a', 'a'): 0}, jitter_fraction=1)
    
    def test_transfer_time(self):
        """
        Test transfer time is size over bandwidth, and zero when no bandwidth
        is configured for the link.
        """
        
        matrix = LatencyMatrix(['a', 'b'], {
            ('a', 'a'): 0, ('a', 'b'): 0, ('b', 'a'): 0, ('b', 'b'): 0
        }, bandwidth={('a', 'b'): 1_000_000})
        
        self.assertEqual(matrix.transfer_time('a', 'b', 500), 500)
        self.assertEqual(matrix.transfer_time('b', 'a', 500), 0)


class SchedulingTestCase(SimpleTestCase):
    
    def test_schedule__order(self):
        """
        Test events run in time order, and events due at the same time run
        in the order they were scheduled.
        """
        
        sim = Simulator(LatencyMatrix.uniform(['a'], 0))
        fired = []
        
        sim.schedule(lambda: fired.append('late'), 200)
        sim.schedule(lambda: fired.append('first'), 100)
        sim.schedule(lambda: fired.append('second'), 100)
        sim.schedule(lambda: fired.append('third'), 100)
        
        sim.run_until(1000)
        
        self.assertEqual(fired, ['first', 'second', 'third', 'late'])
    
    def test_schedule__negative_delay(self):
        
        sim = Simulator(LatencyMatrix.uniform(['a'], 0))
        
        with self.assertRaises(ValueError):
            sim.schedule(lambda: None, -1)
    
    def test_schedule__after_finish(self):
        
        sim = Simulator(LatencyMatrix.uniform(['a'], 0))
        sim.finish()
        
        with self.assertRaises(EngineStopped):
            sim.schedule(lambda: None, 10)
    
    def test_schedule__cancelled_by_crash(self):
        """
        Test an event tied to a node does not fire once that node has crashed,
        even if it recovers before the event is due.
        """
        
        sim, node, _ = two_region_sim()
        fired = []
        
        sim.schedule(lambda: fired.append(sim.now), 500, node=node.id)
        sim.schedule(lambda: fired.append('untied'), 500)
        
        node.crash()
        node.recover()
        sim.run_until(1000)
        
        self.assertEqual(fired, ['untied'])
    
    def test_run_until__advances_clock(self):
        
        sim = Simulator(LatencyMatrix.uniform(['a'], 0))
        
        stats = sim.run_until(750)
        
        self.assertEqual(sim.now, 750)
        self.assertEqual(stats.events, 0)
    
    def test_run_until__backwards(self):
        
        sim = Simulator(LatencyMatrix.uniform(['a'], 0))
        sim.run_until(100)
        
        with self.assertRaises(ValueError):
            sim.run_until(50)
    
    def test_add_node__duplicate(self):
        
        sim, _, _ = two_region_sim()
        
        with self.assertRaises(ValueError):
            EchoNode(sim, 'n-a', 'b')
    
    def test_add_node__unknown_region(self):
        
        sim, _, _ = two_region_sim()
        
        with self.assertRaises(ValueError):
            EchoNode(sim, 'n-c', 'c')


class MessagingTestCase(SimpleTestCase):
    
    def test_call__roundtrip(self):
        
        sim, a, b = two_region_sim()
        
        outcome = outcome_of(a, a.call(b.id, 'echo', 'hello', timeout=10_000))
        sim.run_until(5000)
        
        self.assertEqual(outcome, {'value': 'hello'})
        self.assertEqual(b.received, [(1000, 'n-a', 'hello')])
        self.assertEqual(sim.stats.delivered, 2)
    
    def test_call__generator_handler(self):
        """
        Test a handler written as a generator replies once it finishes.
        """
        
        sim, a, b = two_region_sim()
        
        outcome = outcome_of(a, a.call(b.id, 'slow', 3000))
        
        sim.run_until(4999)
        self.assertEqual(outcome, {})
        
        sim.run_until(5000)
        self.assertEqual(outcome, {'value': 'done'})
    
    def test_call__remote_error(self):
        """
        Test a domain error raised by the remote handler is re-raised in the
        caller.
        """
        
        sim, a, b = two_region_sim()
        
        outcome = outcome_of(a, a.call(b.id, 'fail', ShardUnavailable(3), timeout=10_000))
        sim.run_until(5000)
        
        self.assertIsInstance(outcome['error'], ShardUnavailable)
        self.assertEqual(outcome['error'].shard, 3)
    
    def test_call__remote_error__attributes(self):
        """
        Test every domain error carrying context arrives in the caller with
        its type, attributes and message intact.
        """
        
        errors = [
            ReadTimeout('dn-0', 'k1'),
            ReplicaReadTimeout('rep-0-1', 'k2'),
            RpcTimeout('cn-1', 'dn-0', 'read'),
            RoutingError('k3', 0, 1),
            WriteConflict(12, 'k4'),
            EngineStopped(),
        ]
        
        for error in errors:
            with self.subTest(error=type(error).__name__):
                sim, a, b = two_region_sim()
                
                outcome = outcome_of(a, a.call(b.id, 'fail', error, timeout=10_000))
                sim.run_until(5000)
                
                received = outcome['error']
                self.assertIs(type(received), type(error))
                self.assertEqual(vars(received), vars(error))
                self.assertEqual(str(received), str(error))
    
    def test_call__timeout(self):
        """
        Test calling a crashed node times out, the request being dropped.
        """
        
        sim, a, b = two_region_sim()
        b.crash()
        
        outcome = outcome_of(a, a.call(b.id, 'echo', 'hello', timeout=5000))
        sim.run_until(10_000)
        
        self.assertIsInstance(outcome['error'], RpcTimeout)
        self.assertEqual(sim.stats.dropped, 1)
        self.assertEqual(b.received, [])
    
    def test_call__unknown_destination(self):
        
        sim, a, _ = two_region_sim()
        
        outcome = outcome_of(a, a.call('n-z', 'echo', 'hello', timeout=5000))
        sim.run_until(10)
        
        self.assertIsInstance(outcome['error'], UnknownTarget)
    
    def test_send__fifo(self):
        """
        Test messages on one channel arrive in the order they were sent, even
        when jitter draws a shorter delay for a later message.
        """
        
        sim, a, b = two_region_sim(seed=3, jitter=0.9)
        
        for i in range(20):
            a.send(b.id, 'echo', i)
        
        sim.run_until(10_000)
        
        self.assertEqual([payload for _, _, payload in b.received], list(range(20)))
        times = [t for t, _, _ in b.received]
        self.assertEqual(times, sorted(times))
    
    def test_send__in_flight_dropped_by_crash(self):
        
        sim, a, b = two_region_sim()
        
        a.send(b.id, 'echo', 'lost')
        sim.inject_fault(FaultSpec('node_crash', b.id, 500))
        sim.inject_fault(FaultSpec('node_recover', b.id, 600))
        sim.run_until(2000)
        
        self.assertTrue(b.alive)
        self.assertEqual(b.received, [])
        self.assertEqual(sim.stats.dropped, 1)
    
    def test_parallel(self):
        """
        Test each branch of a parallel call reports its own outcome, in
        order, and one failure does not affect the others.
        """
        
        sim, a, b = two_region_sim()
        
        outcome = outcome_of(a, a.parallel([
            a.call(b.id, 'echo', 1, timeout=5000),
            a.call(b.id, 'fail', ShardUnavailable(0), timeout=5000),
            a.call(b.id, 'echo', 3, timeout=5000),
        ]))
        sim.run_until(5000)
        
        first, second, third = outcome['value']
        
        self.assertTrue(first.ok)
        self.assertEqual(first.value, 1)
        self.assertFalse(second.ok)
        self.assertIsInstance(second.error, ShardUnavailable)
        self.assertTrue(third.ok)
        self.assertEqual(third.value, 3)
    
    def test_spawn__ends_on_crash(self):
        
        sim, a, _ = two_region_sim()
        steps = []
        
        def process():
            
            for i in range(5):
                steps.append(i)
                yield a.sleep(100)
        
        a.spawn(process())
        sim.schedule(a.crash, 250)
        sim.run_until(1000)
        
        self.assertEqual(steps, [0, 1, 2])


class FaultTestCase(SimpleTestCase):
    
    def test_link_delay_override(self):
        """
        Test a link override replaces the matrix delay until it is cleared.
        """
        
        sim, a, b = two_region_sim()
        
        sim.inject_fault(FaultSpec('link_delay_override', 'n-a->n-b', 0, {'delay_us': 5000}))
        sim.inject_fault(FaultSpec('link_delay_override', 'n-a->n-b', 10_000))
        sim.run_until(0)
        
        a.send(b.id, 'echo', 'slow')
        sim.run_until(10_000)
        a.send(b.id, 'echo', 'fast')
        sim.run_until(20_000)
        
        self.assertEqual(b.received, [(5000, 'n-a', 'slow'), (11_000, 'n-a', 'fast')])
    
    def test_link_delay_override__region(self):
        
        sim, a, b = two_region_sim()
        
        sim.inject_fault(FaultSpec('link_delay_override', 'a->b', 0, {'delay_us': 300}))
        sim.run_until(0)
        
        a.send(b.id, 'echo', 'x')
        b.send(a.id, 'echo', 'y')
        sim.run_until(5000)
        
        self.assertEqual(b.received[0][0], 300)
        self.assertEqual(a.received[0][0], 1000)
    
    def test_unknown_target(self):
        
        sim, _, _ = two_region_sim()
        
        with self.assertRaises(UnknownTarget):
            sim.inject_fault(FaultSpec('node_crash', 'n-z', 10))
        
        with self.assertRaises(UnknownTarget):
            sim.inject_fault(FaultSpec('link_delay_override', 'n-a->n-z', 10, {'delay_us': 1}))
        
        with self.assertRaises(UnknownTarget):
            sim.inject_fault(FaultSpec('link_delay_override', 'n-a', 10, {'delay_us': 1}))
    
    def test_unknown_target__no_clock_service(self):
        """
        Test desynchronising a clock is refused when nothing owns the clocks.
        """
        
        sim, _, _ = two_region_sim()
        
        with self.assertRaises(UnknownTarget):
            sim.inject_fault(FaultSpec('clock_desync', 'n-a', 10, {'offset_us': 100}))
    
    def test_unknown_kind(self):
        
        sim, _, _ = two_region_sim()
        
        with self.assertRaises(ValueError):
            sim.inject_fault(FaultSpec('meteor_strike', 'n-a', 10))
    
    def test_fault_listeners(self):
        
        sim, a, _ = two_region_sim()
        seen = []
        sim.add_fault_listener(lambda kind, node: seen.append((sim.now, kind, node.id)))
        
        sim.inject_fault(FaultSpec('node_crash', a.id, 100))
        sim.inject_fault(FaultSpec('node_crash', a.id, 150))  # already down
        sim.inject_fault(FaultSpec('node_recover', a.id, 200))
        sim.run_until(1000)
        
        self.assertEqual(seen, [(100, 'crash', 'n-a'), (200, 'recover', 'n-a')])
        self.assertEqual(a.incarnation, 2)


class DeterminismTestCase(SimpleTestCase):
    
    def traffic_digest(self, seed):
        
        sim, a, b = two_region_sim(seed=seed, jitter=0.5)
        
        for i in range(10):
            outcome_of(a, a.call(b.id, 'echo', i, timeout=10_000))
            outcome_of(b, b.call(a.id, 'slow', 50 * i, timeout=10_000))
        
        sim.run_until(20_000)
        
        return sim.trace_digest()
    
    def test_trace_digest__same_seed(self):
        
        self.assertEqual(self.traffic_digest(11), self.traffic_digest(11))
    
    def test_trace_digest__different_seed(self):
        
        self.assertNotEqual(self.traffic_digest(11), self.traffic_digest(12))
    
    def test_trace_digest__untraced(self):
        
        sim, a, b = two_region_sim(trace=False)
        a.send(b.id, 'echo', 1)
        sim.run_until(5000)
        
        self.assertIsNone(sim.trace)
        self.assertEqual(sim.trace_digest(), Simulator(LatencyMatrix.uniform(['a'], 0)).trace_digest())
