import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings

from geotxn.config import (
    BUNDLED_SCENARIOS, apply_override, find_scenario, load_scenario, parse_number, validate_scenario
)
from geotxn.exceptions import ConfigError
from geotxn.txtime.timestamps import Mode
from geotxn.utils.tests import small_scenario


class LoadScenarioTestCase(SimpleTestCase):
    
    def test_bundled(self):
        """
        Test every bundled scenario loads and validates.
        """
        
        paths = sorted(BUNDLED_SCENARIOS.glob('*.toml'))
        self.assertTrue(paths)
        
        for path in paths:
            config = load_scenario(path.stem)
            
            self.assertEqual(config.name, path.stem)
    
    def test_overrides(self):
        
        config = load_scenario('transition_to_gclock', {
            'seed': 42,
            'topology.gtm_extra_delay_ms': 10,
            'workloads.0.clients': 2,
        })
        
        self.assertEqual(config.seed, 42)
        self.assertEqual(config.topology.gtm_extra_delay_ms, 10.0)
        self.assertEqual(config.workloads[0].clients, 2)
    
    def test_conversions(self):
        
        config = load_scenario('transition_to_gclock')
        
        self.assertEqual(config.duration_us, 2_000_000)
        self.assertIs(config.initial_mode, Mode.GTM)
        self.assertEqual(config.modes.transitions[0].direction, 'gtm_to_gclock')
        self.assertEqual(config.workload_specs()[0].think_time_us, 5000)
        self.assertEqual(config.workload_specs()[0].duration_us, 2_000_000)
    
    def test_find_scenario__missing(self):
        
        with self.assertRaisesRegex(ConfigError, 'not found'):
            find_scenario('no_such_scenario')
    
    def test_find_scenario__configured_dir(self):
        
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'mine.toml'
            path.write_text('name = "mine"\nduration_ms = 10\n')
            
            with override_settings(GEOTXN_SCENARIO_DIRS=[directory]):
                self.assertEqual(find_scenario('mine'), path)
                self.assertEqual(load_scenario('mine.toml').duration_us, 10_000)
            
            self.assertEqual(find_scenario(str(path)), path)
    
    def test_malformed_toml(self):
        
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'broken.toml'
            path.write_text('name = \n')
            
            with self.assertRaisesRegex(ConfigError, 'Cannot parse'):
                load_scenario(str(path))


class ValidateScenarioTestCase(SimpleTestCase):
    
    def test_unknown_key(self):
        
        with self.assertRaisesRegex(ConfigError, 'topology.shard_count'):
            validate_scenario({'topology': {'shard_count': 3}})
    
    def test_invalid_values(self):
        
        invalid = [
            {'kind': 'benchmark'},
            {'duration_ms': 0},
            {'modes': {'initial': 'dual'}},
            {'modes': {'transitions': [{'at_ms': 10, 'direction': 'sideways'}]}},
            {'topology': {'regions': ['a'], 'gtm_region': 'b'}},
            {'topology': {'regions': ['a'], 'latency_ms': {'a->z': 10}}},
            {'replication': {'mode': 'sync'}},
            {'workloads': [{'arrival': 'poisson'}]},
            {'faults': [{'kind': 'meteor_strike', 'target': 'dn-0', 'at_ms': 10}]},
        ]
        
        for data in invalid:
            with self.assertRaises(ConfigError, msg=data):
                validate_scenario(data)
    
    def test_latency_matrix(self):
        """
        Test links carry their configured one-way delay in both directions
        unless both are given, and unlisted links use the default.
        """
        
        config = validate_scenario({'topology': {
            'regions': ['a', 'b', 'c'], 'latency_ms': {'a->b': 10, 'b->c': 30, 'c->b': 35}, 'default_latency_ms': 25,
            'intra_region_latency_ms': 0.5,
        }})
        
        matrix = config.topology.latency_matrix()
        
        self.assertEqual(matrix.delay('a', 'b'), 10_000)
        self.assertEqual(matrix.delay('b', 'a'), 10_000)
        self.assertEqual(matrix.delay('a', 'c'), 25_000)
        self.assertEqual(matrix.delay('b', 'c'), 30_000)
        self.assertEqual(matrix.delay('c', 'b'), 35_000)
        self.assertEqual(matrix.delay('c', 'c'), 500)
    
    def test_latency_matrix__three_city(self):
        
        matrix = load_scenario('three_city').topology.latency_matrix()
        
        self.assertEqual(matrix.delay('east', 'central'), 25_000)
        self.assertEqual(matrix.delay('central', 'west'), 35_000)
        self.assertEqual(matrix.delay('west', 'east'), 55_000)
    
    def test_small_scenario(self):
        
        config = small_scenario(modes__initial='gclock', workloads__0__clients=3)
        
        self.assertIs(config.initial_mode, Mode.GCLOCK)
        self.assertEqual(config.workloads[0].clients, 3)
        self.assertEqual(config.topology.shards, 2)


class OverrideTestCase(SimpleTestCase):
    
    def test_apply_override(self):
        
        data = {'workloads': [{'clients': 1}]}
        
        apply_override(data, 'topology.shards', 4)
        apply_override(data, 'workloads.0.clients', 8)
        
        self.assertEqual(data, {'workloads': [{'clients': 8}], 'topology': {'shards': 4}})
    
    def test_apply_override__invalid(self):
        
        data = {'seed': 1, 'workloads': []}
        
        with self.assertRaises(ConfigError):
            apply_override(data, 'seed.value', 2)
        
        with self.assertRaises(ConfigError):
            apply_override(data, 'workloads.3.clients', 2)
        
        with self.assertRaises(ConfigError):
            apply_override(data, 'workloads.x', 2)
    
    def test_parse_number(self):
        
        self.assertEqual(parse_number('12'), 12)
        self.assertIsInstance(parse_number('12'), int)
        self.assertEqual(parse_number('0.25'), 0.25)
        
        with self.assertRaises(ConfigError):
            parse_number('fast')
