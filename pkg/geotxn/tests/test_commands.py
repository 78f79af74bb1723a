import csv
import io
import json
import tempfile
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from geotxn.management.commands.geotxn import BAD_CONFIG, CHECKS_FAILED, _parse_setting
from geotxn.utils.tests import build_history
from geotxn.verify.history import dump_ndjson


class ParseSettingTestCase(SimpleTestCase):
    
    def test_parse_setting(self):
        
        self.assertEqual(_parse_setting('seed=3'), ('seed', 3))
        self.assertEqual(_parse_setting('replication.lag_ms=2.5'), ('replication.lag_ms', 2.5))
        self.assertEqual(_parse_setting('modes.enable_dual_wait=True'), ('modes.enable_dual_wait', True))
        self.assertEqual(_parse_setting('modes.initial=gclock'), ('modes.initial', 'gclock'))


class GeotxnCommandTestCase(SimpleTestCase):
    
    def setUp(self):
        
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)
        self.stdout = io.StringIO()
    
    def tearDown(self):
        
        self.tmp.cleanup()
    
    def call(self, *args):
        
        call_command('geotxn', *args, stdout=self.stdout, verbosity=0)
    
    def test_run(self):
        
        self.call('run', 'rcp_example', '--out', str(self.out))
        
        report = json.loads((self.out / 'report.json').read_text())
        
        self.assertTrue(report['passed'])
        self.assertEqual(report['schema_version'], 1)
        self.assertEqual(report['kind'], 'rcp_example')
        self.assertIn('PASS', self.stdout.getvalue())
    
    def test_run__checks_failed(self):
        """
        Test a run whose checks fail exits with its own code, still writing
        the report.
        """
        
        with self.assertRaises(CommandError) as cm:
            self.call('run', 'dual_anomaly', '--out', str(self.out), '--set', 'anomaly.runs=3')
        
        self.assertEqual(cm.exception.returncode, CHECKS_FAILED)
        
        report = json.loads((self.out / 'report.json').read_text())
        self.assertEqual(report['anomalies'], 3)
    
    def test_run__overrides(self):
        
        self.call(
            'run', 'dual_anomaly', '--out', str(self.out), '--seed', '10', '--set', 'anomaly.runs=2',
            '--set', 'modes.enable_dual_wait=true'
        )
        
        report = json.loads((self.out / 'report.json').read_text())
        
        self.assertEqual(report['seed'], 10)
        self.assertTrue(report['enable_dual_wait'])
        self.assertEqual(report['runs'], 2)
    
    def test_run__bad_config(self):
        
        with self.assertRaises(CommandError) as cm:
            self.call('run', 'rcp_example', '--out', str(self.out), '--set', 'topology.shard_count=3')
        
        self.assertEqual(cm.exception.returncode, BAD_CONFIG)
        self.assertFalse((self.out / 'report.json').exists())
    
    def test_run__missing_scenario(self):
        
        with self.assertRaises(CommandError) as cm:
            self.call('run', 'no_such_scenario')
        
        self.assertEqual(cm.exception.returncode, BAD_CONFIG)
    
    def test_sweep(self):
        """
        Test a sweep writes one report per value and a summary with one row
        per value.
        """
        
        self.call('sweep', 'dual_anomaly', '--param', 'modes.enable_dual_wait', '--values', 'true', '--out',
                  str(self.out))
        
        self.assertTrue((self.out / 'true' / 'report.json').is_file())
        
        with open(self.out / 'summary.csv', newline='') as f:
            rows = list(csv.reader(f))
        
        self.assertEqual(rows[0][:2], ['value', 'passed'])
        self.assertEqual(rows[1][:2], ['true', 'True'])
    
    def test_sweep__bad_value(self):
        """
        Test every point is validated before any of them runs.
        """
        
        with self.assertRaises(CommandError) as cm:
            self.call('sweep', 'rcp_example', '--param', 'duration_ms', '--values', '100,-5', '--out', str(self.out))
        
        self.assertEqual(cm.exception.returncode, BAD_CONFIG)
        self.assertFalse((self.out / '100').exists())
    
    def write_history(self, *events):
        
        path = self.out / 'history.ndjson'
        with open(path, 'w') as f:
            dump_ndjson(f, build_history(*events))
        
        return str(path)
    
    def test_check(self):
        
        path = self.write_history(
            ('invoke', 100, 1, {'client': 'c1', 'route': 'primary', 'snapshot': 0, 'started_at': 100}),
            ('commit_visible', 200, 1, {'client': 'c1', 'commit_ts': 150, 'requested_at': 150, 'writes': ['k1']}),
        )
        
        self.call('check', path)
        
        self.assertIn('external_serializability: ok', self.stdout.getvalue())
    
    def test_check__violations(self):
        
        path = self.write_history(
            ('commit_visible', 100, 1, {'client': 'c1', 'commit_ts': 50, 'requested_at': 90, 'writes': ['k1']}),
            ('invoke', 200, 2, {'client': 'c1', 'route': 'primary', 'snapshot': 40, 'started_at': 200}),
            ('read_return', 210, 2, {'key': 'k1', 'writer': None, 'version_ts': None, 'route': 'primary'}),
        )
        
        with self.assertRaises(CommandError) as cm:
            self.call('check', path)
        
        self.assertEqual(cm.exception.returncode, CHECKS_FAILED)
        self.assertIn('external_serializability: 1 violations', self.stdout.getvalue())
    
    def test_check__unreadable(self):
        
        with self.assertRaises(CommandError) as cm:
            self.call('check', str(self.out / 'missing.ndjson'))
        
        self.assertEqual(cm.exception.returncode, BAD_CONFIG)
