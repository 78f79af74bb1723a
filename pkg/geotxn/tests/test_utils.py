from django.test import SimpleTestCase

from geotxn.utils.logs import Loggable
from geotxn.utils.mon import M, Mon, mon
from geotxn.utils.table import Table


class TableTestCase(SimpleTestCase):
    
    def test_build_table(self):
        
        table = Table(headings=['Name', 'Value'], max_width=40)
        table.add_rows([['a', 1.5], ['bb', 10]])
        
        self.assertEqual(table.build_table(), '\n'.join([
            '+--------------+',
            '| Name | Value |',
            '+--------------+',
            '| a    | 1.500 |',
            '| bb   |    10 |',
            '+--------------+',
        ]))
    
    def test_build_table__truncated(self):
        """
        Test the widest column is narrowed to fit the maximum width, and the
        values that no longer fit are truncated.
        """
        
        table = Table(headings=['Name', 'Value'], max_width=15)
        table.add_row(['a', 1.5])
        
        lines = table.build_table().split('\n')
        
        self.assertEqual(lines[1], '| Name | V... |')
        self.assertEqual(lines[3], '| a    | 1... |')
    
    def test_build_table__too_narrow(self):
        
        table = Table(headings=['Name', 'Value'], max_width=10)
        
        with self.assertRaises(ValueError):
            table.build_table()
    
    def test_add_row__column_mismatch(self):
        
        table = Table(headings=['Name', 'Value'])
        
        with self.assertRaises(ValueError):
            table.add_row(['a'])
    
    def test_format_value(self):
        
        table = Table(precision=1)
        
        self.assertEqual(table.format_value(2.25), '2.2')
        self.assertEqual(table.format_value(True), 'True')
        self.assertEqual(table.format_value(None), 'None')
        self.assertEqual(table.format_value('a\nb'), 'a\\nb')
    
    def test_title_and_footer(self):
        
        table = Table(headings=['Name', 'Value'], title='Run', footer='done', max_width=40)
        table.add_row(['a', 1])
        table.add_row(Table.HR)
        
        lines = table.build_table().split('\n')
        
        self.assertEqual(lines[1].strip('| '), 'Run')
        self.assertEqual(len(lines[1]), 16)
        self.assertEqual(lines[-2], '|         done |')
        self.assertEqual(len(lines), 10)


class MonitorTestCase(SimpleTestCase):
    
    def test_record(self):
        
        m = M('commit')
        m.record(5)
        m.record(10)
        
        self.assertEqual(m.stats, {'count': 2, 'min': 5, 'max': 10, 'avg': 7.5, 'total': 15})
    
    def test_record__propagate(self):
        
        root = M('run')
        child = root.child('commit')
        child.record(40, propagate=True)
        child.record(60)
        
        self.assertIs(root.child('commit'), child)
        self.assertEqual(root.stats['total'], 40)
        self.assertEqual(child.stats['total'], 100)
        self.assertEqual(root.as_dict()['children']['commit']['count'], 2)
    
    def test_stop__not_started(self):
        
        with self.assertRaises(Exception):
            M('commit').stop()
    
    def test_build_table(self):
        
        root = M('run')
        root.child('commit').record(3000, propagate=True)
        root.child('read').record(1000, propagate=True)
        
        output = root.build_table('Phases')
        
        self.assertIn('Phases', output)
        self.assertLess(output.index('commit'), output.index('read'))
        self.assertIn('75.00%', output)
        self.assertIn('over 2 records', output)
    
    def test_mon(self):
        
        monitors = Mon()
        monitors.start('build')
        
        with self.assertRaises(ValueError):
            monitors.start('build')
        
        monitors.stop('build')
        
        with self.assertRaises(Exception):
            monitors.stop('build')
        
        self.assertEqual(list(monitors.as_dict()), ['build'])
    
    def test_mon_decorator(self):
        
        class Runner:
            
            def __init__(self):
                
                self.monitors = Mon()
            
            @mon('simulate')
            def run(self):
                """Run it."""
                
                return 42
        
        runner = Runner()
        
        self.assertEqual(runner.run(), 42)
        self.assertEqual(runner.run.__doc__, 'Run it.')
        self.assertEqual(runner.monitors.root.children['simulate'].stats['count'], 1)
        self.assertEqual(runner.monitors.monitors, {})


class LoggableTestCase(SimpleTestCase):
    
    def setUp(self):
        
        self.obj = Loggable()
    
    def test_log(self):
        
        self.obj.start_log('transition')
        self.obj.log('one', 'two')
        name, lines = self.obj.end_log()
        
        self.assertEqual(name, 'transition')
        self.assertEqual(lines, ['one', 'two'])
        self.assertEqual(self.obj.get_log('transition'), 'one\ntwo')
        self.assertEqual(self.obj.get_log_names(), ['transition'])
    
    def test_log__nested(self):
        """
        Test starting a second log makes it active until it ends, after
        which the first log is active again.
        """
        
        self.obj.start_log('outer')
        self.obj.log('a')
        self.obj.start_log('inner')
        self.obj.log('b')
        self.obj.end_log()
        self.obj.log('c')
        self.obj.end_log()
        
        self.assertEqual(self.obj.get_log('inner', raw=True), ['b'])
        self.assertEqual(self.obj.get_log('outer', raw=True), ['a', 'c'])
        self.assertEqual(self.obj.get_last_log(), 'a\nc')
    
    def test_log__tags(self):
        
        self.obj.start_log('replay')
        self.obj.log('step', tag='step')
        self.obj.log('bad', tag='anomaly')
        self.obj.end_log()
        
        self.assertEqual(self.obj.get_log('replay', tags=['anomaly']), 'bad')
        self.assertEqual(self.obj.get_log('replay', tags=['anomaly'], raw=True)[0].tags, ('anomaly', ))
    
    def test_discard_log(self):
        
        self.obj.start_log('dropped')
        self.obj.discard_log()
        
        self.assertFalse(self.obj.has_active_log())
        
        with self.assertRaises(KeyError):
            self.obj.get_log('dropped')
    
    def test_errors(self):
        
        with self.assertRaises(KeyError):
            self.obj.log('x')
        
        with self.assertRaises(KeyError):
            self.obj.end_log()
        
        with self.assertRaises(KeyError):
            self.obj.get_last_log()
        
        self.obj.start_log('a')
        with self.assertRaises(ValueError):
            self.obj.start_log('a')
    
    def test_log__simulated_time(self):
        
        class Clocked(Loggable):
            
            now = 1500
            
            def log_time(self):
                
                return self.now
        
        obj = Clocked()
        obj.start_log('transition')
        obj.log('entered DUAL mode')
        obj.end_log()
        
        line = obj.get_log('transition', raw=True)[0]
        
        self.assertEqual(line, 't=1500 entered DUAL mode')
        self.assertEqual(line.t, 1500)
