import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from geotxn.conf import get_setting
from geotxn.config import apply_override, load_scenario, parse_number, read_scenario, validate_scenario
from geotxn.exceptions import ConfigError
from geotxn.reports import run_scenario, summary_row, summary_table, write_run, write_summary
from geotxn.verify import checkers
from geotxn.verify.history import load_ndjson

LOG_LEVELS = {
    0: logging.ERROR,
    1: logging.WARNING,
    2: logging.INFO,
    3: logging.DEBUG,
}

# Exit codes
PASSED = 0
CHECKS_FAILED = 1
BAD_CONFIG = 2


def _parse_setting(text):
    
    key, sep, value = text.partition('=')
    if not sep or not key:
        raise ConfigError(f'"{text}" is not a key=value setting.')
    
    lowered = value.lower()
    if lowered in ('true', 'false'):
        return key, lowered == 'true'
    
    try:
        return key, parse_number(value)
    except ConfigError:
        return key, value


class Command(BaseCommand):
    
    help = (
        'Run a geo-distributed transaction scenario, sweep one of its parameters, or re-check a recorded '
        'history. Exits 0 when every enabled check passes, 1 when one fails and 2 on a bad configuration.'
    )
    
    def add_arguments(self, parser):
        
        subparsers = parser.add_subparsers(dest='action', required=True)
        
        run = subparsers.add_parser('run', help='Run a scenario once.')
        run.add_argument('scenario', help='A scenario file, or the name of a bundled or configured scenario.')
        run.add_argument('--seed', type=int, help='Override the scenario seed.')
        run.add_argument('--out', help='Output directory (default: GEOTXN_OUTPUT_DIR/<scenario>).')
        run.add_argument(
            '--set', action='append', default=[], dest='overrides', metavar='KEY=VALUE',
            help='Override a scenario setting by its dotted key. May be repeated.'
        )
        run.add_argument('--no-history', action='store_true', help='Do not write history.ndjson.')
        
        sweep = subparsers.add_parser('sweep', help='Run a scenario once per value of one parameter.')
        sweep.add_argument('scenario')
        sweep.add_argument('--param', required=True, help='The dotted key of the swept setting.')
        sweep.add_argument('--values', required=True, help='Comma-separated values.')
        sweep.add_argument('--seed', type=int)
        sweep.add_argument('--out')
        sweep.add_argument('--no-history', action='store_true')
        
        check = subparsers.add_parser('check', help='Re-run the history checkers on a history.ndjson file.')
        check.add_argument('history', help='A history file written by a previous run.')
        check.add_argument(
            '--metrics-interval-ms', type=float, default=100.0,
            help='Staleness slack allowed on top of each query bound (default: 100).'
        )
    
    def configure_logging(self, verbosity):
        
        logging.getLogger('geotxn').setLevel(LOG_LEVELS.get(verbosity, logging.DEBUG))
    
    def output_dir(self, out, name):
        
        if out:
            return Path(out)
        
        return Path(get_setting('OUTPUT_DIR')) / name
    
    def handle(self, *args, **options):
        
        self.verbosity = options['verbosity']
        self.configure_logging(self.verbosity)
        
        action = options['action']
        
        try:
            if action == 'run':
                passed = self.handle_run(options)
            elif action == 'sweep':
                passed = self.handle_sweep(options)
            else:
                passed = self.handle_check(options)
        except ConfigError as e:
            raise CommandError(str(e), returncode=BAD_CONFIG)
        
        if not passed:
            raise CommandError('One or more checks failed.', returncode=CHECKS_FAILED)
    
    def handle_run(self, options):
        
        overrides = dict(_parse_setting(s) for s in options['overrides'])
        if options['seed'] is not None:
            overrides['seed'] = options['seed']
        
        config = load_scenario(options['scenario'], overrides)
        out_dir = self.output_dir(options['out'] or config.output.dir, config.name)
        
        report, result = run_scenario(config)
        write_run(out_dir, report, result, history=config.output.history and not options['no_history'])
        
        self.stdout.write(summary_table(report))
        if result is not None and self.verbosity >= 2:
            self.stdout.write(result.phases.build_table('Commit phases (simulated time)'))
        
        self.stdout.write(f'Reports written to {out_dir}')
        
        return report['passed']
    
    def handle_sweep(self, options):
        
        values = [v.strip() for v in options['values'].split(',') if v.strip()]
        if not values:
            raise ConfigError('--values needs at least one value.')
        
        name = read_scenario(options['scenario']).get('name', Path(options['scenario']).stem)
        out_dir = self.output_dir(options['out'], f'{name}-sweep')
        
        # Validate every point before running any of them
        configs = []
        for value in values:
            point = read_scenario(options['scenario'])
            if options['seed'] is not None:
                point['seed'] = options['seed']
            
            _, parsed = _parse_setting(f'{options["param"]}={value}')
            apply_override(point, options['param'], parsed)
            configs.append((value, validate_scenario(point)))
        
        rows = []
        for value, config in configs:
            report, result = run_scenario(config)
            write_run(out_dir / value, report, result, history=config.output.history and not options['no_history'])
            rows.append(summary_row(value, report))
            
            self.stdout.write(summary_table(report))
        
        path = write_summary(out_dir, rows)
        self.stdout.write(f'Sweep summary written to {path}')
        
        return all(row[1] for row in rows)
    
    def handle_check(self, options):
        
        path = Path(options['history'])
        try:
            with path.open() as f:
                history, logs = load_ndjson(f)
        except OSError as e:
            raise ConfigError(f'Cannot read {path}: {e}')
        except ValueError as e:
            raise ConfigError(f'{path}: {e}')
        
        interval = int(options['metrics_interval_ms'] * 1000)
        found = {
            checkers.EXTERNAL_SERIALIZABILITY: checkers.check_external_serializability(history),
            checkers.REPLICA_CONSISTENCY: checkers.check_replica_consistency(history, logs),
            checkers.MONOTONIC_FRESHNESS: checkers.check_monotonic_freshness(history),
            checkers.BOUNDED_STALENESS: checkers.check_bounded_staleness(history, interval),
        }
        
        for check, violations in found.items():
            if violations:
                self.stdout.write(f'{check}: {len(violations)} violations')
                for violation in violations[:10]:
                    self.stdout.write(f'  {violation.message}')
            else:
                self.stdout.write(f'{check}: ok')
        
        return not any(found.values())
