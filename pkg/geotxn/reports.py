"""
Running a scenario and writing what it produced.

Every run writes a ``report.json`` (schema version ``SCHEMA_VERSION``) to its
output directory. Cluster runs add ``metrics.csv`` (throughput over time),
``rcp.csv`` (every published RCP) and, unless disabled, ``history.ndjson``.
A sweep writes one such directory per value plus a ``summary.csv``.
"""
import csv
import json
import logging
from pathlib import Path

import geotxn
from geotxn.cluster import Cluster
from geotxn.conf import get_setting
from geotxn.ror.example import rcp_example
from geotxn.txtime.anomaly import replay_dual_anomaly
from geotxn.utils.table import Table
from geotxn.verify.history import dump_ndjson
from geotxn.verify.metrics import throughput_series

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SUMMARY_COLUMNS = (
    'value', 'passed', 'throughput', 'latency_p50_ms', 'latency_p99_ms', 'replica_read_share', 'abort_rate',
    'violations',
)


def _header(config):
    
    return {
        'schema_version': SCHEMA_VERSION,
        'geotxn_version': geotxn.__version__,
        'scenario': config.name,
        'description': config.description,
        'kind': config.kind,
        'seed': config.seed,
    }


def cluster_report(config, result):
    
    report = _header(config)
    report.update({
        'passed': result.passed,
        'duration_us': result.duration_us,
        'metrics': result.metrics,
        'checks': result.verdicts,
        'transitions': result.transitions,
        'engine': result.engine,
        'clock': result.clock,
        'timings_s': result.timings,
        'trace_digest': result.trace_digest,
    })
    
    return report


def anomaly_report(config, replays):
    """
    Summarise a batch of DUAL-mode anomaly replays. The first anomalous
    replay (or the first replay, if none was) is included in full.
    """
    
    anomalous = [r for r in replays if r.anomaly]
    shown = anomalous[0] if anomalous else replays[0]
    
    report = _header(config)
    report.update({
        'passed': not anomalous,
        'enable_dual_wait': config.modes.enable_dual_wait,
        'runs': len(replays),
        'anomalies': len(anomalous),
        'anomalous_seeds': [r.seed for r in anomalous],
        'example': shown.as_dict(),
    })
    
    return report


def rcp_example_report(config, example):
    
    report = _header(config)
    report.update({'passed': example.match})
    report.update(example.as_dict())
    
    return report


def run_scenario(config):
    """
    Run the scenario described by ``config``. Return ``(report, result)``,
    ``result`` being the cluster's ``RunResult`` (``None`` for the scripted
    kinds).
    """
    
    if config.kind == 'dual_anomaly':
        settings = config.anomaly
        replays = [
            replay_dual_anomaly(
                config.modes.enable_dual_wait, seed=config.seed + i, randomize=settings.randomize,
                initial_mode=config.modes.initial, sync_roundtrip_us=settings.sync_roundtrip_us
            )
            for i in range(settings.runs)
        ]
        return anomaly_report(config, replays), None
    
    if config.kind == 'rcp_example':
        return rcp_example_report(config, rcp_example()), None
    
    result = Cluster(config, trace=get_setting('TRACE_EVENTS')).run()
    
    return cluster_report(config, result), result


#
# Files
#

def _rounded(value, precision):
    
    if isinstance(value, float):
        return round(value, precision)
    
    if isinstance(value, dict):
        return {k: _rounded(v, precision) for k, v in value.items()}
    
    if isinstance(value, (list, tuple)):
        return [_rounded(v, precision) for v in value]
    
    return value


def write_json(path, data):
    
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=str)
        f.write('\n')


def write_csv(path, headings, rows):
    
    precision = get_setting('REPORT_PRECISION')
    
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(headings)
        for row in rows:
            writer.writerow(_rounded(list(row), precision))


def write_run(out_dir, report, result=None, history=True):
    """
    Write the files of one run to ``out_dir`` (created if missing) and
    return their paths.
    """
    
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    
    paths = [out_dir / 'report.json']
    write_json(paths[0], report)
    
    if result is not None:
        series = throughput_series(result.history, duration_us=result.duration_us)
        paths.append(out_dir / 'metrics.csv')
        write_csv(paths[-1], ('t_ms', 'throughput'), ((t / 1000, tps) for t, tps in series))
        
        paths.append(out_dir / 'rcp.csv')
        write_csv(paths[-1], ('t_ms', 'rcp', 'epoch', 'collector', 'contributing'), (
            (e.true_time / 1000, e['ts'], e['epoch'], e['collector'], len(e['contributing']))
            for e in result.history.of_kind('rcp_publish')
        ))
        
        if history:
            paths.append(out_dir / 'history.ndjson')
            with open(paths[-1], 'w') as f:
                dump_ndjson(f, result.history, result.logs)
    
    logger.info('Wrote %s', ', '.join(str(p) for p in paths))
    
    return paths


def summary_row(value, report):
    
    metrics = report.get('metrics', {})
    violations = sum(len(c['violations']) for c in report.get('checks', {}).values())
    
    return (
        value,
        report['passed'],
        metrics.get('throughput', 0.0),
        metrics.get('latency_p50_ms', 0.0),
        metrics.get('latency_p99_ms', 0.0),
        metrics.get('replica_read_share', 0.0),
        metrics.get('abort_rate', 0.0),
        violations,
    )


def write_summary(out_dir, rows):
    
    path = Path(out_dir) / 'summary.csv'
    write_csv(path, SUMMARY_COLUMNS, rows)
    
    return path


#
# Terminal output
#

def summary_table(report):
    """
    Render the headline numbers and check verdicts of a report as a text
    table.
    """
    
    precision = get_setting('REPORT_PRECISION')
    title = f'{report["scenario"]} (seed {report["seed"]}): {"PASS" if report["passed"] else "FAIL"}'
    table = Table(headings=['Item', 'Value'], title=title, precision=precision)
    
    if report['kind'] == 'dual_anomaly':
        table.add_rows([
            ('Commit wait in DUAL mode', report['enable_dual_wait']),
            ('Replays', report['runs']),
            ('Anomalies', report['anomalies']),
        ])
        example = report['example']
        table.add_section(example['detail'])
        for step in example['steps']:
            table.add_section(step)
    elif report['kind'] == 'rcp_example':
        table.add_rows([
            ('RCP', report['rcp']),
            ('Visible', ', '.join(f'Trx{n}' for n in report['visible'])),
            ('Oracle mismatches', len(report['oracle_mismatches'])),
        ])
    else:
        metrics = report['metrics']
        table.add_rows([
            ('Throughput (txn/s)', metrics['throughput']),
            ('Latency p50 (ms)', metrics['latency_p50_ms']),
            ('Latency p99 (ms)', metrics['latency_p99_ms']),
            ('Replica read share', metrics['replica_read_share']),
            ('Abort rate', metrics['abort_rate']),
            ('Transitions', len(report['transitions'])),
        ])
        table.add_row(Table.HR)
        for check, verdict in report['checks'].items():
            if not verdict['enabled']:
                state = 'skipped'
            elif verdict['passed']:
                state = 'ok'
            else:
                state = f'{len(verdict["violations"])} violations'
            table.add_row((check, state))
    
    return table.build_table()
