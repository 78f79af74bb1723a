"""
Correctness checkers over a run's ``History`` and the primaries' redo logs.
Each checker is a pure function returning a list of ``Violation`` objects,
empty when the property holds. ``logs`` may map shards either to
``RedoLog`` objects or to plain lists of ``RedoRecord`` (as loaded from an
NDJSON history file).
"""
import bisect
from collections import defaultdict
from dataclasses import dataclass, field

from geotxn.store import ShardStore
from geotxn.txtime.authority import GCLOCK_TO_GTM, GTM_TO_GCLOCK
from geotxn.txtime.timestamps import Timestamp

EXTERNAL_SERIALIZABILITY = 'external_serializability'
REPLICA_CONSISTENCY = 'replica_consistency'
MONOTONIC_FRESHNESS = 'monotonic_freshness'
BOUNDED_STALENESS = 'bounded_staleness'
CLOCK_ENVELOPE = 'clock_envelope'
TRANSITION_LIVENESS = 'transition_liveness'

CHECKS = (
    EXTERNAL_SERIALIZABILITY, REPLICA_CONSISTENCY, MONOTONIC_FRESHNESS, BOUNDED_STALENESS, CLOCK_ENVELOPE,
    TRANSITION_LIVENESS,
)

REPLICA_ROUTES = ('replica', 'mixed')

LIVENESS_WINDOW_US = 200_000


@dataclass
class Violation:
    
    check: str
    message: str
    evidence: dict = field(default_factory=dict)
    
    def as_dict(self):
        
        return {'check': self.check, 'message': self.message, 'evidence': self.evidence}


def _invokes(history):
    
    return {e.txn_id: e for e in history.of_kind('invoke') if e.txn_id is not None}


def _records(log):
    
    return getattr(log, 'records', log)


def _replayed_stores(logs):
    
    stores = {}
    for shard, log in logs.items():
        store = ShardStore(shard)
        for record in _records(log):
            store.apply(record)
        
        stores[shard] = store
    
    return stores


def _visible_writes(history):
    """
    Return the visible commits by txn id, and per key the visibility times
    with the running maximum commit timestamp (and its writer) behind each.
    """
    
    commits = {}
    by_key = defaultdict(list)
    
    for event in history.of_kind('commit_visible'):
        if event.txn_id is None or event['commit_ts'] is None:
            continue
        
        commits[event.txn_id] = event
        for key in event['writes']:
            by_key[key].append((event.true_time, event['commit_ts'], event.txn_id))
    
    latest = {}
    for key, entries in by_key.items():
        entries.sort()
        times, best = [], []
        top = None
        for visible_at, commit_ts, txn_id in entries:
            if top is None or commit_ts > top[0]:
                top = (commit_ts, txn_id)
            times.append(visible_at)
            best.append(top)
        
        latest[key] = (times, best)
    
    return commits, latest


def _missed_write(read, invoke, latest):
    
    if invoke['route'] != 'primary' or read['route'] != 'primary' or read['key'] not in latest:
        return None
    
    started_at = invoke['started_at']
    times, best = latest[read['key']]
    index = bisect.bisect_left(times, started_at)
    if not index:
        return None
    
    required_ts, trx1 = best[index - 1]
    version_ts = read['version_ts']
    if version_ts is not None and version_ts >= required_ts:
        return None
    
    return Violation(
        EXTERNAL_SERIALIZABILITY,
        f'Txn {read.txn_id} missed the committed write of txn {trx1} to {read["key"]}.',
        {'trx1': trx1, 'trx2': read.txn_id, 'key': read['key'], 'required_ts': required_ts,
         'returned_ts': version_ts, 'writer': read['writer'], 'started_at': started_at}
    )


def check_external_serializability(history):
    """
    Check both halves of external serializability on the recorded history:
    
    * a read issued on the primaries by a transaction invoked after some
      ``Trx1`` became visible must return ``Trx1``'s write to that key or a
      later one;
    * no read, on any route, may return a write whose transaction had not
      yet requested its commit when the reading transaction was invoked.
    
    A commit takes effect somewhere between its timestamp request and its
    visibility, so a reader invoked inside that window may see it or not.
    """
    
    invokes = _invokes(history)
    commits, latest = _visible_writes(history)
    violations = []
    
    for read in history.of_kind('read_return'):
        invoke = invokes.get(read.txn_id)
        if invoke is None:
            continue
        
        missed = _missed_write(read, invoke, latest)
        if missed is not None:
            violations.append(missed)
        
        writer = read['writer']
        writer_commit = commits.get(writer)
        if writer_commit is not None and writer_commit['requested_at'] > invoke.true_time:
            violations.append(Violation(
                EXTERNAL_SERIALIZABILITY,
                f'Txn {read.txn_id} read the write of txn {writer}, which had not yet requested its commit.',
                {'trx1': writer, 'trx2': read.txn_id, 'key': read['key'],
                 'requested_at': writer_commit['requested_at'], 'invoked_at': invoke.true_time}
            ))
    
    return violations


def check_replica_consistency(history, logs):
    """
    Check every read served by a replica against the brute-force oracle: the
    primary's full log replayed and read at the query's snapshot. A replica
    read must return exactly the writer the oracle does, so a partially
    visible multi-shard transaction shows up as a mismatch.
    """
    
    stores = _replayed_stores(logs)
    violations = []
    
    for read in history.of_kind('read_return'):
        if read['route'] != 'replica':
            continue
        
        snapshot = Timestamp(read['snapshot'])
        expected = None
        for store in stores.values():
            version = store.read_at(read['key'], snapshot)
            if version is not None:
                expected = version.txn_id
                break
        
        if read['writer'] != expected:
            violations.append(Violation(
                REPLICA_CONSISTENCY,
                f'{read["node"]} returned {read["key"]} from txn {read["writer"]} at snapshot {read["snapshot"]}; '
                f'the primary log says txn {expected}.',
                {'txn_id': read.txn_id, 'node': read['node'], 'key': read['key'], 'snapshot': read['snapshot'],
                 'returned': read['writer'], 'expected': expected}
            ))
    
    return violations


def check_monotonic_freshness(history):
    """
    Check that each client's completed replica-routed queries see
    non-decreasing snapshots, in invocation order.
    """
    
    completed = {e.txn_id for e in history.of_kind('commit_visible')}
    last = {}
    violations = []
    
    queries = [e for e in history.of_kind('invoke') if e['route'] in REPLICA_ROUTES and e.txn_id in completed]
    queries.sort(key=lambda e: (e.true_time, e.seq))
    
    for query in queries:
        client = query['client']
        previous = last.get(client)
        
        if previous is not None and query['snapshot'] < previous['snapshot']:
            violations.append(Violation(
                MONOTONIC_FRESHNESS,
                f'Client {client} read at snapshot {query["snapshot"]} after already reading at '
                f'{previous["snapshot"]}.',
                {'client': client, 'txn_id': query.txn_id, 'snapshot': query['snapshot'],
                 'previous_txn_id': previous.txn_id, 'previous_snapshot': previous['snapshot']}
            ))
        else:
            last[client] = query
    
    return violations


def check_bounded_staleness(history, metrics_interval_us, default_bound_us=None):
    """
    Check that no replica read was staler than its query's bound plus one
    metrics interval, measured against the oracle staleness recorded when
    the replica served it. Queries without a bound are not checked.
    """
    
    invokes = _invokes(history)
    violations = []
    
    for read in history.of_kind('read_return'):
        if read['route'] != 'replica':
            continue
        
        invoke = invokes.get(read.txn_id)
        bound = invoke.get('staleness_bound') if invoke is not None else None
        if bound is None:
            bound = default_bound_us
        if bound is None:
            continue
        
        if read['true_staleness'] > bound + metrics_interval_us:
            violations.append(Violation(
                BOUNDED_STALENESS,
                f'{read["node"]} served {read["key"]} {read["true_staleness"]}us stale; the bound was {bound}us.',
                {'txn_id': read.txn_id, 'node': read['node'], 'key': read['key'],
                 'true_staleness': read['true_staleness'], 'bound': bound, 'slack': metrics_interval_us}
            ))
    
    return violations


def check_clock_envelope(envelope_checks, envelope_violations):
    """
    Check that every clock reading taken during the run contained true time.
    """
    
    if not envelope_violations:
        return []
    
    return [Violation(
        CLOCK_ENVELOPE,
        f'{envelope_violations} of {envelope_checks} clock readings did not contain true time.',
        {'checks': envelope_checks, 'violations': envelope_violations}
    )]


def _idle_windows(commit_times, direction, started_at, finished_at, window_us):
    
    violations = []
    window_start = started_at
    
    while True:
        window_end = window_start + window_us
        index = bisect.bisect_left(commit_times, window_start)
        if index == len(commit_times) or commit_times[index] >= window_end:
            violations.append(Violation(
                TRANSITION_LIVENESS,
                f'No commit completed between t={window_start} and t={window_end} during the '
                f'{direction} transition.',
                {'direction': direction, 'window_start': window_start, 'window_end': window_end}
            ))
        
        window_start = window_end
        if window_start >= finished_at:
            return violations


def check_transition_liveness(history, transitions, window_us=LIVENESS_WINDOW_US):
    """
    Check that commits kept completing while the cluster changed mode: every
    ``window_us`` window from a transition's start to its end must hold at
    least one visible commit. A transition into GTM mode must also not abort
    anything as a stale GTM straggler, and such aborts are only expected
    after a transition out of GTM mode has begun.
    
    ``transitions`` is a list of dicts with ``direction``, ``started_at``
    and ``finished_at`` (``None`` if it never finished).
    """
    
    commit_times = sorted(e.true_time for e in history.of_kind('commit_visible'))
    stale_aborts = [e for e in history.of_kind('abort') if e['reason'] == 'stale_gtm']
    end_of_history = max((e.true_time for e in history), default=0)
    violations = []
    
    for transition in transitions:
        direction = transition['direction']
        started_at = transition['started_at']
        finished_at = transition.get('finished_at')
        if finished_at is None:
            finished_at = end_of_history
        
        violations.extend(_idle_windows(commit_times, direction, started_at, finished_at, window_us))
        
        if direction != GCLOCK_TO_GTM:
            continue
        
        for abort in stale_aborts:
            if started_at <= abort.true_time <= finished_at:
                violations.append(Violation(
                    TRANSITION_LIVENESS,
                    f'Txn {abort.txn_id} aborted as a stale GTM transaction while moving into GTM mode.',
                    {'direction': GCLOCK_TO_GTM, 'txn_id': abort.txn_id, 'at': abort.true_time}
                ))
    
    departures = sorted(t['started_at'] for t in transitions if t['direction'] == GTM_TO_GCLOCK)
    for abort in stale_aborts:
        if not departures or abort.true_time < departures[0]:
            violations.append(Violation(
                TRANSITION_LIVENESS,
                f'Txn {abort.txn_id} aborted as a stale GTM transaction with no transition out of GTM mode.',
                {'txn_id': abort.txn_id, 'at': abort.true_time}
            ))
    
    return violations
