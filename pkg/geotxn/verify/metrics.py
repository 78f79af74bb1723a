"""
Performance metrics derived from a run's ``History``.
"""
import numpy as np

US_PER_S = 1_000_000


def _percentile(values, q):
    
    if not values:
        return 0.0
    
    return float(np.percentile(np.asarray(values, dtype=float), q)) / 1000


def summarize(history, duration_us=None, phases=None):
    """
    Return a dict of run metrics:
    
    * ``throughput``: completed transactions and queries per simulated
      second, over ``duration_us`` (or the span of the history);
    * ``txn_throughput`` and ``query_throughput``, the same split by kind;
    * ``latency_p50_ms``/``latency_p99_ms``: invocation to completion;
    * ``replica_read_share``: the fraction of reads served by replicas;
    * ``abort_rate``: aborts over aborts plus completions;
    * ``aborts_by_reason``;
    * ``phases``: the per-phase breakdown held by the ``M`` monitor
      ``phases``, when given.
    
    An empty history yields zeros throughout.
    """
    
    invokes = {e.txn_id: e for e in history.of_kind('invoke') if e.txn_id is not None}
    completions = history.of_kind('commit_visible')
    aborts = history.of_kind('abort')
    reads = history.of_kind('read_return')
    
    if duration_us is None:
        times = [e.true_time for e in history]
        duration_us = max(times) - min(times) if times else 0
    
    seconds = duration_us / US_PER_S
    
    txns = [e for e in completions if not e.get('read_only')]
    queries = [e for e in completions if e.get('read_only')]
    
    latencies = []
    for event in completions:
        invoke = invokes.get(event.txn_id)
        if invoke is not None:
            latencies.append(event.true_time - invoke['started_at'])
    
    by_reason = {}
    for event in aborts:
        by_reason[event['reason']] = by_reason.get(event['reason'], 0) + 1
    
    finished = len(completions) + len(aborts)
    replica_reads = sum(1 for e in reads if e['route'] == 'replica')
    
    return {
        'duration_s': seconds,
        'committed': len(txns),
        'queries': len(queries),
        'aborted': len(aborts),
        'throughput': len(completions) / seconds if seconds else 0.0,
        'txn_throughput': len(txns) / seconds if seconds else 0.0,
        'query_throughput': len(queries) / seconds if seconds else 0.0,
        'latency_p50_ms': _percentile(latencies, 50),
        'latency_p99_ms': _percentile(latencies, 99),
        'replica_read_share': replica_reads / len(reads) if reads else 0.0,
        'abort_rate': len(aborts) / finished if finished else 0.0,
        'aborts_by_reason': dict(sorted(by_reason.items())),
        'phases': phases.as_dict().get('children', {}) if phases is not None else {},
    }


def throughput_series(history, bucket_us=100_000, duration_us=None):
    """
    Return ``[(bucket_start_us, completions_per_second), ...]``: completed
    transactions and queries counted in consecutive ``bucket_us`` buckets.
    """
    
    times = np.asarray([e.true_time for e in history.of_kind('commit_visible')], dtype=np.int64)
    
    if duration_us is None:
        duration_us = int(times.max()) + 1 if times.size else 0
    
    buckets = max(1, -(-duration_us // bucket_us))
    counts = np.bincount(times // bucket_us, minlength=buckets)[:buckets] if times.size else np.zeros(buckets)
    scale = US_PER_S / bucket_us
    
    return [(i * bucket_us, float(count * scale)) for i, count in enumerate(counts)]
