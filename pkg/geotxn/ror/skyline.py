import itertools
from dataclasses import dataclass

from geotxn.txtime.timestamps import Mode


@dataclass(frozen=True)
class NodeMetrics:
    """
    A candidate node for serving a shard's reads. ``staleness`` and
    ``latency`` are in microseconds; primaries are always 0 stale.
    """
    
    node: str
    staleness: int
    latency: float
    healthy: bool = True
    shard: int = None
    is_primary: bool = False
    
    @property
    def point(self):
        
        return (self.staleness, self.latency)


def dominates(a, b):
    
    return a.staleness <= b.staleness and a.latency <= b.latency and a.point != b.point


def build_skyline(candidates):
    """
    Return the candidates not dominated in (staleness, latency), sorted by
    staleness then node id. Candidates with identical points never dominate
    each other, so all of them are kept.
    """
    
    ordered = sorted(candidates, key=lambda m: (m.staleness, m.latency, m.node))
    skyline = []
    best_latency = None
    
    # Groups of identical points are adjacent in this order. A group is
    # dominated iff some earlier, different point has no greater latency.
    for _, group in itertools.groupby(ordered, key=lambda m: m.point):
        group = list(group)
        latency = group[0].latency
        
        if best_latency is not None and best_latency <= latency:
            continue
        
        skyline.extend(group)
        best_latency = latency
    
    skyline.sort(key=lambda m: (m.staleness, m.node))
    
    return skyline


def brute_force_skyline(candidates):
    """
    The O(n^2) dominance check, used as an oracle for ``build_skyline()``.
    """
    
    skyline = [c for c in candidates if not any(dominates(other, c) for other in candidates)]
    skyline.sort(key=lambda m: (m.staleness, m.node))
    
    return skyline


def estimate_staleness(mode, max_commit_value, clock_now=None, last_issued=None, issue_rate=None):
    """
    Estimate how far a node with the given ``max_commit_value`` lags behind,
    in microseconds.
    
    In GClock (and DUAL) mode this is the current clock reading minus the
    node's max commit timestamp. In GTM mode timestamps are counters, so the
    gap to the last issued GTM timestamp is converted to time using the rate
    at which timestamps were issued over the last metrics interval; an idle
    system (rate 0) is considered fresh.
    """
    
    if mode is Mode.GTM:
        gap = max(0, last_issued - max_commit_value)
        if not issue_rate:
            return 0
        
        return int(round(gap / issue_rate))
    
    return max(0, clock_now - max_commit_value)
