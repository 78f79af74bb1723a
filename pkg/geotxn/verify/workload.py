"""
Synthetic workloads. A workload is a set of clients, each issuing a
deterministic stream of operations drawn from its own seeded generator, so a
client's stream does not depend on how fast other clients consume theirs.
"""
from dataclasses import dataclass

import numpy as np

READ_WRITE = 'read_write'
READ_ONLY = 'read_only'

ARRIVAL_MODELS = ('open', 'closed')


@dataclass(frozen=True)
class WorkloadSpec:
    """
    ``arrival='open'`` issues operations at exponential inter-arrival times
    (mean ``1 / rate_per_client``) regardless of completions; ``'closed'``
    issues the next operation when the previous one completes, after an
    exponential think time (mean ``think_time_us``).
    
    ``remote_fraction`` is the share of keys taken from shards whose primary
    lies outside the client's region; ``None`` draws shards uniformly.
    ``read_only_mode`` issues multi-key read-only queries only.
    """
    
    name: str = 'default'
    duration_us: int = 1_000_000
    start_us: int = 0
    clients: int = 4
    read_fraction: float = 0.5
    multi_shard_fraction: float = 0.5
    key_space: int = 1000
    keys_per_txn: int = 2
    value_size: int = 16
    staleness_bound_us: int = None
    arrival: str = 'closed'
    rate_per_client: float = 100.0
    think_time_us: int = 0
    read_only_mode: bool = False
    remote_fraction: float = None
    replica_reads: bool = True
    
    def __post_init__(self):
        
        for name in ('read_fraction', 'multi_shard_fraction'):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f'{name} must be in [0, 1].')
        
        if self.remote_fraction is not None and not 0 <= self.remote_fraction <= 1:
            raise ValueError('remote_fraction must be in [0, 1].')
        
        if self.arrival not in ARRIVAL_MODELS:
            raise ValueError(f'Unknown arrival model "{self.arrival}".')
        
        if self.clients < 1 or self.keys_per_txn < 1 or self.key_space < 1:
            raise ValueError('clients, keys_per_txn and key_space must be positive.')
        
        if self.arrival == 'open' and self.rate_per_client <= 0:
            raise ValueError('rate_per_client must be positive for open arrival.')


@dataclass(frozen=True)
class Operation:
    """
    One client operation. ``delay`` is the time to wait before issuing it:
    the inter-arrival gap (open) or think time (closed).
    """
    
    client: int
    index: int
    kind: str
    keys: tuple
    delay: int
    staleness_bound: int = None
    multi_shard: bool = False
    
    @property
    def read_only(self):
        
        return self.kind == READ_ONLY
    
    @property
    def writes(self):
        
        return () if self.read_only else self.keys


class OperationStream:
    """
    The endless operation stream of one client.
    """
    
    def __init__(self, spec, seed, distribution, client, local_shards=(), stream_id=0):
        
        self.spec = spec
        self.client = client
        self.rng = np.random.default_rng([seed, stream_id, client])
        self.index = 0
        
        self.keys_by_shard = {
            shard: keys for shard, keys in distribution.keys_by_shard(spec.key_space).items() if keys
        }
        shards = sorted(self.keys_by_shard)
        
        self.shards = shards
        self.local = [s for s in shards if s in set(local_shards)]
        self.remote = [s for s in shards if s not in set(local_shards)]
    
    def __iter__(self):
        
        return self
    
    def __next__(self):
        
        spec = self.spec
        rng = self.rng
        
        if spec.arrival == 'open':
            delay = int(rng.exponential(1_000_000 / spec.rate_per_client))
        elif spec.think_time_us:
            delay = int(rng.exponential(spec.think_time_us))
        else:
            delay = 0
        
        if spec.read_only_mode or rng.random() < spec.read_fraction:
            kind = READ_ONLY
        else:
            kind = READ_WRITE
        
        multi = len(self.shards) > 1 and spec.keys_per_txn > 1 and rng.random() < spec.multi_shard_fraction
        keys = self._draw_keys(multi)
        
        op = Operation(self.client, self.index, kind, keys, delay, spec.staleness_bound_us, multi)
        self.index += 1
        
        return op
    
    def _pick_shards(self, count):
        
        rng = self.rng
        chosen = []
        
        for _ in range(count):
            pool = self.shards
            if self.spec.remote_fraction is not None:
                preferred, other = self.local, self.remote
                if rng.random() < self.spec.remote_fraction:
                    preferred, other = other, preferred
                
                pool = [s for s in preferred if s not in chosen] or [s for s in other if s not in chosen]
            else:
                pool = [s for s in pool if s not in chosen]
            
            chosen.append(pool[rng.integers(len(pool))])
        
        return chosen
    
    def _draw_keys(self, multi):
        
        spec = self.spec
        
        if multi:
            shard_count = min(spec.keys_per_txn, len(self.shards))
        else:
            shard_count = 1
        
        shards = self._pick_shards(shard_count)
        
        keys = []
        for i in range(spec.keys_per_txn):
            candidates = [k for k in self.keys_by_shard[shards[i % len(shards)]] if k not in keys]
            if not candidates:
                continue
            keys.append(candidates[self.rng.integers(len(candidates))])
        
        return tuple(sorted(keys))


def generate(spec, seed, distribution, count, local_shards=None):
    """
    Return the first ``count`` operations of the workload, taken from the
    clients' streams in round-robin order. ``local_shards`` maps client
    index to the shards local to it.
    """
    
    local_shards = local_shards or {}
    streams = [
        OperationStream(spec, seed, distribution, client, local_shards.get(client, ()))
        for client in range(spec.clients)
    ]
    
    operations = []
    while len(operations) < count:
        for stream in streams:
            operations.append(next(stream))
            if len(operations) == count:
                break
    
    return operations
