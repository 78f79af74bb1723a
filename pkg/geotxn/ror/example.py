"""
The worked RCP example: three shards with one replica each, five
transactions with commit timestamps ts1 < ... < ts5, and replicas that have
each replayed a different prefix of their shard's redo stream:

* replica 1 (shard 0) has Trx1, Trx2 and Trx4, Trx1's commit record
  arriving after Trx2's;
* replica 2 (shard 1) has Trx2, Trx3 and Trx5;
* replica 3 (shard 2) has Trx3 and Trx4's Prepare, but not its commit.

The replica maxima are ts4, ts5 and ts3, so the RCP is ts3 and exactly Trx1,
Trx2 and Trx3 are visible at it.
"""
from dataclasses import dataclass, field

from geotxn.replication.records import RedoLog
from geotxn.replication.replica import ReplicaState
from geotxn.ror.rcp import compute_rcp
from geotxn.store import DistributionMap, ShardStore, replay_to
from geotxn.txtime.timestamps import ZERO, Mode, Timestamp

SHARDS = 3
KEY_SPACE = 30

EXPECTED_VISIBLE = (1, 2, 3)


@dataclass
class RcpExampleReport:
    
    maxima: dict
    rcp: int
    visible: tuple
    oracle_mismatches: list = field(default_factory=list)
    expected: tuple = EXPECTED_VISIBLE
    
    @property
    def match(self):
        
        return self.visible == self.expected and not self.oracle_mismatches
    
    def as_dict(self):
        
        return {
            'maxima': self.maxima,
            'rcp': self.rcp,
            'visible': list(self.visible),
            'expected': list(self.expected),
            'oracle_mismatches': self.oracle_mismatches,
            'match': self.match,
        }


def _ts(n):
    
    return Timestamp(n * 10, 0, Mode.GCLOCK, 0, n)


def build_primaries():
    """
    Return ``{shard: ShardStore}`` holding the five transactions. Shard 2's
    last record is Trx4's commit.
    """
    
    distribution = DistributionMap(SHARDS, 'range', key_space=KEY_SPACE)
    keys = distribution.keys_by_shard(KEY_SPACE)
    
    primaries = {shard: ShardStore(shard, distribution, RedoLog(shard)) for shard in range(SHARDS)}
    s0, s1, s2 = primaries[0], primaries[1], primaries[2]
    
    def write(store, txn_id, index):
        
        store.stage_write(txn_id, keys[store.shard][index], f'trx{txn_id}'.encode('ascii'), ZERO)
    
    # Trx1: single shard, commit record logged after Trx2's
    write(s0, 1, 0)
    s0.mark_committing(1)
    
    # Trx2: shards 0 and 1
    for store in (s0, s1):
        write(store, 2, 1)
        store.mark_committing(2)
        store.prepare(2)
    for store in (s0, s1):
        store.finalize(2, _ts(2))
    
    s0.finalize(1, _ts(1))
    
    # Trx3: shards 1 and 2
    for store in (s1, s2):
        write(store, 3, 2)
        store.mark_committing(3)
        store.prepare(3)
    for store in (s1, s2):
        store.finalize(3, _ts(3))
    
    # Trx4: shards 0 and 2
    for store in (s0, s2):
        write(store, 4, 3)
        store.mark_committing(4)
        store.prepare(4)
    for store in (s0, s2):
        store.finalize(4, _ts(4))
    
    # Trx5: single shard
    write(s1, 5, 4)
    s1.mark_committing(5)
    s1.finalize(5, _ts(5))
    
    return primaries


def rcp_example():
    """
    Replay the example and return an ``RcpExampleReport``: the replica
    maxima, the resulting RCP and the transactions visible at it on the
    replicas, checked against the primary-log oracle.
    """
    
    primaries = build_primaries()
    replicas = {}
    
    for shard, primary in primaries.items():
        records = primary.log.records
        if shard == 2:
            records = records[:-1]  # Trx4's commit has not arrived
        
        replica = ReplicaState(shard, f'rep-{shard + 1}')
        for record in records:
            replica.replay(record)
        
        replicas[replica.replica_id] = replica
    
    maxima = {replica_id: r.max_commit_ts for replica_id, r in replicas.items()}
    rcp = compute_rcp(maxima)
    
    visible = set()
    mismatches = []
    
    for replica in replicas.values():
        state = {}
        for key in sorted(replica.store.versions):
            read = replica.replica_read_at(key, rcp)
            if read.blocked:
                mismatches.append({'replica': replica.replica_id, 'key': key, 'blocked_by': read.blocked_by})
            elif read.version is not None:
                state[key] = (read.version.value, read.version.txn_id)
                visible.add(read.version.txn_id)
        
        expected = replay_to(primaries[replica.shard].log, rcp)
        if state != expected:
            mismatches.append({'replica': replica.replica_id, 'replica_state': sorted(state),
                               'oracle_state': sorted(expected)})
    
    return RcpExampleReport(
        maxima={replica_id: ts.value for replica_id, ts in sorted(maxima.items())},
        rcp=rcp.value,
        visible=tuple(sorted(visible)),
        oracle_mismatches=mismatches,
    )
