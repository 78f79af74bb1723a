"""
The observable history of a run: every event the correctness checkers
quantify over, stamped with true (simulated) time.
"""
import enum
import itertools
import json
from dataclasses import dataclass, field

from geotxn.replication.records import RecordKind, RedoRecord
from geotxn.txtime.timestamps import Timestamp


class EventKind(str, enum.Enum):
    
    INVOKE = 'invoke'
    COMMIT_VISIBLE = 'commit_visible'
    ABORT = 'abort'
    READ_RETURN = 'read_return'
    RCP_PUBLISH = 'rcp_publish'
    MODE_CHANGE = 'mode_change'


@dataclass(frozen=True)
class HistoryEvent:
    """
    One recorded event. Events are ordered by ``(true_time, seq)``, ``seq``
    being the recording order.
    
    Payload fields by kind:
    
    * ``invoke``: ``client``, ``cn``, ``snapshot``, ``mode``, ``route``
      (``primary``/``replica``/``mixed``), ``read_only``, ``started_at``
    * ``commit_visible``: ``client``, ``commit_ts``, ``requested_at``,
      ``writes`` (keys), ``shards``
    * ``abort``: ``client``, ``reason``
    * ``read_return``: ``client``, ``key``, ``writer`` (txn id or ``None``),
      ``version_ts``, ``snapshot``, ``node``, ``route``, ``true_staleness``
    * ``rcp_publish``: ``ts``, ``epoch``, ``collector``, ``contributing``
    * ``mode_change``: ``node``, ``mode``
    
    All timestamps are recorded by value.
    """
    
    seq: int
    kind: EventKind
    true_time: int
    txn_id: int = None
    payload: dict = field(default_factory=dict)
    
    def __getitem__(self, name):
        
        return self.payload[name]
    
    def get(self, name, default=None):
        
        return self.payload.get(name, default)
    
    def as_dict(self):
        
        return {
            'seq': self.seq,
            'kind': self.kind.value,
            'true_time': self.true_time,
            'txn_id': self.txn_id,
            'payload': self.payload,
        }
    
    @classmethod
    def from_dict(cls, data):
        
        return cls(data['seq'], EventKind(data['kind']), data['true_time'], data['txn_id'], data['payload'])


class History:
    
    def __init__(self):
        
        self.events = []
        self._seq = itertools.count()
    
    def __len__(self):
        
        return len(self.events)
    
    def __iter__(self):
        
        return iter(self.events)
    
    def record(self, kind, true_time, txn_id=None, **payload):
        
        event = HistoryEvent(next(self._seq), EventKind(kind), true_time, txn_id, payload)
        self.events.append(event)
        
        return event
    
    def of_kind(self, *kinds):
        
        kinds = {EventKind(k) for k in kinds}
        
        return [e for e in self.events if e.kind in kinds]
    
    def by_txn(self):
        
        txns = {}
        for event in self.events:
            if event.txn_id is not None:
                txns.setdefault(event.txn_id, []).append(event)
        
        return txns
    
    def sorted(self):
        
        return sorted(self.events, key=lambda e: (e.true_time, e.seq))
    
    @classmethod
    def from_events(cls, events):
        
        history = cls()
        history.events = sorted(events, key=lambda e: e.seq)
        history._seq = itertools.count(max((e.seq for e in events), default=-1) + 1)
        
        return history


def _record_as_dict(shard, record):
    
    return {
        'type': 'redo',
        'shard': shard,
        'lsn': record.lsn,
        'kind': record.kind.name,
        'txn_id': record.txn_id,
        'commit_ts': record.commit_ts.as_dict() if record.commit_ts else None,
        'keys': list(record.keys),
        'payload': record.payload.hex(),
        'appended_at': record.appended_at,
    }


def _record_from_dict(data):
    
    ts = data['commit_ts']
    
    return RedoRecord(
        lsn=data['lsn'],
        kind=RecordKind[data['kind']],
        txn_id=data['txn_id'],
        commit_ts=Timestamp.from_dict(ts) if ts else None,
        keys=tuple(data['keys']),
        payload=bytes.fromhex(data['payload']),
        appended_at=data['appended_at'],
    )


def dump_ndjson(stream, history, logs=None):
    """
    Write ``history`` to ``stream`` as newline-delimited JSON, one
    ``{"type": "event", ...}`` line per event followed by one
    ``{"type": "redo", ...}`` line per record of each shard log in ``logs``
    (a mapping of shard to ``RedoLog``).
    """
    
    for event in history.events:
        line = {'type': 'event'}
        line.update(event.as_dict())
        stream.write(json.dumps(line, sort_keys=True))
        stream.write('\n')
    
    for shard, log in sorted((logs or {}).items()):
        for record in log.records:
            stream.write(json.dumps(_record_as_dict(shard, record), sort_keys=True))
            stream.write('\n')


def load_ndjson(stream):
    """
    Read a history written by ``dump_ndjson()``. Return ``(history, logs)``
    where ``logs`` maps each shard to its list of ``RedoRecord`` objects.
    """
    
    events = []
    logs = {}
    
    for number, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        
        try:
            data = json.loads(line)
            kind = data.pop('type')
        except (ValueError, KeyError):
            raise ValueError(f'Line {number} is not a history record.')
        
        if kind == 'event':
            events.append(HistoryEvent.from_dict(data))
        elif kind == 'redo':
            logs.setdefault(data['shard'], []).append(_record_from_dict(data))
        else:
            raise ValueError(f'Line {number} has unknown type "{kind}".')
    
    return History.from_events(events), logs
