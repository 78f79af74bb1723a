"""
Logical redo records and their binary encoding.

Each record is framed by a big-endian ``u32`` length followed by::
    
    lsn u64 | kind u8 | txn_id u64 | commit_ts u64 | key_count u32
    key_count x (u16 length | utf-8 bytes)
    ts_mode u8 | ts_err u32 | ts_coordinator u32 | ts_seq u32 | payload_length u32 | payload

``commit_ts`` and the ``ts_*`` fields are zero for records that carry no
timestamp. The encoding is stable across runs and versions of this module.
"""
import enum
import struct
from dataclasses import dataclass, field

from geotxn.exceptions import ProtocolViolation
from geotxn.txtime.timestamps import Mode, Timestamp

FRAME = struct.Struct('>I')
HEADER = struct.Struct('>QBQQI')
KEY_LENGTH = struct.Struct('>H')
TRAILER = struct.Struct('>BIIII')

MODE_CODES = {None: 0, Mode.GTM: 1, Mode.GCLOCK: 2, Mode.DUAL: 3}
MODES_BY_CODE = {code: mode for mode, code in MODE_CODES.items()}


class RecordKind(enum.IntEnum):
    
    WRITE = 1
    PENDING_COMMIT = 2
    COMMIT = 3
    PREPARE = 4
    COMMIT_PREPARED = 5
    ABORT = 6
    ABORT_PREPARED = 7
    DDL = 8
    HEARTBEAT = 9
    
    @property
    def label(self):
        
        return ''.join(part.capitalize() for part in self.name.split('_'))


COMMIT_KINDS = (RecordKind.COMMIT, RecordKind.COMMIT_PREPARED, RecordKind.DDL)
ABORT_KINDS = (RecordKind.ABORT, RecordKind.ABORT_PREPARED)
LOCKING_KINDS = (RecordKind.PENDING_COMMIT, RecordKind.PREPARE)


@dataclass(frozen=True)
class RedoRecord:
    """
    One entry of a shard's redo stream. ``keys`` holds the written key of a
    Write record and the transaction's touched keys for PendingCommit and
    Prepare. ``payload`` is the written value of a Write record and the table
    name of a Ddl record. ``appended_at`` is the true time of the append; it
    is kept in memory for staleness oracles but is not encoded.
    """
    
    lsn: int
    kind: RecordKind
    txn_id: int = 0
    commit_ts: Timestamp = None
    keys: tuple = ()
    payload: bytes = b''
    appended_at: int = field(default=0, compare=False)
    
    @property
    def size(self):
        
        return FRAME.size + len(self.encode())
    
    def encode(self):
        
        ts = self.commit_ts
        parts = [HEADER.pack(self.lsn, self.kind, self.txn_id, ts.value if ts else 0, len(self.keys))]
        
        for key in self.keys:
            raw = key.encode('utf-8')
            parts.append(KEY_LENGTH.pack(len(raw)))
            parts.append(raw)
        
        if ts:
            parts.append(TRAILER.pack(MODE_CODES[ts.mode], ts.err, ts.coordinator, ts.seq, len(self.payload)))
        else:
            parts.append(TRAILER.pack(0, 0, 0, 0, len(self.payload)))
        
        parts.append(self.payload)
        
        return b''.join(parts)
    
    @classmethod
    def decode(cls, body):
        
        lsn, kind, txn_id, ts_value, key_count = HEADER.unpack_from(body, 0)
        offset = HEADER.size
        
        keys = []
        for _ in range(key_count):
            (length, ) = KEY_LENGTH.unpack_from(body, offset)
            offset += KEY_LENGTH.size
            keys.append(body[offset:offset + length].decode('utf-8'))
            offset += length
        
        mode_code, err, coordinator, seq, payload_length = TRAILER.unpack_from(body, offset)
        offset += TRAILER.size
        payload = bytes(body[offset:offset + payload_length])
        
        if offset + payload_length != len(body):
            raise ProtocolViolation(f'Malformed redo record at lsn {lsn}.')
        
        mode = MODES_BY_CODE[mode_code]
        commit_ts = Timestamp(ts_value, err, mode, coordinator, seq) if mode else None
        
        return cls(lsn, RecordKind(kind), txn_id, commit_ts, tuple(keys), payload)


def encode_records(records):
    
    chunks = []
    for record in records:
        body = record.encode()
        chunks.append(FRAME.pack(len(body)))
        chunks.append(body)
    
    return b''.join(chunks)


def decode_records(data):
    
    records = []
    offset = 0
    while offset < len(data):
        (length, ) = FRAME.unpack_from(data, offset)
        offset += FRAME.size
        records.append(RedoRecord.decode(data[offset:offset + length]))
        offset += length
    
    return records


class RedoLog:
    """
    The durable, append-only redo stream of one shard primary. It survives
    crashes of its node. Listeners registered with ``subscribe()`` are called
    with each new record.
    """
    
    def __init__(self, shard, clock=None):
        
        self.shard = shard
        self.records = []
        
        self._clock = clock or (lambda: 0)
        self._listeners = []
    
    def __len__(self):
        
        return len(self.records)
    
    @property
    def last_lsn(self):
        
        return len(self.records)
    
    def append(self, kind, txn_id=0, keys=(), commit_ts=None, payload=b''):
        
        record = RedoRecord(
            lsn=self.last_lsn + 1,
            kind=kind,
            txn_id=txn_id,
            commit_ts=commit_ts,
            keys=tuple(keys),
            payload=payload,
            appended_at=self._clock(),
        )
        
        self.records.append(record)
        
        for listener in self._listeners:
            listener(record)
        
        return record
    
    def since(self, lsn, limit=None):
        """
        Return the records after ``lsn``, at most ``limit`` of them.
        """
        
        end = None if limit is None else lsn + limit
        
        return self.records[lsn:end]
    
    def subscribe(self, listener):
        
        self._listeners.append(listener)
    
    def encode(self):
        
        return encode_records(self.records)
