import enum
import functools
from dataclasses import dataclass


class Mode(str, enum.Enum):
    """
    The source of transaction timestamps. GTM and GClock values share one
    integer space: GTM counters start at zero while GClock values are
    microsecond clock readings, and DUAL bridges the gap between them.
    """
    
    GTM = 'gtm'
    GCLOCK = 'gclock'
    DUAL = 'dual'
    
    def __str__(self):
        
        return self.value


@functools.total_ordering
@dataclass(frozen=True, eq=False)
class Timestamp:
    """
    A mode-tagged invocation or commit timestamp.
    
    Timestamps are totally ordered by ``(value, coordinator, seq)``. MVCC
    visibility only ever compares ``value``: a version committed at value
    ``v`` is visible to every snapshot whose value is ``>= v``.
    """
    
    value: int
    err: int = 0
    mode: Mode = Mode.GTM
    coordinator: int = 0
    seq: int = 0
    
    @property
    def sort_key(self):
        
        return (self.value, self.coordinator, self.seq)
    
    def __eq__(self, other):
        
        if not isinstance(other, Timestamp):
            return NotImplemented
        
        return self.sort_key == other.sort_key
    
    def __lt__(self, other):
        
        if not isinstance(other, Timestamp):
            return NotImplemented
        
        return self.sort_key < other.sort_key
    
    def __hash__(self):
        
        return hash(self.sort_key)
    
    def __repr__(self):
        
        return f'<Timestamp: {self.value} {self.mode}±{self.err} ({self.coordinator}.{self.seq})>'
    
    def as_dict(self):
        
        return {
            'value': self.value,
            'err': self.err,
            'mode': self.mode.value,
            'coordinator': self.coordinator,
            'seq': self.seq,
        }
    
    @classmethod
    def from_dict(cls, data):
        
        return cls(data['value'], data['err'], Mode(data['mode']), data['coordinator'], data['seq'])


ZERO = Timestamp(0)


def gclock_value(t_clock, t_err):
    """
    Return the GClock timestamp for a clock reading: the upper bound of the
    reading's uncertainty interval.
    """
    
    return t_clock + t_err


def gtm_increment(counter):
    
    return counter + 1


def dual_value(gtm_counter, gclock_value):
    """
    Return a DUAL timestamp, strictly above both the GTM counter and the
    GClock value offered by the requester.
    """
    
    return max(gtm_counter, gclock_value) + 1
