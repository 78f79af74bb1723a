"""
Timestamp authorities.

``GtmServer`` is the state of the centralised GTM server (GTMS); it lives on
the ``GtmNode``. ``TimestampClient`` is the per-CN side that decides, from
the CN's current mode, how invocation and commit timestamps are obtained and
how long their waits last.
"""
import itertools
import logging
from dataclasses import dataclass, field

from geotxn.exceptions import AuthorityUnavailable, RpcTimeout, StaleModeAbort
from geotxn.txtime.timestamps import Mode, Timestamp, dual_value, gclock_value, gtm_increment

logger = logging.getLogger(__name__)

GTM_TO_GCLOCK = 'gtm_to_gclock'
GCLOCK_TO_GTM = 'gclock_to_gtm'

DIRECTIONS = {
    GTM_TO_GCLOCK: (Mode.GTM, Mode.GCLOCK),
    GCLOCK_TO_GTM: (Mode.GCLOCK, Mode.GTM),
}


@dataclass
class TransitionState:
    
    gtms_mode: Mode = Mode.GTM
    cn_mode: dict = field(default_factory=dict)
    max_err_observed: int = 0
    dual_entered_at: int = None
    acks_pending: set = field(default_factory=set)
    direction: str = None
    gtms_counter: int = 0
    gtms_max_gclock_seen: int = 0
    
    def as_dict(self):
        
        return {
            'gtms_mode': self.gtms_mode.value,
            'cn_mode': {cn: mode.value for cn, mode in sorted(self.cn_mode.items())},
            'max_err_observed': self.max_err_observed,
            'dual_entered_at': self.dual_entered_at,
            'acks_pending': sorted(self.acks_pending),
            'direction': self.direction,
            'gtms_counter': self.gtms_counter,
            'gtms_max_gclock_seen': self.gtms_max_gclock_seen,
        }


class GtmServer:
    """
    The GTM counter plus the bookkeeping the DUAL mode needs: the largest
    GClock value and the largest error bound it has been shown.
    """
    
    def __init__(self, mode=Mode.GTM, enable_dual_wait=True):
        
        self.state = TransitionState(gtms_mode=mode)
        self.enable_dual_wait = enable_dual_wait
        self.issued = 0
    
    @property
    def mode(self):
        
        return self.state.gtms_mode
    
    @property
    def counter(self):
        
        return self.state.gtms_counter
    
    def observe(self, gclock_value=0, err=0):
        
        state = self.state
        state.gtms_max_gclock_seen = max(state.gtms_max_gclock_seen, gclock_value)
        state.max_err_observed = max(state.max_err_observed, err)
    
    def gtm_next(self, txn_id=None):
        """
        Issue the next GTM timestamp value. Return ``(value, wait)`` where
        ``wait`` is the commit wait a GTM-mode transaction must observe: twice
        the largest error bound seen while the server is in DUAL mode, zero
        otherwise.
        """
        
        state = self.state
        
        if state.gtms_mode is Mode.GCLOCK:
            raise StaleModeAbort(txn_id, 'the GTM server has switched to GClock mode')
        
        wait = 0
        if state.gtms_mode is Mode.DUAL:
            state.gtms_counter = max(state.gtms_counter, state.gtms_max_gclock_seen)
            if self.enable_dual_wait:
                wait = 2 * state.max_err_observed
        
        state.gtms_counter = gtm_increment(state.gtms_counter)
        self.issued += 1
        
        return state.gtms_counter, wait
    
    def dual_next(self, gclock_value, err):
        
        self.observe(gclock_value, err)
        
        state = self.state
        state.gtms_counter = dual_value(state.gtms_counter, gclock_value)
        self.issued += 1
        
        return state.gtms_counter
    
    def seed_above_gclock(self):
        """
        Raise the counter to the largest GClock value seen so the first GTM
        timestamp after a GClock-to-GTM transition exceeds every GClock
        timestamp issued before it.
        """
        
        state = self.state
        state.gtms_counter = max(state.gtms_counter, state.gtms_max_gclock_seen)


class TimestampClient:
    """
    Obtains timestamps for one CN according to its current mode.
    
    Waits use the earliest possible true time of the local clock: a wait on
    value ``v`` ends once ``t_clock - t_err > v``, after which every later
    GClock timestamp issued anywhere exceeds ``v``.
    """
    
    def __init__(self, node, clocks, gtm_id, cn_index, mode=Mode.GTM, rpc_timeout=500_000,
                 disable_commit_wait=False):
        
        self.node = node
        self.clocks = clocks
        self.gtm_id = gtm_id
        self.cn_index = cn_index
        self.mode = mode
        self.rpc_timeout = rpc_timeout
        self.disable_commit_wait = disable_commit_wait
        
        self.max_gclock_issued = 0
        self._seq = itertools.count(1)
    
    def stamp(self, value, err, mode):
        
        return Timestamp(value, err, mode, self.cn_index, next(self._seq))
    
    #
    # Sources
    #
    
    def gclock_now(self):
        """
        Return a GClock timestamp from the local clock. No network roundtrip.
        """
        
        reading = self.clocks.read_healthy(self.node.id)
        value = gclock_value(reading.t_clock, reading.t_err)
        self.max_gclock_issued = max(self.max_gclock_issued, value)
        
        return self.stamp(value, reading.t_err, Mode.GCLOCK)
    
    def _call_gtm(self, kind, payload):
        
        try:
            return (yield from self.node.call(self.gtm_id, kind, payload, timeout=self.rpc_timeout))
        except RpcTimeout:
            raise AuthorityUnavailable(f'No reply from {self.gtm_id} to {kind}.')
    
    def gtm_next(self, txn_id=None):
        """
        Fetch a GTM timestamp. Return ``(Timestamp, wait)``.
        """
        
        reply = yield from self._call_gtm('gtm_next', {'txn_id': txn_id})
        
        return self.stamp(reply['value'], 0, Mode.GTM), reply['wait']
    
    def dual_next(self):
        
        gclock = self.gclock_now()
        reply = yield from self._call_gtm('dual_next', {'value': gclock.value, 'err': gclock.err})
        
        return self.stamp(reply['value'], gclock.err, Mode.DUAL)
    
    #
    # Waits
    #
    
    def wait_past(self, value):
        """
        Sleep until the local clock's lower bound exceeds ``value``.
        """
        
        while True:
            reading = self.clocks.read(self.node.id)
            gap = value - reading.lower
            if gap < 0:
                return
            
            yield self.node.sleep(gap + 1)
    
    def estimate_wait_until(self, value):
        
        reading = self.clocks.read(self.node.id)
        
        return self.node.now + max(0, value - reading.lower + 1)
    
    #
    # Protocol steps
    #
    
    def invocation_ts(self, txn_id=None):
        """
        Return the snapshot timestamp of a new transaction, after its
        invocation wait.
        """
        
        mode = self.mode
        
        if mode is Mode.GCLOCK:
            ts = self.gclock_now()
            yield from self.wait_past(ts.value)
            return ts
        
        if mode is Mode.DUAL:
            ts = yield from self.dual_next()
            yield from self.wait_past(ts.value)
            return ts
        
        # GTM timestamps need no invocation wait, whatever the server mode
        ts, _ = yield from self.gtm_next(txn_id)
        
        return ts
    
    def commit_path(self, txn_id, mode_at_begin):
        """
        Return the mode whose rules a commit follows. A transaction begun in
        GTM mode keeps the GTM path until its CN reaches GClock mode, at which
        point it is a stale straggler and aborts.
        """
        
        mode = self.mode
        
        if mode_at_begin is Mode.GTM:
            if mode is Mode.GCLOCK:
                raise StaleModeAbort(txn_id, 'begun in GTM mode, committing in GClock mode')
            return Mode.GTM
        
        if mode is Mode.GTM:
            return Mode.GTM
        
        if mode_at_begin is Mode.DUAL or mode is Mode.DUAL:
            return Mode.DUAL
        
        return Mode.GCLOCK
    
    def commit_ts(self, txn_id, mode_at_begin):
        """
        Acquire a commit timestamp. Return ``(Timestamp, wait_until)``, where
        ``wait_until`` is the estimated simulated time at which the commit
        wait ends.
        """
        
        path = self.commit_path(txn_id, mode_at_begin)
        
        if path is Mode.GCLOCK:
            ts = self.gclock_now()
            wait_until = self.estimate_wait_until(ts.value)
        elif path is Mode.DUAL:
            ts = yield from self.dual_next()
            wait_until = self.estimate_wait_until(ts.value)
        else:
            ts, wait = yield from self.gtm_next(txn_id)
            wait_until = self.node.now + wait
        
        if self.disable_commit_wait:
            wait_until = self.node.now
        
        return ts, wait_until
    
    def commit_wait(self, ts, wait_until):
        
        if self.disable_commit_wait:
            return
        
        if wait_until > self.node.now:
            yield self.node.sleep(wait_until - self.node.now)
        
        if ts.mode is not Mode.GTM:
            yield from self.wait_past(ts.value)
