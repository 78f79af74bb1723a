import logging

from geotxn.exceptions import TransitionInProgress
from geotxn.txtime.authority import DIRECTIONS, GCLOCK_TO_GTM, GTM_TO_GCLOCK
from geotxn.txtime.timestamps import Mode
from geotxn.utils.logs import Loggable

logger = logging.getLogger(__name__)


class TransitionController(Loggable):
    """
    Runs the zero-downtime transitions between GTM and GClock mode on the GTM
    node. Both directions pass through DUAL mode:
    
    1. The GTM server enters DUAL and tells every CN to do the same. Each CN
       acknowledges with the largest GClock value it has issued and its
       current error bound.
    2. ``gtm_to_gclock``: once all CNs have acknowledged, the server stays in
       DUAL for twice the largest error bound observed, then switches to
       GClock and the CNs follow.
       ``gclock_to_gtm``: the server raises its counter above every GClock
       value it has seen, switches to GTM and the CNs follow at once.
    
    CNs that do not acknowledge after ``max_attempts`` are treated as down;
    they adopt the server's mode when they recover.
    
    Each transition's choreography is kept as a named log on the controller.
    """
    
    def __init__(self, node, cn_ids, history=None, rpc_timeout=500_000, retry_interval=100_000,
                 max_attempts=5):
        
        super().__init__()
        
        self.node = node
        self.server = node.server
        self.cn_ids = list(cn_ids)
        self.history = history
        self.rpc_timeout = rpc_timeout
        self.retry_interval = retry_interval
        self.max_attempts = max_attempts
        
        self.transitions = []
        
        for cn in self.cn_ids:
            self.state.cn_mode[cn] = self.server.mode
    
    def log_time(self):
        
        return self.node.now
    
    @property
    def state(self):
        
        return self.server.state
    
    @property
    def in_progress(self):
        
        return self.state.direction is not None
    
    def start_transition(self, direction):
        
        try:
            source, target = DIRECTIONS[direction]
        except KeyError:
            raise ValueError(f'Unknown transition direction "{direction}".')
        
        if self.in_progress:
            raise TransitionInProgress(self.state.direction)
        
        if self.server.mode is not source:
            raise ValueError(f'Cannot start {direction}: the GTM server is in {self.server.mode} mode.')
        
        self.state.direction = direction
        self.node.spawn(self._run(direction, target))
    
    def _mode_changed(self, node_id, mode):
        
        if node_id == self.node.id:
            self.state.gtms_mode = mode
        else:
            self.state.cn_mode[node_id] = mode
        
        if self.history is not None:
            self.history.record('mode_change', self.node.now, node=node_id, mode=mode.value)
    
    def _switch_all(self, mode):
        """
        Tell every CN to switch to ``mode``, retrying those that do not
        answer. Return the replies of the CNs that acknowledged.
        """
        
        state = self.state
        state.acks_pending = set(self.cn_ids)
        replies = {}
        
        for attempt in range(1, self.max_attempts + 1):
            pending = sorted(state.acks_pending)
            outcomes = yield from self.node.parallel(
                self.node.call(cn, 'switch_mode', {'mode': mode.value}, timeout=self.rpc_timeout) for cn in pending
            )
            
            for cn, outcome in zip(pending, outcomes):
                if outcome.ok:
                    state.acks_pending.discard(cn)
                    replies[cn] = outcome.value
                    self._mode_changed(cn, mode)
                    self.log(f'{cn} acknowledged {mode}')
            
            if not state.acks_pending:
                break
            
            self.log(f'attempt {attempt}: no ack from {", ".join(sorted(state.acks_pending))}')
            yield self.node.sleep(self.retry_interval)
        
        if state.acks_pending:
            logger.warning('t=%d treating %s as down during the switch to %s', self.node.now,
                           sorted(state.acks_pending), mode)
            state.acks_pending.clear()
        
        return replies
    
    def _run(self, direction, target):
        
        state = self.state
        started_at = self.node.now
        
        state.max_err_observed = 0
        self.start_log(f'{direction}@{started_at}')
        record = {'direction': direction, 'started_at': started_at, 'acked_at': None, 'finished_at': None}
        self.transitions.append(record)
        logger.info('t=%d starting %s transition', started_at, direction)
        
        self._mode_changed(self.node.id, Mode.DUAL)
        state.dual_entered_at = self.node.now
        self.log('GTM server entered DUAL mode')
        
        replies = yield from self._switch_all(Mode.DUAL)
        for reply in replies.values():
            self.server.observe(reply['max_gclock'], reply['err'])
        
        acked_at = self.node.now
        self.log(f'all CNs in DUAL mode, max error bound {state.max_err_observed}us')
        
        if direction == GTM_TO_GCLOCK:
            # The error bound can keep growing while DUAL timestamps are issued
            while True:
                due = acked_at + 2 * state.max_err_observed
                if self.node.now >= due:
                    break
                yield self.node.sleep(due - self.node.now)
            
            self.log(f'waited {self.node.now - acked_at}us in DUAL mode')
        else:
            self.server.seed_above_gclock()
            self.log(f'counter seeded at {state.gtms_counter}')
        
        self._mode_changed(self.node.id, target)
        self.log(f'GTM server entered {target} mode')
        
        yield from self._switch_all(target)
        
        finished_at = self.node.now
        self.log('transition complete')
        _, steps = self.end_log()
        
        record.update(acked_at=acked_at, finished_at=finished_at, max_err_observed=state.max_err_observed, steps=steps)
        
        state.direction = None
        logger.info('t=%d %s transition complete', finished_at, direction)
    
    def request_fallback(self):
        """
        Start a GClock-to-GTM transition in response to an unhealthy clock,
        unless the cluster is already in (or heading to) GTM mode.
        """
        
        if self.in_progress or self.server.mode is not Mode.GCLOCK:
            return False
        
        self.start_transition(GCLOCK_TO_GTM)
        
        return True
    
    def request_return(self):
        
        if self.in_progress or self.server.mode is not Mode.GTM:
            return False
        
        self.start_transition(GTM_TO_GCLOCK)
        
        return True
