"""
Deterministic discrete-event engine.

Virtual time is an integer number of microseconds. All randomness comes from
the one seeded ``numpy`` generator held by the ``Simulator``; the draw sites
are:

* ``Simulator.message_delay``: one uniform draw per message, only when the
  latency matrix has a nonzero jitter fraction;
* ``geotxn.clocks.ClockService``: one drift draw per clocked node and one
  residual draw per completed clock synchronisation;
* ``geotxn.cluster.Cluster``: one lag draw per replica when a random lag range
  is configured.

Workload streams use their own generators, seeded from the scenario seed.
"""
import dataclasses
import hashlib
import inspect
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import simpy

from geotxn.exceptions import EngineStopped, GeoTxnError, NodeCrashed, ProtocolViolation, RpcTimeout, UnknownTarget

logger = logging.getLogger(__name__)

FAULT_KINDS = ('node_crash', 'node_recover', 'clock_desync', 'link_delay_override')

DEFAULT_MESSAGE_SIZE = 128  # bytes


@dataclass
class LatencyMatrix:
    """
    One-way delays between regions in microseconds, keyed by
    ``(src_region, dst_region)``. The matrix need not be symmetric and the
    diagonal holds the intra-region delay. ``bandwidth`` is in bytes per
    second; a missing or zero entry means unlimited.
    """
    
    regions: list
    one_way_delay: dict
    jitter_fraction: float = 0.0
    bandwidth: dict = field(default_factory=dict)
    
    def __post_init__(self):
        
        if not 0 <= self.jitter_fraction < 1:
            raise ValueError('jitter_fraction must be in [0, 1).')
        
        for src in self.regions:
            for dst in self.regions:
                if (src, dst) not in self.one_way_delay:
                    raise ValueError(f'Missing latency for {src} -> {dst}.')
    
    @classmethod
    def uniform(cls, regions, delay_us, intra_us=0):
        
        delays = {}
        for src in regions:
            for dst in regions:
                delays[(src, dst)] = intra_us if src == dst else delay_us
        
        return cls(list(regions), delays)
    
    def delay(self, src_region, dst_region):
        
        return self.one_way_delay[(src_region, dst_region)]
    
    def transfer_time(self, src_region, dst_region, size):
        
        bandwidth = self.bandwidth.get((src_region, dst_region), 0)
        if not bandwidth:
            return 0
        
        return size * 1_000_000 / bandwidth


@dataclass(frozen=True)
class FaultSpec:
    
    kind: str
    target: str
    at: int
    params: dict = field(default_factory=dict)


@dataclass
class EngineStats:
    
    events: int = 0
    messages: int = 0
    delivered: int = 0
    dropped: int = 0


@dataclass
class Message:
    
    src: str
    dst: str
    kind: str
    payload: object = None
    size: int = DEFAULT_MESSAGE_SIZE
    req_id: int = None
    is_reply: bool = False
    error: Exception = None


@dataclass
class Outcome:
    """
    The result of one branch of ``Node.parallel()``: either a value or the
    domain error the branch raised.
    """
    
    ok: bool
    value: object = None
    error: Exception = None


class Simulator:
    """
    Owns virtual time, the node registry, the message network and fault
    injection for one simulation instance. Instances share no state and may be
    run side by side in separate threads or processes, but a single instance
    must only be driven from one thread.
    """
    
    def __init__(self, latency, seed=0, trace=True):
        
        self.env = simpy.Environment()
        self.latency = latency
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        
        self.nodes = {}
        self.stats = EngineStats()
        self.trace = [] if trace else None
        self.finished = False
        
        self._event_ids = itertools.count(1)
        self._channel_clock = {}
        self._link_overrides = {}
        self._fault_handlers = {}
        self._fault_listeners = []
    
    @property
    def now(self):
        
        return int(self.env.now)
    
    def add_node(self, node):
        
        if node.id in self.nodes:
            raise ValueError(f'Duplicate node id "{node.id}".')
        
        if node.region not in self.latency.regions:
            raise ValueError(f'Node "{node.id}" is placed in unknown region "{node.region}".')
        
        self.nodes[node.id] = node
    
    def register_fault_handler(self, kind, handler):
        
        self._fault_handlers[kind] = handler
    
    def add_fault_listener(self, listener):
        """
        Register ``listener(kind, node)`` to be called after a node crashes
        or recovers.
        """
        
        self._fault_listeners.append(listener)
    
    def _record(self, kind, src, dst, label):
        
        if self.trace is not None:
            self.trace.append((self.now, kind, src, dst, label))
    
    def trace_digest(self):
        
        digest = hashlib.sha256()
        for entry in self.trace or ():
            digest.update(repr(entry).encode('utf-8'))
            digest.update(b'\n')
        
        return digest.hexdigest()
    
    #
    # Scheduling
    #
    
    def schedule(self, callback, delay, node=None):
        """
        Call ``callback()`` after ``delay`` microseconds and return an event
        id. Events due at the same time run in the order they were scheduled.
        When ``node`` is given, the event is cancelled if that node crashes or
        restarts before it fires.
        """
        
        if self.finished:
            raise EngineStopped()
        
        if delay < 0:
            raise ValueError('Cannot schedule an event in the past.')
        
        event_id = next(self._event_ids)
        incarnation = self.nodes[node].incarnation if node else None
        
        def fire(_event):
            
            if node is not None and not self.nodes[node].is_current(incarnation):
                return
            
            callback()
        
        timeout = self.env.timeout(int(delay))
        timeout.callbacks.append(fire)
        
        return event_id
    
    def run_until(self, t):
        """
        Process every event due at or before ``t`` and advance the clock to
        ``t``. Return a copy of the cumulative engine statistics.
        """
        
        if t < self.now:
            raise ValueError(f'Cannot run backwards from {self.now} to {t}.')
        
        while self.env.peek() <= t:
            self.env.step()
            self.stats.events += 1
        
        if self.now < t:
            self.env.run(until=t)
        
        return dataclasses.replace(self.stats)
    
    def finish(self):
        
        self.finished = True
    
    #
    # Network
    #
    
    def _resolve_link_side(self, side):
        
        if side in self.nodes or side in self.latency.regions:
            return side
        
        raise UnknownTarget(side)
    
    def message_delay(self, src, dst, size):
        
        if src.id == dst.id:
            return 0
        
        base = None
        for key in ((src.id, dst.id), (src.id, dst.region), (src.region, dst.id), (src.region, dst.region)):
            if key in self._link_overrides:
                base = self._link_overrides[key]
                break
        
        if base is None:
            base = self.latency.delay(src.region, dst.region)
        
        if self.latency.jitter_fraction:
            base = base * (1 + self.rng.uniform(0, 1) * self.latency.jitter_fraction)
        
        delay = base + src.extra_delay_us + dst.extra_delay_us
        delay += self.latency.transfer_time(src.region, dst.region, size)
        
        return int(round(delay))
    
    def send(self, src, dst, kind, payload=None, size=DEFAULT_MESSAGE_SIZE, req_id=None, is_reply=False,
             error=None):
        """
        Send a message from node ``src`` to node ``dst``. Channels are FIFO
        per (src, dst) pair. Messages to a node that is down, or that crashes
        before delivery, are dropped silently.
        """
        
        src_node = self.nodes[src]
        if not src_node.alive:
            raise NodeCrashed(src)
        
        try:
            dst_node = self.nodes[dst]
        except KeyError:
            raise UnknownTarget(dst)
        
        self.stats.messages += 1
        
        if not dst_node.alive:
            self.stats.dropped += 1
            self._record('drop', src, dst, kind)
            return
        
        due = self.now + self.message_delay(src_node, dst_node, size)
        
        channel = (src, dst)
        due = max(due, self._channel_clock.get(channel, 0))
        self._channel_clock[channel] = due
        
        msg = Message(src, dst, kind, payload, size, req_id, is_reply, error)
        incarnation = dst_node.incarnation
        
        timeout = self.env.timeout(due - self.now)
        timeout.callbacks.append(lambda _event: self._deliver(msg, incarnation))
    
    def _deliver(self, msg, incarnation):
        
        dst = self.nodes[msg.dst]
        
        if not dst.is_current(incarnation):
            self.stats.dropped += 1
            self._record('drop', msg.src, msg.dst, msg.kind)
            return
        
        self.stats.delivered += 1
        self._record('reply' if msg.is_reply else 'deliver', msg.src, msg.dst, msg.kind)
        
        dst.receive(msg)
    
    #
    # Faults
    #
    
    def inject_fault(self, spec):
        
        if spec.at < self.now:
            raise ValueError('Cannot inject a fault in the past.')
        
        if spec.kind not in FAULT_KINDS:
            raise ValueError(f'Unknown fault kind "{spec.kind}".')
        
        if spec.kind == 'link_delay_override':
            try:
                a, b = spec.target.split('->')
            except ValueError:
                raise UnknownTarget(spec.target)
            
            link = (self._resolve_link_side(a.strip()), self._resolve_link_side(b.strip()))
        elif spec.target not in self.nodes:
            raise UnknownTarget(spec.target)
        else:
            link = None
        
        if spec.kind == 'clock_desync' and 'clock_desync' not in self._fault_handlers:
            raise UnknownTarget(spec.target)
        
        self.schedule(lambda: self._apply_fault(spec, link), spec.at - self.now)
    
    def _apply_fault(self, spec, link):
        
        logger.info('t=%d fault %s on %s %s', self.now, spec.kind, spec.target, spec.params or '')
        self._record('fault', spec.target, None, spec.kind)
        
        if spec.kind == 'node_crash':
            node = self.nodes[spec.target]
            if node.alive:
                node.crash()
                for listener in self._fault_listeners:
                    listener('crash', node)
        elif spec.kind == 'node_recover':
            node = self.nodes[spec.target]
            if not node.alive:
                node.recover()
                for listener in self._fault_listeners:
                    listener('recover', node)
        elif spec.kind == 'link_delay_override':
            delay = spec.params.get('delay_us')
            if delay is None:
                self._link_overrides.pop(link, None)
            else:
                self._link_overrides[link] = delay
        else:
            self._fault_handlers[spec.kind](spec)


class Node:
    """
    A simulated machine. Subclasses register message handlers with
    ``handles()``; a handler receives the ``Message`` and either returns the
    reply payload directly or is a generator that yields simulation events
    and returns it. A ``GeoTxnError`` raised by a handler is sent back to the
    caller and re-raised there.
    
    Crashing a node bumps its incarnation: its pending scheduled events,
    in-flight messages to it and its running processes are all discarded.
    """
    
    role = 'node'
    
    def __init__(self, sim, node_id, region, extra_delay_us=0):
        
        self.sim = sim
        self.id = node_id
        self.region = region
        self.extra_delay_us = extra_delay_us
        
        self.alive = True
        self.incarnation = 0
        
        self.handlers = {}
        self._pending = {}
        self._req_ids = itertools.count(1)
        
        sim.add_node(self)
    
    def __repr__(self):
        
        return f'<{self.__class__.__name__}: {self.id}>'
    
    @property
    def env(self):
        
        return self.sim.env
    
    @property
    def now(self):
        
        return self.sim.now
    
    def is_current(self, incarnation):
        
        return self.alive and self.incarnation == incarnation
    
    def handles(self, kind, handler):
        
        self.handlers[kind] = handler
    
    #
    # Lifecycle
    #
    
    def crash(self):
        
        self.alive = False
        self.incarnation += 1
        self._pending.clear()
        self.on_crash()
    
    def recover(self):
        
        self.alive = True
        self.incarnation += 1
        self.on_recover()
    
    def on_crash(self):
        
        pass
    
    def on_recover(self):
        
        pass
    
    #
    # Processes
    #
    
    def spawn(self, gen):
        """
        Run the generator ``gen`` as a simulated process on this node. The
        process ends silently at its next resumption after the node crashes.
        Domain errors escaping the generator are logged and swallowed.
        """
        
        return self.env.process(self._guard(gen, self.incarnation))
    
    def _guard(self, gen, incarnation):
        
        send_value, error = None, None
        
        while True:
            try:
                if error is not None:
                    target = gen.throw(error)
                else:
                    target = gen.send(send_value)
            except StopIteration as stop:
                return stop.value
            except GeoTxnError as exc:
                logger.debug('t=%d process on %s ended with %r', self.now, self.id, exc)
                return None
            
            try:
                send_value, error = (yield target), None
            except Exception as exc:
                send_value, error = None, exc
            
            if not self.is_current(incarnation):
                gen.close()
                return None
    
    def sleep(self, delay):
        
        return self.env.timeout(max(0, int(delay)))
    
    def parallel(self, branches):
        """
        Run each generator in ``branches`` concurrently and return a list of
        ``Outcome`` objects in the same order once all have finished.
        """
        
        processes = [self.env.process(self._capture(branch)) for branch in branches]
        if not processes:
            return []
        
        yield self.env.all_of(processes)
        
        return [p.value for p in processes]
    
    def _capture(self, branch):
        
        try:
            value = yield from branch
        except GeoTxnError as exc:
            return Outcome(False, error=exc)
        
        return Outcome(True, value=value)
    
    #
    # Messaging
    #
    
    def send(self, dst, kind, payload=None, size=DEFAULT_MESSAGE_SIZE):
        
        self.sim.send(self.id, dst, kind, payload, size)
    
    def call(self, dst, kind, payload=None, timeout=None, size=DEFAULT_MESSAGE_SIZE):
        """
        Send a request and wait for its reply (use with ``yield from``).
        Raise ``RpcTimeout`` if no reply arrives within ``timeout``
        microseconds, or the remote handler's error if it failed.
        """
        
        req_id = next(self._req_ids)
        reply = self.env.event()
        self._pending[req_id] = reply
        
        self.sim.send(self.id, dst, kind, payload, size, req_id=req_id)
        
        if timeout is None:
            return (yield reply)
        
        fired = yield reply | self.env.timeout(int(timeout))
        if reply in fired:
            return fired[reply]
        
        self._pending.pop(req_id, None)
        raise RpcTimeout(self.id, dst, kind)
    
    def receive(self, msg):
        
        if msg.is_reply:
            reply = self._pending.pop(msg.req_id, None)
            if reply is None:
                return  # the caller gave up waiting
            
            if msg.error is not None:
                reply.defused = True
                reply.fail(msg.error)
            else:
                reply.succeed(msg.payload)
            
            return
        
        try:
            handler = self.handlers[msg.kind]
        except KeyError:
            raise ProtocolViolation(f'{self.id} has no handler for "{msg.kind}".')
        
        try:
            result = handler(msg)
        except GeoTxnError as exc:
            self._reply(msg, error=exc)
            return
        
        if inspect.isgenerator(result):
            self.spawn(self._run_handler(msg, result))
        else:
            self._reply(msg, payload=result)
    
    def _run_handler(self, msg, gen):
        
        try:
            result = yield from gen
        except GeoTxnError as exc:
            self._reply(msg, error=exc)
            return
        
        self._reply(msg, payload=result)
    
    def _reply(self, msg, payload=None, error=None):
        
        if msg.req_id is None or not self.alive:
            return
        
        self.sim.send(self.id, msg.src, msg.kind, payload, req_id=msg.req_id, is_reply=True, error=error)
