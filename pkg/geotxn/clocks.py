"""
Simulated physical clocks. Each clocked node owns a ``DriftingClock`` that is
periodically synchronised against the time device in its region; readings
carry an error bound so that, while the clock is healthy,
``t_clock - t_err <= true time <= t_clock + t_err``.
"""
import logging
import math
from dataclasses import dataclass

from geotxn.exceptions import ClockUnhealthy, NodeCrashed
from geotxn.sim import Node

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClockReading:
    
    t_clock: int
    t_err: int
    
    @property
    def lower(self):
        
        return self.t_clock - self.t_err
    
    @property
    def upper(self):
        
        return self.t_clock + self.t_err
    
    def contains(self, true_now):
        
        return self.lower <= true_now <= self.upper


class TrueTimeSource:
    """
    The ideal reference: exact simulated time.
    """
    
    def __init__(self, sim):
        
        self.sim = sim
    
    def true_now(self):
        
        return self.sim.now


@dataclass
class DriftingClock:
    
    node: str
    drift_ppm: float
    sync_roundtrip: int = 60
    drift_bound_ppm: int = 200
    offset_at_sync: float = 0.0
    last_sync_at: int = 0
    
    # Fixed synchronisation residual, replacing the random draw
    pinned_offset: float = None
    
    # Injected by clock_desync faults; excluded from the error bound
    desync_offset: float = 0.0
    desync_drift_ppm: float = 0.0
    desync_since: int = 0
    healthy: bool = True
    
    last_reading: int = None
    
    def raw(self, true_now):
        
        elapsed = true_now - self.last_sync_at
        value = true_now + self.offset_at_sync + self.drift_ppm * elapsed / 1_000_000
        
        if not self.healthy:
            value += self.desync_offset + self.desync_drift_ppm * (true_now - self.desync_since) / 1_000_000
        
        return value
    
    def error_bound(self, true_now):
        
        elapsed = true_now - self.last_sync_at
        
        return self.sync_roundtrip + math.ceil(self.drift_bound_ppm * elapsed / 1_000_000)
    
    def read(self, true_now):
        """
        Return a ``ClockReading`` for the given true time. Readings never step
        backwards: after a synchronisation moves the clock back, the previous
        value is held and the held amount is added to the error bound.
        """
        
        t_clock = round(self.raw(true_now))
        t_err = self.error_bound(true_now)
        
        if self.last_reading is not None and t_clock < self.last_reading:
            t_err += self.last_reading - t_clock
            t_clock = self.last_reading
        
        self.last_reading = t_clock
        
        return ClockReading(t_clock, t_err)
    
    def resync(self, true_now, residual):
        
        self.offset_at_sync = residual if self.pinned_offset is None else self.pinned_offset
        self.last_sync_at = true_now


class TimeDevice(Node):
    """
    The regional global time device (GPS receiver plus atomic clock) that
    clocked nodes synchronise against. It can be crashed like any node.
    """
    
    role = 'time_device'


class ClockService:
    """
    Owns the clocks of every clocked node and drives their synchronisation.
    Also counts envelope checks so runs can assert that no healthy reading
    ever fell outside its uncertainty interval.
    """
    
    def __init__(self, sim, sync_interval_us=1000, sync_roundtrip_us=60, drift_bound_ppm=200, pinned_offsets=None):
        
        self.sim = sim
        self.true_time = TrueTimeSource(sim)
        
        self.sync_interval = sync_interval_us
        self.sync_roundtrip = sync_roundtrip_us
        self.drift_bound_ppm = drift_bound_ppm
        self.pinned_offsets = pinned_offsets or {}
        
        self.clocks = {}
        self.devices = {}
        
        self.envelope_checks = 0
        self.envelope_violations = 0
        
        # Callbacks fired with the node id when its clock turns unhealthy or
        # heals again
        self.health_listeners = []
        
        sim.register_fault_handler('clock_desync', self.apply_desync)
    
    def add_device(self, region):
        
        device_id = f'tdev-{region}'
        if region not in self.devices:
            self.devices[region] = TimeDevice(self.sim, device_id, region)
        
        return self.devices[region]
    
    def add_node(self, node):
        """
        Give ``node`` a clock with a drift rate drawn uniformly within the
        bound, synchronise it immediately and start its periodic sync ticks.
        """
        
        if node.region not in self.devices:
            self.add_device(node.region)
        
        bound = self.drift_bound_ppm
        drift = float(self.sim.rng.uniform(-bound, bound)) if bound else 0.0
        
        clock = DriftingClock(
            node=node.id,
            drift_ppm=drift,
            sync_roundtrip=self.sync_roundtrip,
            drift_bound_ppm=bound,
            pinned_offset=self.pinned_offsets.get(node.id),
        )
        
        self.clocks[node.id] = clock
        self.restart(node.id)
        
        return clock
    
    def restart(self, node_id):
        """
        Synchronise the node's clock now and (re)start its sync ticks, e.g.
        after the node recovers from a crash.
        """
        
        self.clocks[node_id].resync(self.sim.now, self._draw_residual())
        self.sim.schedule(lambda: self.sync_tick(node_id), self.sync_interval, node=node_id)
    
    def _draw_residual(self):
        
        half = self.sync_roundtrip / 2
        if not half:
            return 0.0
        
        return float(self.sim.rng.uniform(-half, half))
    
    def is_healthy(self, node_id):
        
        return self.clocks[node_id].healthy
    
    def read(self, node_id):
        
        node = self.sim.nodes[node_id]
        if not node.alive:
            raise NodeCrashed(node_id)
        
        clock = self.clocks[node_id]
        true_now = self.true_time.true_now()
        reading = clock.read(true_now)
        
        if clock.healthy:
            self.envelope_checks += 1
            if not reading.contains(true_now):
                self.envelope_violations += 1
                logger.error(
                    't=%d clock on %s outside its envelope: %d±%d', true_now, node_id, reading.t_clock,
                    reading.t_err
                )
        
        return reading
    
    def read_healthy(self, node_id):
        """
        As ``read()``, but raise ``ClockUnhealthy`` if the clock has been
        desynchronised by a fault.
        """
        
        if not self.is_healthy(node_id):
            raise ClockUnhealthy(node_id)
        
        return self.read(node_id)
    
    def sync_tick(self, node_id):
        """
        Start a synchronisation round against the regional time device. The
        round completes one roundtrip later, unless the device is down, and
        the next tick is always scheduled one interval after this one.
        """
        
        node = self.sim.nodes[node_id]
        device = self.devices[node.region]
        
        self.sim.schedule(lambda: self.sync_tick(node_id), self.sync_interval, node=node_id)
        
        if not device.alive:
            logger.debug('t=%d %s skipped clock sync: %s is down', self.sim.now, node_id, device.id)
            return
        
        def complete():
            
            if device.alive:
                self.clocks[node_id].resync(self.sim.now, self._draw_residual())
        
        self.sim.schedule(complete, self.sync_roundtrip, node=node_id)
    
    def apply_desync(self, spec):
        
        clock = self.clocks[spec.target]
        params = spec.params
        
        clock.healthy = False
        clock.desync_offset = params.get('offset_us', 0)
        clock.desync_drift_ppm = params.get('drift_ppm', 0)
        clock.desync_since = self.sim.now
        
        logger.warning(
            't=%d clock on %s desynchronised (offset=%sus, drift=%sppm)', self.sim.now, spec.target,
            clock.desync_offset, clock.desync_drift_ppm
        )
        
        for listener in self.health_listeners:
            listener(spec.target, False)
        
        duration = params.get('duration_us')
        if duration:
            self.sim.schedule(lambda: self.heal(spec.target), duration)
    
    def heal(self, node_id):
        
        clock = self.clocks[node_id]
        clock.healthy = True
        clock.desync_offset = 0.0
        clock.desync_drift_ppm = 0.0
        
        logger.info('t=%d clock on %s healed', self.sim.now, node_id)
        
        for listener in self.health_listeners:
            listener(node_id, True)
