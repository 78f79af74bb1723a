import copy

from geotxn.config import apply_override, validate_scenario
from geotxn.sim import Node
from geotxn.verify.history import History

SMALL_SCENARIO = {
    'name': 'small',
    'seed': 7,
    'duration_ms': 400,
    'topology': {
        'regions': ['east', 'west'],
        'latency_ms': {'east->west': 10},
        'intra_region_latency_ms': 0.25,
        'compute_nodes': 2,
        'shards': 2,
        'replicas_per_shard': 1,
        'tables': 2,
    },
    'ror': {
        'rcp_interval_ms': 20,
        'heartbeat_interval_ms': 20,
        'metrics_interval_ms': 20,
    },
    'workloads': [{
        'clients': 2,
        'key_space': 40,
        'read_fraction': 0.5,
        'think_time_ms': 2,
    }],
}


def small_scenario(**overrides):
    """
    Return a validated ``ScenarioConfig`` for a small two-region cluster,
    cheap enough to run inside a test. Keyword arguments override settings
    by dotted key, with ``__`` standing in for the dots::
        
        small_scenario(modes__initial='gclock', workloads__0__clients=4)
    """
    
    data = copy.deepcopy(SMALL_SCENARIO)
    
    for key, value in overrides.items():
        apply_override(data, key.replace('__', '.'), value)
    
    return validate_scenario(data)


class EchoNode(Node):
    """
    A bare node for engine tests. It answers ``echo`` with the request
    payload, ``fail`` with the error named in the payload and ``slow`` after
    sleeping for the requested number of microseconds. Every delivered
    request is kept in ``received``.
    """
    
    role = 'echo'
    
    def __init__(self, *args, **kwargs):
        
        super().__init__(*args, **kwargs)
        
        self.received = []
        
        self.handles('echo', self.handle_echo)
        self.handles('fail', self.handle_fail)
        self.handles('slow', self.handle_slow)
    
    def handle_echo(self, msg):
        
        self.received.append((self.now, msg.src, msg.payload))
        
        return msg.payload
    
    def handle_fail(self, msg):
        
        self.received.append((self.now, msg.src, msg.payload))
        
        raise msg.payload
    
    def handle_slow(self, msg):
        
        self.received.append((self.now, msg.src, msg.payload))
        yield self.sleep(msg.payload)
        
        return 'done'


def outcome_of(node, gen):
    """
    Run ``gen`` as a process on ``node`` and return a dict that will hold
    ``value`` or ``error`` once the process finishes.
    """
    
    outcome = {}
    
    def wrapper():
        
        try:
            outcome['value'] = yield from gen
        except Exception as exc:
            outcome['error'] = exc
    
    node.spawn(wrapper())
    
    return outcome


def build_history(*events):
    """
    Build a ``History`` from ``(kind, true_time, txn_id, payload)`` tuples.
    """
    
    history = History()
    for kind, true_time, txn_id, payload in events:
        history.record(kind, true_time, txn_id, **payload)
    
    return history
