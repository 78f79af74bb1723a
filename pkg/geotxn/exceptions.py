class GeoTxnError(Exception):
    """
    Base class for all errors raised by the simulator and its protocols.
    Errors of this type raised inside a simulated RPC handler are carried back
    to the caller and re-raised in the caller's process.
    
    The simulation kernel re-raises a failed event's error as
    ``type(exc)(*exc.args)``, so subclasses taking constructor arguments pass
    exactly those arguments on to ``Exception`` and describe themselves with
    the ``message`` template, formatted with the instance's attributes.
    """
    
    message = None
    
    def __str__(self):
        
        if self.message is None:
            return super().__str__()
        
        return self.message.format(**vars(self))


class ConfigError(GeoTxnError):
    """
    Raised when a scenario file cannot be parsed or fails validation, or when
    a sweep is given an unusable parameter.
    """
    
    pass


class EngineStopped(GeoTxnError):
    
    message = 'The simulation has finished; no further events can be scheduled.'


class UnknownTarget(GeoTxnError):
    
    message = 'Unknown fault target "{target}".'
    
    def __init__(self, target):
        
        self.target = target
        
        super().__init__(target)


class NodeCrashed(GeoTxnError):
    
    message = 'Node "{node}" has crashed.'
    
    def __init__(self, node):
        
        self.node = node
        
        super().__init__(node)


class ClockUnhealthy(GeoTxnError):
    
    message = 'The clock on node "{node}" is not synchronised within its error bound.'
    
    def __init__(self, node):
        
        self.node = node
        
        super().__init__(node)


class AuthorityUnavailable(GeoTxnError):
    """
    Raised when the GTM server cannot be reached to issue a timestamp.
    """
    
    pass


class TransitionInProgress(GeoTxnError):
    
    message = 'A {direction} transition is already in progress.'
    
    def __init__(self, direction):
        
        self.direction = direction
        
        super().__init__(direction)


class RpcTimeout(GeoTxnError):
    
    message = 'No reply from "{dst}" to "{kind}" sent by "{src}".'
    
    def __init__(self, src, dst, kind):
        
        self.src = src
        self.dst = dst
        self.kind = kind
        
        super().__init__(src, dst, kind)


class TransactionAborted(GeoTxnError):
    """
    Raised by the commit path when a transaction cannot commit. ``reason`` is
    a short machine-friendly label recorded in the history.
    """
    
    reason = 'aborted'
    
    def __init__(self, txn_id, detail=''):
        
        self.txn_id = txn_id
        self.detail = detail
        
        super().__init__(txn_id, detail)
    
    def __str__(self):
        
        message = f'Transaction {self.txn_id} aborted ({self.reason})'
        if self.detail:
            message = f'{message}: {self.detail}'
        
        return message


class WriteConflict(TransactionAborted):
    
    reason = 'write_conflict'


class StaleModeAbort(TransactionAborted):
    
    reason = 'stale_gtm'


class ParticipantFailed(TransactionAborted):
    
    reason = 'participant_failed'


class RoutingError(GeoTxnError):
    
    message = 'Key "{key}" belongs to shard {owner}, not shard {shard}.'
    
    def __init__(self, key, shard, owner):
        
        self.key = key
        self.shard = shard
        self.owner = owner
        
        super().__init__(key, shard, owner)


class UnknownTransaction(GeoTxnError):
    
    message = 'Unknown transaction {txn_id}.'
    
    def __init__(self, txn_id):
        
        self.txn_id = txn_id
        
        super().__init__(txn_id)


class ReadTimeout(GeoTxnError):
    
    message = 'Read of "{key}" on "{node}" timed out waiting for a pending transaction.'
    
    def __init__(self, node, key):
        
        self.node = node
        self.key = key
        
        super().__init__(node, key)


class ReplicaReadTimeout(ReadTimeout):
    """
    A replica read blocked past its timeout, signalling excessive replication
    lag. The coordinator retries the read on the primary.
    """
    
    pass


class ShardUnavailable(GeoTxnError):
    
    message = 'No live node can serve shard {shard}.'
    
    def __init__(self, shard):
        
        self.shard = shard
        
        super().__init__(shard)


class ProtocolViolation(GeoTxnError):
    """
    Raised for conditions that the protocols guarantee never happen, such as
    a gap in a redo stream. These indicate a bug rather than a runtime fault.
    """
    
    pass
