"""
Step logs: short, named narratives kept on the object that produced them,
such as the choreography of one mode transition. Unlike module loggers they
survive the run and are copied into reports.
"""
from dataclasses import dataclass, field


class LogLine(str):
    """
    A step log line. Behaves as the string it was written as, and also
    remembers its ``tags`` and the simulated time ``t`` it was written at.
    """
    
    def __new__(cls, value, tags=(), t=None):
        
        obj = super().__new__(cls, value)
        obj.tags = tuple(tags)
        obj.t = t
        
        return obj
    
    def __repr__(self):
        
        output = super().__repr__()
        
        if self.tags:
            output = f'{output}, tags={",".join(sorted(self.tags))}'
        
        return output


@dataclass
class StepLog:
    
    name: str
    lines: list = field(default_factory=list)
    
    def select(self, tags=None, raw=False):
        """
        Return the lines carrying any of ``tags`` (all lines if no tags are
        given), as a new list if ``raw=True`` or joined into one string.
        """
        
        tags = set(tags or ())
        lines = [line for line in self.lines if not tags or tags.intersection(line.tags)]
        
        return lines if raw else '\n'.join(lines)


class Loggable:
    """
    A mixin for keeping step logs on an instance. Logs nest: starting a log
    makes it the active one, and ending or discarding it makes the log that
    was active before it active again. Only ended logs can be retrieved.
    
    Subclasses running inside a simulation override :meth:`log_time` so that
    every line is prefixed with the simulated time it was written at.
    """
    
    def __init__(self, *args, **kwargs):
        
        self._log_stack = []
        self._finished_logs = {}
        
        super().__init__(*args, **kwargs)
    
    def log_time(self):
        
        return None
    
    def _active_log(self, error):
        
        if not self._log_stack:
            raise KeyError(error)
        
        return self._log_stack[-1]
    
    def start_log(self, name):
        
        if any(log.name == name for log in self._log_stack):
            raise ValueError(f'A log named "{name}" is already active.')
        
        self._log_stack.append(StepLog(name))
    
    def end_log(self):
        """
        End the active log and return a ``(name, lines)`` tuple. Ending a log
        under a name already used replaces the earlier log of that name.
        """
        
        log = self._active_log('No active log to end.')
        self._log_stack.pop()
        
        self._finished_logs.pop(log.name, None)
        self._finished_logs[log.name] = log
        
        return log.name, log.lines.copy()
    
    def discard_log(self):
        
        self._active_log('No active log to discard.')
        self._log_stack.pop()
    
    def has_active_log(self):
        
        return bool(self._log_stack)
    
    def log(self, *lines, tag=None):
        """
        Append each of ``lines`` to the active log, tagged with ``tag`` if
        given.
        """
        
        log = self._active_log('No active log to append to. Has one been started?')
        
        t = self.log_time()
        prefix = '' if t is None else f't={t} '
        tags = (tag, ) if tag else ()
        
        log.lines.extend(LogLine(f'{prefix}{line}', tags, t) for line in lines)
    
    def get_log(self, name, tags=None, raw=False):
        
        try:
            log = self._finished_logs[name]
        except KeyError:
            raise KeyError(f'No log found for "{name}". Has it been ended?')
        
        return log.select(tags, raw)
    
    def get_last_log(self, tags=None, raw=False):
        
        if not self._finished_logs:
            raise KeyError('No ended logs to retrieve.')
        
        return next(reversed(self._finished_logs.values())).select(tags, raw)
    
    def get_log_names(self):
        
        return list(self._finished_logs)
