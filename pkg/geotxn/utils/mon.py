import time

from geotxn.utils.table import Table


def _get_stat_rows(monitor, scale, unit):
    
    rows = []
    
    def build_rows(parent, _indent=0):
        
        parent_total = parent.stats['total']
        
        # Sort the monitors by their totals, largest first
        children = sorted(parent.children.values(), key=lambda m: m.stats['total'], reverse=True)
        
        for child in children:
            stats = child.stats
            total = stats['total']
            
            if parent_total:
                pc = total / parent_total * 100
            else:
                pc = 0
            
            rows.append((
                '{0}{1}'.format('  ' * _indent, child.name),
                stats['min'] / scale,
                stats['max'] / scale,
                stats['avg'] / scale,
                total / scale,
                stats['count'],
                '{0:.2f}%'.format(pc),
            ))
            
            if child.children:
                build_rows(child, _indent=_indent + 1)
    
    build_rows(monitor)
    
    return rows


class M:
    """
    A named accumulator of durations. Values are either recorded directly
    (``record()``, used for simulated durations in microseconds) or measured
    around a block of real code (``start()``/``stop()``, in seconds of wall
    clock). Monitors nest: a child's values also count towards its parent's
    totals when recorded through ``record(..., propagate=True)``.
    """
    
    def __init__(self, name, parent=None):
        
        self.name = name
        
        self.parent = parent
        self.children = {}
        
        if parent:
            parent.children[name] = self
        
        self.stats = {
            'count': 0,
            'min': 0,
            'max': 0,
            'avg': 0,
            'total': 0,
        }
        
        self.start_time = None
    
    def child(self, name):
        """
        Return the child monitor with the given name, creating it if it does
        not yet exist.
        """
        
        try:
            return self.children[name]
        except KeyError:
            return M(name, self)
    
    def record(self, value, propagate=False):
        
        stats = self.stats
        
        if not stats['count']:
            stats['min'] = value
            stats['max'] = value
        else:
            stats['min'] = min(stats['min'], value)
            stats['max'] = max(stats['max'], value)
        
        stats['count'] += 1
        stats['total'] += value
        stats['avg'] = stats['total'] / stats['count']
        
        if propagate and self.parent:
            self.parent.record(value, propagate=True)
    
    def start(self):
        
        self.start_time = time.perf_counter()
    
    def stop(self):
        
        if self.start_time is None:
            raise Exception('Monitor not started.')
        
        elapsed = time.perf_counter() - self.start_time
        self.start_time = None
        self.record(elapsed)
        
        return elapsed
    
    def as_dict(self):
        
        data = dict(self.stats)
        
        if self.children:
            data['children'] = {name: child.as_dict() for name, child in self.children.items()}
        
        return data
    
    def build_table(self, title, unit='ms', scale=1000, precision=3):
        
        t = Table(
            headings=['Phase', f'Min ({unit})', f'Max ({unit})', f'Avg ({unit})', f'Total ({unit})', 'Count', '%'],
            title=title,
            footer='Total: {0:.{1}f}{2} over {3} records'.format(
                self.stats['total'] / scale, precision, unit, self.stats['count']
            ),
            precision=precision
        )
        
        t.add_rows(_get_stat_rows(self, scale, unit))
        
        return t.build_table()
    
    def __str__(self):
        
        return '{0}: {1} records, {2:.3f} total'.format(self.name, self.stats['count'], self.stats['total'])


class Mon:
    """
    Registry of wall-clock monitors keyed by name, used to time the stages of
    a scenario run (build, simulate, check).
    """
    
    def __init__(self):
        
        self.root = M('run')
        self.monitors = {}
    
    def start(self, name):
        
        if name in self.monitors:
            raise ValueError(f'Monitor "{name}" is already running.')
        
        m = self.root.child(name)
        self.monitors[name] = m
        m.start()
        
        return m
    
    def stop(self, name):
        
        try:
            m = self.monitors.pop(name)
        except KeyError:
            raise Exception('Attempted to end a monitor that was never started!')
        
        m.stop()
        
        return m
    
    def as_dict(self):
        
        return {name: child.stats['total'] for name, child in self.root.children.items()}


def mon(name):
    """
    Decorator timing each call of the wrapped method in the ``Mon`` registry
    found on the instance's ``monitors`` attribute.
    """
    
    def decorator(fn):
        
        def wrapper(self, *args, **kwargs):
            
            self.monitors.start(name)
            try:
                return fn(self, *args, **kwargs)
            finally:
                self.monitors.stop(name)
        
        wrapper.__name__ = fn.__name__
        wrapper.__doc__ = fn.__doc__
        
        return wrapper
    
    return decorator
