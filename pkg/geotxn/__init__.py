__version__ = '0.1.0a1'

# Shortcuts to commonly used types
from geotxn.txtime.timestamps import Mode, Timestamp  # NOQA
from geotxn.utils.mon import M  # NOQA
