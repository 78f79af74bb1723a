from django.conf import settings

DEFAULTS = {
    'OUTPUT_DIR': './geotxn-reports',
    'SCENARIO_DIRS': (),
    'REPORT_PRECISION': 3,
    'TRACE_EVENTS': True,
}


def get_setting(name):
    """
    Return the value of the ``GEOTXN_<name>`` setting, falling back to the
    documented default when the project does not define it.
    """
    
    try:
        default = DEFAULTS[name]
    except KeyError:
        raise KeyError(f'Unknown geotxn setting "{name}".')
    
    return getattr(settings, f'GEOTXN_{name}', default)
