# Minimal settings file to allow the running of tests and the geotxn
# management command.
import os

SECRET_KEY = 'abcde12345'  # nosec

INSTALLED_APPS = [
    'geotxn',
]

DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'  # suppress system check warning

GEOTXN_OUTPUT_DIR = os.environ.get('GEOTXN_OUTPUT_DIR', './geotxn-reports')

# Simulated-time log lines from the simulator and protocols. The management
# command raises or lowers the "geotxn" level according to --verbosity.
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '%(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'geotxn': {
            'handlers': ['console'],
            'level': os.environ.get('GEOTXN_LOG_LEVEL', 'WARNING'),
        },
    },
}

# Add django-extensions to INSTALLED_APPS if it is present. This provides extra
# dev tools, e.g. shell_plus, but isn't required - e.g. for testing.
try:
    import django_extensions  # noqa: F401 (import unused)
except ImportError:
    pass
else:
    INSTALLED_APPS.append('django_extensions')
    
    SHELL_PLUS_POST_IMPORTS = (
        ('geotxn.config', 'load_scenario'),
        ('geotxn.cluster', 'Cluster'),
        ('geotxn.utils.mon', 'Mon'),
    )
