# Minimal settings file to allow the generation of documentation on readthedocs.org.

SECRET_KEY = 'abcde12345'  # nosec

# Install minimal apps - only to avoid import errors for autodoc
INSTALLED_APPS = [
    'geotxn',
]

DATABASES = {}
