# Sphinx configuration for the geotxn documentation.
#
# autodoc imports the geotxn package, so Django is configured first using the
# minimal ``rtd_settings`` module at the repository root.

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

import django  # noqa: E402

os.environ['DJANGO_SETTINGS_MODULE'] = 'rtd_settings'
django.setup()

from geotxn import __version__  # noqa: E402

# -- General configuration ------------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode', 'sphinx_rtd_theme']

source_suffix = '.rst'
master_doc = 'index'

project = 'geotxn'
copyright = '2026, The geotxn developers'

# The short X.Y version and the full version, including alpha/beta/rc tags.
version = '.'.join(__version__.split('.')[:2])
release = __version__

exclude_patterns = ['_build']
pygments_style = 'sphinx'

autodoc_member_order = 'bysource'

# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'
htmlhelp_basename = 'geotxndoc'

# -- Options for manual page output ---------------------------------------

man_pages = [
    ('index', 'geotxn', 'geotxn Documentation', ['The geotxn developers'], 1),
]
