#!/usr/bin/env python
"""
Command-line entry point for the development project. Runs the test suite
(``python manage.py test``) and the ``geotxn`` command against ``settings``.
"""
import os
import sys

if __name__ == '__main__':
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'settings')
    
    from django.core.management import execute_from_command_line
    
    execute_from_command_line(sys.argv)
