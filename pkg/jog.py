from jogger.tasks import DocsTask, LintTask, TestTask
from jogger.tasks._release import ReleaseTask


def scenarios(settings, stdout, stderr):
    """
    Run every bundled scenario once, writing the reports to the default
    output directory.
    """
    
    from pathlib import Path
    
    names = sorted(p.stem for p in Path('geotxn/scenarios').glob('*.toml'))
    
    return ' && '.join(f'python manage.py geotxn run {name}; test $? -ne 2' for name in names)


tasks = {
    'release': ReleaseTask,
    
    # Dev tasks
    'docs': DocsTask,
    'lint': LintTask,
    'test': TestTask,
    'slow_tests': 'python manage.py test --no-input --tag slow',
    'scenarios': scenarios,
}
