#!/usr/bin/env python
"""Command-line entry point: training stages, evaluation and ensembling."""
import os
import sys


def main():
    """Run alignment scorer commands (stage1, stage2, stage3, eval, ensemble, ...)."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Install the packages from requirements.txt "
            "into the active virtual environment first."
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
