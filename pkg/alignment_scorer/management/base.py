import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from alignment_scorer.exceptions import AlignmentScorerError

logger = logging.getLogger(__name__)


def absolute(path):
    """
    Command-line paths are relative to the working directory, not the data root
    """
    return str(Path(path).resolve()) if path else None


def record_runs() -> bool:
    return getattr(settings, 'ALIGNSCORE_RECORD_RUNS', False)


class ScorerCommand(BaseCommand):
    """
    Runs `run(**options)` and turns scorer errors into CommandError with the
    error family's exit code (2 config, 3 data, 4 numeric)
    """

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except AlignmentScorerError as e:
            logger.error(f"{type(self).__module__.rsplit('.', 1)[-1]} failed: {e}")
            raise CommandError(f"{type(e).__name__}: {e}", returncode=e.exit_code) from e

    def run(self, **options):
        raise NotImplementedError
