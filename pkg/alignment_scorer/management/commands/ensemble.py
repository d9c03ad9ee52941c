from alignment_scorer.exceptions import ConfigError
from alignment_scorer.management.base import ScorerCommand
from alignment_scorer.pipeline import ensemble


def parse_range(text: str):
    try:
        lo, hi = (float(part) for part in text.split(','))
    except ValueError:
        raise ConfigError(f'--range expects "lo,hi", got {text!r}')
    if not lo < hi:
        raise ConfigError(f'--range needs lo < hi, got {text!r}')
    return lo, hi


class Command(ScorerCommand):
    help = 'Rank-average two or more prediction files into one'

    def add_arguments(self, parser):
        parser.add_argument('--inputs', nargs='+', required=True, help='Prediction TSV files')
        parser.add_argument('--range', default='0,1', help='Output score range as lo,hi (default: 0,1)')
        parser.add_argument('--out', required=True, help='Prediction TSV to write')
        parser.add_argument('--labels', help='Labelled manifest or label TSV; prints the ensemble SRCC')

    def run(self, **options):
        lo, hi = parse_range(options['range'])
        combined, score = ensemble(options['inputs'], lo, hi, options['out'], options['labels'])
        self.stdout.write(self.style.SUCCESS(
            f"Ensembled {len(options['inputs'])} members over {len(combined)} ids into {options['out']}"
        ))
        if score is not None:
            self.stdout.write(f"Ensemble SRCC: {score:.6f}")
