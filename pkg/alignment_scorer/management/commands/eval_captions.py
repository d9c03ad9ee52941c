from pathlib import Path

from alignment_scorer.checkpoint import load_checkpoint
from alignment_scorer.management.base import ScorerCommand
from alignment_scorer.pipeline import evaluate_captions
from alignment_scorer.records import load_manifest


class Command(ScorerCommand):
    help = 'Greedy-caption a manifest and report the mean caption cosine similarity'

    def add_arguments(self, parser):
        parser.add_argument('--ckpt', required=True)
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--embed-seed', type=int, default=7, help='Seed of the trigram text embedder (default: 7)')
        parser.add_argument('--max-len', type=int, default=64, help='Longest caption to generate (default: 64)')
        parser.add_argument('--limit', type=int, help='Only caption the first N records')
        parser.add_argument('--show', action='store_true', help='Print every generated caption')

    def run(self, **options):
        manifest = Path(options['manifest'])
        records = load_manifest(manifest)
        if options['limit']:
            records = records[:options['limit']]
        report = evaluate_captions(load_checkpoint(options['ckpt']), records, options['embed_seed'],
                                   options['max_len'], data_root=str(manifest.resolve().parent))
        if options['show']:
            for record in records:
                self.stdout.write(f"{record.id}\t{report.captions[record.id]!r}\t{record.caption!r}")
        self.stdout.write(self.style.SUCCESS(
            f"Mean caption similarity {report.mean_similarity:.6f} over {report.n} records"
        ))
