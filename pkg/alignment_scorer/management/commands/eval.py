from pathlib import Path

from alignment_scorer.checkpoint import load_checkpoint
from alignment_scorer.management.base import ScorerCommand, record_runs
from alignment_scorer.pipeline import evaluate, write_report
from alignment_scorer.records import load_manifest
from alignment_scorer.utils import record_eval_run


class Command(ScorerCommand):
    help = 'Score a labelled manifest with a checkpoint and report SRCC against the labels'

    def add_arguments(self, parser):
        parser.add_argument('--ckpt', required=True, help='Checkpoint with a score head')
        parser.add_argument('--manifest', required=True, help='Labelled manifest')
        parser.add_argument('--report', required=True, help='JSON report to write')
        parser.add_argument('--predictions', help='Prediction TSV (default: next to the report)')
        parser.add_argument('--data-root', help='Directory feature files are relative to')
        parser.add_argument('--workers', type=int, help='Inference threads (default: ALIGNSCORE_INFERENCE_WORKERS)')
        parser.add_argument('--split', default='', help='Split name stored with the evaluation record')

    def run(self, **options):
        manifest = Path(options['manifest'])
        data_root = options['data_root'] or str(manifest.resolve().parent)
        ckpt = load_checkpoint(options['ckpt'])
        report = evaluate(ckpt, load_manifest(manifest), data_root=data_root, workers=options['workers'])
        predictions_path = write_report(report, options['report'], options['predictions'])
        if record_runs():
            record_eval_run(report, options['ckpt'], manifest, predictions_path, options['split'])
        self.stdout.write(self.style.SUCCESS(
            f"SRCC {report.srcc:.6f} over {report.n} examples (checkpoint {report.checkpoint_id})"
        ))
