from alignment_scorer.management.base import ScorerCommand
from alignment_scorer.pipeline import evaluate_teacher, write_report
from alignment_scorer.records import load_manifest
from alignment_scorer.teachers import load_teacher


class Command(ScorerCommand):
    help = "Report the teacher's own SRCC against a labelled manifest"

    def add_arguments(self, parser):
        parser.add_argument('--teacher', required=True, help='teacher.json or an external score TSV')
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--report', help='JSON report to write')

    def run(self, **options):
        report = evaluate_teacher(load_teacher(options['teacher']), load_manifest(options['manifest']))
        if options['report']:
            write_report(report, options['report'])
        self.stdout.write(self.style.SUCCESS(f"Teacher SRCC {report.srcc:.6f} over {report.n} examples"))
