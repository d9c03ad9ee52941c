from alignment_scorer.checkpoint import save_checkpoint
from alignment_scorer.config import load_stage_config
from alignment_scorer.management.base import ScorerCommand
from alignment_scorer.pipeline import initialize


class Command(ScorerCommand):
    help = 'Write a freshly initialised checkpoint (score head included), e.g. for a stage-3-only run'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Stage config file; its model settings and seed are used')
        parser.add_argument('--out', required=True, help='Checkpoint to write')
        parser.add_argument('--seed', type=int, help='Override the config seed')

    def run(self, **options):
        cfg = load_stage_config(options['config'], defaults={'stage': '3'}, seed=options['seed'])
        ckpt = initialize(cfg)
        save_checkpoint(ckpt, options['out'])
        self.stdout.write(self.style.SUCCESS(
            f"Initial checkpoint {ckpt.checkpoint_id} ({len(ckpt.params)} tensors) written to {options['out']}"
        ))
