from pathlib import Path

from alignment_scorer.checkpoint import save_checkpoint
from alignment_scorer.config import load_stage_config
from alignment_scorer.exceptions import AlignmentScorerError, ConfigError
from alignment_scorer.management.base import ScorerCommand, absolute, record_runs
from alignment_scorer.pipeline import STAGE_RUNNERS
from alignment_scorer.utils import RunLogger, finish_stage_run, start_stage_run


class StageCommand(ScorerCommand):
    stage = None

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Stage config file (flat key = value)')
        parser.add_argument('--out', required=True, help='Checkpoint to write')
        parser.add_argument('--init', help='Checkpoint to start from (overrides init_checkpoint)')
        parser.add_argument('--log', help='JSON-lines metric log (default: <out>.jsonl)')
        parser.add_argument('--seed', type=int, help='Override the config seed')
        parser.add_argument('--data-root', help='Directory manifest paths are relative to')

    def run(self, **options):
        out = Path(options['out'])
        log_path = absolute(options['log']) or str(out.with_suffix('.jsonl').resolve())
        cfg = load_stage_config(
            options['config'],
            defaults={'stage': str(self.stage), 'data_root': str(Path(options['config']).resolve().parent)},
            init_checkpoint=absolute(options['init']),
            log_path=log_path,
            seed=options['seed'],
            data_root=absolute(options['data_root']),
        )
        if cfg.stage != self.stage:
            raise ConfigError(f'config is for stage {cfg.stage}, not stage {self.stage}')

        run = None
        if record_runs():
            run = start_stage_run(f'stage{self.stage}', cfg.seed, '', cfg.init_checkpoint or '')
        run_log = RunLogger(log_path, run=run)
        try:
            result = STAGE_RUNNERS[self.stage](cfg, run_log=run_log)
            save_checkpoint(result.checkpoint, out)
        except AlignmentScorerError as e:
            finish_stage_run(run, 'failed', error=str(e))
            raise
        ckpt = result.checkpoint
        finish_stage_run(run, 'completed', out, ckpt.checkpoint_id, result.final_loss, result.best_epoch,
                         config_hash=ckpt.config_hash)

        summary = f"Stage {self.stage} checkpoint {ckpt.checkpoint_id} written to {out}"
        if result.final_loss is not None:
            summary += f" (final train loss {result.final_loss:.6f})"
        if result.best_epoch is not None:
            summary += f", best epoch {result.best_epoch}"
        self.stdout.write(self.style.SUCCESS(summary))
