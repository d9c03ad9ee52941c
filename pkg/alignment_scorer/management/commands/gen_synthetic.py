from pathlib import Path

from django.conf import settings

from alignment_scorer.management.base import ScorerCommand
from alignment_scorer.teachers import generate_synthetic_corpus

STAGE_CONFIGS = {
    'stage1.conf': """\
# Captioning pretraining on the matched pairs
stage = 1
train_manifest = pretrain.tsv
lr = 3e-3
epochs = 3
seed = {seed}
""",
    'stage2.conf': """\
# Pseudo-label ranking pretraining: k negatives per pair, teacher labels
stage = 2
train_manifest = pretrain.tsv
valid_manifest = heldout.tsv
teacher = teacher.json
negatives_per_positive = {k}
init_checkpoint = stage1.ckpt
lr = 3e-3
epochs = 30
seed = {seed}
""",
    'stage3.conf': """\
# Fine-tuning on human-style labels with SpecAugment
stage = 3
train_manifest = finetune_train.tsv
valid_manifest = finetune_valid.tsv
init_checkpoint = stage2.ckpt
lr = 1e-3
epochs = 20
seed = {seed}
""",
}


class Command(ScorerCommand):
    help = 'Generate a synthetic corpus, its planted teacher and desk-scale stage configs'

    def add_arguments(self, parser):
        parser.add_argument('--n', type=int, default=2000, help='Matched pretraining pairs (default: 2000)')
        parser.add_argument('--seed', type=int, default=7, help='Corpus seed (default: 7)')
        parser.add_argument('--teacher-seed', type=int, default=13, help='Planted teacher seed (default: 13)')
        parser.add_argument('--out-dir', help='Output directory (default: ALIGNSCORE_DATA_ROOT)')
        parser.add_argument('--negatives', type=int, default=3, help='Negatives per matched pair (default: 3)')
        parser.add_argument('--latent-dim', type=int, default=8, help='Latent dimension of the world (default: 8)')
        parser.add_argument('--no-configs', action='store_true', help='Do not write stage config files')

    def run(self, **options):
        out_dir = Path(options['out_dir'] or settings.ALIGNSCORE_DATA_ROOT)
        corpus = generate_synthetic_corpus(options['n'], options['seed'], options['teacher_seed'],
                                           latent_dim=options['latent_dim'],
                                           negatives_per_positive=options['negatives'])
        paths = corpus.write(out_dir)
        if not options['no_configs']:
            for name, template in STAGE_CONFIGS.items():
                target = out_dir / name
                target.write_text(template.format(seed=options['seed'], k=options['negatives']), encoding='utf-8')
                paths[name] = target
        for name, path in paths.items():
            self.stdout.write(f"  {name}: {path}")
        self.stdout.write(self.style.SUCCESS(f"Synthetic corpus written to {out_dir}"))
