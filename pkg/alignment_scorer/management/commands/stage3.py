from ._stage import StageCommand


class Command(StageCommand):
    help = 'Stage 3: fine-tune with ListNet on human-style labels (SpecAugment on)'
    stage = 3
