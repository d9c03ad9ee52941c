from ._stage import StageCommand


class Command(StageCommand):
    help = 'Stage 1: pretrain the projection and LM on audio captioning'
    stage = 1
