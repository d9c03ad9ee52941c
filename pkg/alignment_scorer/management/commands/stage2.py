from ._stage import StageCommand


class Command(StageCommand):
    help = 'Stage 2: add the score head and train with ListNet on teacher pseudo-labels'
    stage = 2
