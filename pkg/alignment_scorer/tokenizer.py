import logging

from .config import BYTE_VOCAB, ModelConfig

logger = logging.getLogger(__name__)


class ByteTokenizer:
    """
    UTF-8 byte-level tokenizer; ids 0..255 are bytes, special ids come from
    the model config
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.special_ids = {cfg.audio_start_id, cfg.audio_end_id, cfg.score_id, cfg.eos_id}

    def encode(self, text: str) -> list:
        return list(text.encode('utf-8'))

    def decode(self, ids) -> str:
        data = bytes(i for i in ids if 0 <= i < BYTE_VOCAB)
        return data.decode('utf-8', errors='replace')
