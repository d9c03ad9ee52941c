"""
The scoring network: frozen audio features -> temporal average pooling ->
SwiGLU projection -> causal LM over

    text tokens, AUDIO_START, audio embeddings, AUDIO_END, SCORE

-> linear score head on the SCORE position. The same LM with its output
head does greedy captioning for stage 1.
"""
import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Union

import numpy as np

from .audio import FrozenAudioEncoder, encoder_projection, temporal_average_pool
from .augment import spec_augment
from .config import BYTE_VOCAB, ModelConfig, SpecAugmentParams
from .exceptions import SequenceTooLongError, VocabError
from .losses import next_token_cross_entropy
from .optim import ParamSet
from .rng import make_rng
from .tensor import Tensor, concat, embedding, matmul, rms_norm, silu, softmax
from .tokenizer import ByteTokenizer

logger = logging.getLogger(__name__)

Weights = Mapping[str, Tensor]


def _weights(params: Union[ParamSet, Weights]) -> Weights:
    if isinstance(params, ParamSet):
        return params.as_tensors(track=False)
    return params


def _normal(seed: int, name: str, shape, std: float) -> np.ndarray:
    return std * make_rng(seed, 'init', name).standard_normal(shape)


def init_params(cfg: ModelConfig, seed: int, with_score_head: bool = False,
                score_bias: float = 0.0) -> ParamSet:
    """
    Fresh parameters. Each tensor draws from its own stream (seed, 'init',
    name), so adding or removing a tensor never shifts the others.
    """
    std, d, f = cfg.init_std, cfg.llm_dim, cfg.ffn_dim
    params = ParamSet()
    params.add('encoder.projection', encoder_projection(cfg, cfg.encoder_seed), trainable=False)
    width = cfg.enc_dim
    for i in range(cfg.proj_layers):
        prefix = f'projection.{i}.'
        params.add(prefix + 'gate', _normal(seed, prefix + 'gate', (width, cfg.proj_hidden), std))
        params.add(prefix + 'value', _normal(seed, prefix + 'value', (width, cfg.proj_hidden), std))
        params.add(prefix + 'out', _normal(seed, prefix + 'out', (cfg.proj_hidden, d), std))
        width = d
    params.add('llm.embed', _normal(seed, 'llm.embed', (cfg.vocab_size, d), std))
    params.add('llm.pos', _normal(seed, 'llm.pos', (cfg.max_seq_len, d), std))
    for layer in range(cfg.llm_layers):
        prefix = f'llm.layers.{layer}.'
        params.add(prefix + 'attn_norm', np.ones(d))
        for proj in ('wq', 'wk', 'wv', 'wo'):
            params.add(prefix + proj, _normal(seed, prefix + proj, (d, d), std))
        params.add(prefix + 'ffn_norm', np.ones(d))
        params.add(prefix + 'ffn.gate', _normal(seed, prefix + 'ffn.gate', (d, f), std))
        params.add(prefix + 'ffn.value', _normal(seed, prefix + 'ffn.value', (d, f), std))
        params.add(prefix + 'ffn.out', _normal(seed, prefix + 'ffn.out', (f, d), std))
    params.add('llm.final_norm', np.ones(d))
    params.add('lm_head.weight', _normal(seed, 'lm_head.weight', (d, cfg.vocab_size), std))
    if with_score_head:
        params = add_score_head(params, cfg, seed, bias=score_bias)
    return params


def add_score_head(params: ParamSet, cfg: ModelConfig, seed: int, bias: float = 0.0) -> ParamSet:
    """
    Attach a Linear(llm_dim -> 1) head: weights N(0, 0.02), bias `bias`
    """
    head = ParamSet()
    head.add('score_head.weight', _normal(seed, 'score_head.weight', (cfg.llm_dim,), 0.02))
    head.add('score_head.bias', np.array([float(bias)]))
    return params.merged(head)


def swiglu(x: Tensor, gate: Tensor, value: Tensor, out: Tensor) -> Tensor:
    """
    out(silu(x @ gate) * (x @ value)), per row
    """
    return matmul(silu(matmul(x, gate)) * matmul(x, value), out)


def project_audio(pooled, params: Union[ParamSet, Weights]) -> Tensor:
    """
    Stacked SwiGLU blocks applied to each pooled frame independently
    """
    w = _weights(params)
    x = pooled if isinstance(pooled, Tensor) else Tensor(pooled, dtype=w['projection.0.gate'].dtype)
    layer = 0
    while f'projection.{layer}.gate' in w:
        prefix = f'projection.{layer}.'
        x = swiglu(x, w[prefix + 'gate'], w[prefix + 'value'], w[prefix + 'out'])
        layer += 1
    return x


@dataclass
class InputSequence:
    """
    Slots are token ids, or None where a continuous audio embedding sits.
    Audio embeddings fill the contiguous block right after AUDIO_START.
    """
    slots: List[Optional[int]]
    embeds: Optional[Tensor]
    audio_start: int
    audio_end: int
    score: Optional[int]

    def __len__(self):
        return len(self.slots)

    @property
    def readout(self) -> int:
        return self.score if self.score is not None else self.audio_end


def _check_length(length: int, cfg: ModelConfig):
    if length > cfg.max_seq_len:
        raise SequenceTooLongError(f'sequence of {length} slots exceeds max_seq_len {cfg.max_seq_len}')


def assemble_sequence(text_token_ids: Sequence[int], audio_embeds: Tensor, cfg: ModelConfig) -> InputSequence:
    """
    text, AUDIO_START, audio embeds, AUDIO_END, SCORE (SCORE omitted for
    the last-token readout)
    """
    text = [int(t) for t in text_token_ids]
    count = audio_embeds.shape[0]
    with_score = cfg.score_readout == 'score_token'
    _check_length(len(text) + count + 2 + int(with_score), cfg)
    slots = text + [cfg.audio_start_id] + [None] * count + [cfg.audio_end_id]
    score = None
    if with_score:
        slots.append(cfg.score_id)
        score = len(slots) - 1
    return InputSequence(slots=slots, embeds=audio_embeds, audio_start=len(text),
                         audio_end=len(text) + count + 1, score=score)


def assemble_caption_sequence(audio_embeds: Tensor, caption_ids: Sequence[int], cfg: ModelConfig) -> InputSequence:
    """
    AUDIO_START, audio embeds, AUDIO_END, caption tokens (the captioning layout)
    """
    caption = [int(t) for t in caption_ids]
    count = audio_embeds.shape[0]
    _check_length(count + 2 + len(caption), cfg)
    slots = [cfg.audio_start_id] + [None] * count + [cfg.audio_end_id] + caption
    return InputSequence(slots=slots, embeds=audio_embeds, audio_start=0, audio_end=count + 1, score=None)


def _check_vocab(token_ids, cfg: ModelConfig):
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        bad = ids[(ids < 0) | (ids >= cfg.vocab_size)][0]
        raise VocabError(f'token id {bad} outside vocabulary of {cfg.vocab_size}')


def _embed_slots(seq: InputSequence, w: Weights, cfg: ModelConfig) -> Tensor:
    token_ids = [s for s in seq.slots if s is not None]
    _check_vocab(token_ids, cfg)
    rows = embedding(w['llm.embed'], token_ids)
    if seq.embeds is None or seq.embeds.shape[0] == 0:
        return rows
    split = seq.audio_start + 1
    pieces = [rows[:split], seq.embeds]
    if split < len(token_ids):
        pieces.append(rows[split:])
    return concat(pieces, axis=0)


@dataclass
class SequenceBatch:
    """
    Several sequences of one layout stacked into a B x L grid. Every row is
    prefix tokens, then the audio embeddings, then suffix tokens; `pad` marks
    filler slots and `positions` the absolute position of each slot.
    """
    prefix_ids: np.ndarray
    embeds: Tensor
    suffix_ids: np.ndarray
    pad: np.ndarray
    positions: np.ndarray
    readout: int = -1

    @property
    def width(self) -> int:
        return self.pad.shape[1]

    def attention_block(self) -> Optional[np.ndarray]:
        """
        B x 1 x L x L mask hiding left padding from real queries; padded
        queries only see themselves
        """
        if not self.pad[:, 0].any():
            return None
        keys = self.pad[:, None, None, :]
        own = np.eye(self.width, dtype=bool)[None, None]
        return keys & ~own


def batch_score_sequences(text_lists: Sequence[Sequence[int]], audio_embeds: Tensor,
                          cfg: ModelConfig) -> SequenceBatch:
    """
    The scoring layout for a batch, left-padded so the audio block and the
    readout slot share columns across rows
    """
    count = audio_embeds.shape[1]
    with_score = cfg.score_readout == 'score_token'
    longest = max(len(t) for t in text_lists)
    suffix = [cfg.audio_end_id] + ([cfg.score_id] if with_score else [])
    width = longest + 1 + count + len(suffix)
    _check_length(width, cfg)
    rows, pad = [], np.zeros((len(text_lists), width), dtype=bool)
    for b, text in enumerate(text_lists):
        fill = longest - len(text)
        rows.append([0] * fill + [int(t) for t in text] + [cfg.audio_start_id])
        pad[b, :fill] = True
    positions = np.maximum(np.arange(width)[None, :] - pad.sum(axis=1, keepdims=True), 0)
    prefix = np.asarray(rows, dtype=np.int64)
    suffix_ids = np.tile(np.asarray(suffix, dtype=np.int64), (len(text_lists), 1))
    _check_vocab(prefix, cfg)
    return SequenceBatch(prefix_ids=prefix, embeds=audio_embeds, suffix_ids=suffix_ids,
                         pad=pad, positions=positions, readout=width - 1)


def batch_caption_sequences(audio_embeds: Tensor, caption_lists: Sequence[Sequence[int]],
                            cfg: ModelConfig) -> SequenceBatch:
    """
    The captioning layout for a batch, right-padded; causal attention already
    keeps trailing padding out of every real position
    """
    count = audio_embeds.shape[1]
    longest = max(len(c) for c in caption_lists)
    width = 2 + count + longest
    _check_length(width, cfg)
    suffix = np.zeros((len(caption_lists), 1 + longest), dtype=np.int64)
    pad = np.zeros((len(caption_lists), width), dtype=bool)
    for b, caption in enumerate(caption_lists):
        suffix[b, 0] = cfg.audio_end_id
        suffix[b, 1:1 + len(caption)] = caption
        pad[b, 2 + count + len(caption):] = True
    _check_vocab(suffix, cfg)
    prefix = np.full((len(caption_lists), 1), cfg.audio_start_id, dtype=np.int64)
    positions = np.tile(np.arange(width), (len(caption_lists), 1))
    return SequenceBatch(prefix_ids=prefix, embeds=audio_embeds, suffix_ids=suffix,
                         pad=pad, positions=positions)


def _attention(h: Tensor, w: Weights, prefix: str, cfg: ModelConfig, blocked=None) -> Tensor:
    lead, length = h.shape[:-2], h.shape[-2]
    heads, head_dim = cfg.llm_heads, cfg.head_dim
    n = len(lead)
    order = tuple(range(n)) + (n + 1, n, n + 2)

    def split(t: Tensor) -> Tensor:
        return t.reshape(*lead, length, heads, head_dim).transpose(order)

    q = split(matmul(h, w[prefix + 'wq']))
    k = split(matmul(h, w[prefix + 'wk']))
    v = split(matmul(h, w[prefix + 'wv']))
    keys = tuple(range(n + 1)) + (n + 2, n + 1)
    scores = matmul(q, k.transpose(keys)) * (1.0 / np.sqrt(head_dim))
    mixed = matmul(softmax(scores, causal=True, blocked=blocked), v)
    return matmul(mixed.transpose(order).reshape(*lead, length, cfg.llm_dim), w[prefix + 'wo'])


def _decode(x: Tensor, w: Weights, cfg: ModelConfig, blocked=None) -> Tensor:
    for layer in range(cfg.llm_layers):
        prefix = f'llm.layers.{layer}.'
        x = x + _attention(rms_norm(x, w[prefix + 'attn_norm'], cfg.norm_eps), w, prefix, cfg, blocked)
        h = rms_norm(x, w[prefix + 'ffn_norm'], cfg.norm_eps)
        x = x + swiglu(h, w[prefix + 'ffn.gate'], w[prefix + 'ffn.value'], w[prefix + 'ffn.out'])
    return rms_norm(x, w['llm.final_norm'], cfg.norm_eps)


def lm_forward(seq: InputSequence, params: Union[ParamSet, Weights], cfg: ModelConfig) -> Tensor:
    """
    Pre-norm causal transformer with learned absolute positions; returns the
    final-normed hidden states, len x llm_dim
    """
    w = _weights(params)
    _check_length(len(seq), cfg)
    x = _embed_slots(seq, w, cfg) + w['llm.pos'][:len(seq)]
    return _decode(x, w, cfg)


def lm_forward_batch(batch: SequenceBatch, params: Union[ParamSet, Weights], cfg: ModelConfig) -> Tensor:
    """
    lm_forward over a SequenceBatch; B x L x llm_dim
    """
    w = _weights(params)
    table = w['llm.embed']
    pieces = [embedding(table, batch.prefix_ids), batch.embeds]
    if batch.suffix_ids.shape[1]:
        pieces.append(embedding(table, batch.suffix_ids))
    x = concat(pieces, axis=1) + w['llm.pos'][batch.positions]
    return _decode(x, w, cfg, batch.attention_block())


def score_head(hidden: Tensor, w: Weights) -> Tensor:
    """
    Linear llm_dim -> 1 head; rows of `hidden` map to a flat score vector
    """
    return matmul(hidden, w['score_head.weight']) + w['score_head.bias']


@dataclass
class ScoreOutput:
    score: float
    score_hidden: np.ndarray


class AlignmentScorer:
    """
    Wires encoder, pooling, projection, LM and heads for one model config
    """

    def __init__(self, cfg: ModelConfig, encoder: FrozenAudioEncoder):
        self.cfg = cfg
        self.encoder = encoder
        self.tokenizer = ByteTokenizer(cfg)
        blocked = np.ones(cfg.vocab_size, dtype=bool)
        blocked[:BYTE_VOCAB] = False
        blocked[cfg.eos_id] = False
        self._blocked_for_generation = blocked

    @classmethod
    def from_params(cls, params: ParamSet, cfg: ModelConfig, data_root=None) -> 'AlignmentScorer':
        encoder = FrozenAudioEncoder(cfg, projection=params['encoder.projection'], data_root=data_root)
        return cls(cfg, encoder)

    def pooled_features(self, audio_ref: str, augment: SpecAugmentParams = None,
                        augment_seed: int = 0) -> np.ndarray:
        feat = self.encoder.encode(audio_ref)
        if augment is not None:
            feat = spec_augment(feat, augment, augment_seed)
        return temporal_average_pool(feat, self.cfg.audio_tokens)

    def score_tensor(self, weights: Weights, text_ids: Sequence[int], pooled) -> tuple:
        """
        (score tensor of shape (1,), hidden state row the head read)
        """
        seq = assemble_sequence(text_ids, project_audio(pooled, weights), self.cfg)
        hidden = lm_forward(seq, weights, self.cfg)
        row = hidden[seq.readout:seq.readout + 1]
        return score_head(row, weights), row

    def score_batch(self, weights: Weights, text_lists: Sequence[Sequence[int]], pooled: np.ndarray) -> Tensor:
        """
        Scores for B examples at once; `pooled` is B x audio_tokens x enc_dim
        """
        batch = batch_score_sequences(text_lists, project_audio(pooled, weights), self.cfg)
        hidden = lm_forward_batch(batch, weights, self.cfg)
        return score_head(hidden[:, batch.readout, :], weights)

    def caption_loss(self, weights: Weights, pooled, caption_ids: Sequence[int]) -> Tensor:
        """
        Next-token cross-entropy of caption + EOS given the audio prefix,
        masked to the caption positions
        """
        cfg = self.cfg
        targets_in = list(caption_ids) + [cfg.eos_id]
        seq = assemble_caption_sequence(project_audio(pooled, weights), targets_in[:-1], cfg)
        logits = matmul(lm_forward(seq, weights, cfg), weights['lm_head.weight'])
        targets = np.full(len(seq), -1, dtype=np.int64)
        mask = np.zeros(len(seq), dtype=bool)
        positions = seq.audio_end + np.arange(len(targets_in))
        targets[positions] = targets_in
        mask[positions] = True
        return next_token_cross_entropy(logits, targets, mask)

    def caption_loss_batch(self, weights: Weights, pooled: np.ndarray,
                           caption_lists: Sequence[Sequence[int]]) -> Tensor:
        """
        caption_loss over a batch, averaged over every caption token in it
        """
        cfg = self.cfg
        batch = batch_caption_sequences(project_audio(pooled, weights), caption_lists, cfg)
        logits = matmul(lm_forward_batch(batch, weights, cfg), weights['lm_head.weight'])
        size, width = batch.pad.shape
        audio_end = 1 + cfg.audio_tokens
        targets = np.full((size, width), -1, dtype=np.int64)
        mask = np.zeros((size, width), dtype=bool)
        for b, caption in enumerate(caption_lists):
            full = list(caption) + [cfg.eos_id]
            columns = audio_end + np.arange(len(full))
            targets[b, columns] = full
            mask[b, columns] = True
        flat = logits.reshape(size * width, cfg.vocab_size)
        return next_token_cross_entropy(flat, targets.reshape(-1), mask.reshape(-1))

    def predict(self, text_token_ids: Sequence[int], audio_ref: str, params) -> ScoreOutput:
        w = _weights(params)
        score, row = self.score_tensor(w, text_token_ids, self.pooled_features(audio_ref))
        return ScoreOutput(score=score.item(), score_hidden=row.data[0].copy())

    def generate(self, audio_ref: str, params, max_len: int) -> List[int]:
        """
        Greedy decoding; ties go to the smallest token id, and only bytes and
        EOS can be emitted
        """
        cfg = self.cfg
        w = _weights(params)
        embeds = project_audio(self.pooled_features(audio_ref), w)
        head = w['lm_head.weight'].data
        caption: List[int] = []
        while len(caption) < max_len and embeds.shape[0] + 2 + len(caption) <= cfg.max_seq_len:
            hidden = lm_forward(assemble_caption_sequence(embeds, caption, cfg), w, cfg)
            logits = np.where(self._blocked_for_generation, -np.inf, hidden.data[-1] @ head)
            token = int(np.argmax(logits))
            if token == cfg.eos_id:
                break
            caption.append(token)
        return caption


def predict_score(text_token_ids: Sequence[int], audio_ref: str, params: ParamSet, cfg: ModelConfig,
                  data_root=None) -> ScoreOutput:
    return AlignmentScorer.from_params(params, cfg, data_root).predict(text_token_ids, audio_ref, params)


def generate_caption(audio_ref: str, params: ParamSet, cfg: ModelConfig, max_len: int,
                     data_root=None) -> List[int]:
    return AlignmentScorer.from_params(params, cfg, data_root).generate(audio_ref, params, max_len)
