import numpy as np
from django.test import SimpleTestCase

from alignment_scorer.exceptions import SequenceTooLongError, VocabError
from alignment_scorer.network import (AlignmentScorer, InputSequence, assemble_caption_sequence,
                                      assemble_sequence, generate_caption, init_params, lm_forward,
                                      predict_score, project_audio)
from alignment_scorer.optim import ParamSet
from alignment_scorer.rng import make_rng
from alignment_scorer.tensor import Tensor

from .helpers import gradient_error, micro_model


def projection_params(seed: int, layers: int = 3, width: int = 4, hidden: int = 6, out: int = 4) -> ParamSet:
    rng = make_rng(seed, 'projection')
    params = ParamSet()
    for i in range(layers):
        params.add(f'projection.{i}.gate', 0.5 * rng.standard_normal((width, hidden)))
        params.add(f'projection.{i}.value', 0.5 * rng.standard_normal((width, hidden)))
        params.add(f'projection.{i}.out', 0.5 * rng.standard_normal((hidden, out)))
        width = out
    return params


class ProjectionTests(SimpleTestCase):
    def test_zero_weights_give_zero_output(self):
        params = projection_params(0)
        zeros = params.with_arrays({name: np.zeros_like(params[name]) for name in params})
        out = project_audio(make_rng(0, 'x').standard_normal((5, 4)), zeros)
        np.testing.assert_array_equal(out.data, np.zeros((5, 4)))

    def test_hand_computed_single_block(self):
        weights = {
            'projection.0.gate': Tensor(np.eye(2)),
            'projection.0.value': Tensor([[1.0, 1.0], [0.0, 1.0]]),
            'projection.0.out': Tensor(np.eye(2)),
        }
        out = project_audio(np.array([[1.0, 2.0]]), weights).data

        def silu(v):
            return v / (1.0 + np.exp(-v))

        np.testing.assert_allclose(out, [[silu(1.0) * 1.0, silu(2.0) * 3.0]], rtol=1e-12)

    def test_gradient_matches_finite_differences(self):
        for seed in range(20):
            pooled = make_rng(seed, 'pooled').standard_normal((3, 4))
            error = gradient_error(lambda w: project_audio(pooled, w).sum(), projection_params(seed))
            self.assertLess(error, 1e-5, f'seed {seed}')


class LayoutTests(SimpleTestCase):
    def setUp(self):
        self.cfg = micro_model()

    def embeds(self, count):
        return Tensor(np.zeros((count, self.cfg.llm_dim)))

    def test_score_layout(self):
        seq = assemble_sequence([5, 9], self.embeds(3), self.cfg)
        self.assertEqual(seq.slots, [5, 9, 256, None, None, None, 257, 258])
        self.assertEqual((seq.audio_start, seq.audio_end, seq.score), (2, 6, 7))
        self.assertEqual(seq.readout, 7)

    def test_empty_text(self):
        seq = assemble_sequence([], self.embeds(1), self.cfg)
        self.assertEqual(seq.slots, [256, None, 257, 258])

    def test_length_boundary(self):
        fits = self.cfg.max_seq_len - 2 - 3
        self.assertEqual(len(assemble_sequence([1] * fits, self.embeds(2), self.cfg)), self.cfg.max_seq_len)
        with self.assertRaises(SequenceTooLongError):
            assemble_sequence([1] * (fits + 1), self.embeds(2), self.cfg)

    def test_layout_fuzz(self):
        cfg = self.cfg
        rng = make_rng(0, 'layout')
        for _ in range(1000):
            count = int(rng.integers(1, 6))
            text = rng.integers(0, 256, int(rng.integers(0, cfg.max_seq_len - count - 2))).tolist()
            seq = assemble_sequence(text, self.embeds(count), cfg)
            self.assertEqual(seq.slots[-1], cfg.score_id)
            for special in (cfg.audio_start_id, cfg.audio_end_id, cfg.score_id):
                self.assertEqual(seq.slots.count(special), 1)
            audio = [i for i, slot in enumerate(seq.slots) if slot is None]
            self.assertEqual(audio, list(range(seq.audio_start + 1, seq.audio_end)))

    def test_last_token_readout_has_no_score_slot(self):
        cfg = micro_model(score_readout='last_token')
        seq = assemble_sequence([5], self.embeds(2), cfg)
        self.assertEqual(seq.slots, [5, 256, None, None, 257])
        self.assertIsNone(seq.score)
        self.assertEqual(seq.readout, 4)

    def test_caption_layout(self):
        seq = assemble_caption_sequence(self.embeds(2), [65, 66], self.cfg)
        self.assertEqual(seq.slots, [256, None, None, 257, 65, 66])
        self.assertEqual(seq.audio_end, 3)


class LanguageModelTests(SimpleTestCase):
    def setUp(self):
        self.cfg = micro_model(init_std=0.5)
        self.params = init_params(self.cfg, 11, with_score_head=True)
        self.weights = self.params.as_tensors(track=False)
        self.scorer = AlignmentScorer.from_params(self.params, self.cfg)

    def test_parameter_names(self):
        names = set(self.params.names())
        self.assertIn('encoder.projection', names)
        self.assertIn('projection.0.gate', names)
        self.assertIn('llm.layers.0.wq', names)
        self.assertIn('llm.layers.0.ffn.out', names)
        self.assertIn('score_head.bias', names)
        self.assertEqual(self.params['lm_head.weight'].shape, (self.cfg.llm_dim, self.cfg.vocab_size))
        self.assertEqual(self.params.frozen_names(), ['encoder.projection'])

    def test_score_head_does_not_shift_other_streams(self):
        plain = init_params(self.cfg, 11)
        for name in plain:
            np.testing.assert_array_equal(plain[name], self.params[name])

    def test_causality_is_exact(self):
        cfg = self.cfg
        rng = make_rng(0, 'causality')
        for _ in range(100):
            text = rng.integers(0, 256, int(rng.integers(1, 20))).tolist()
            embeds = rng.standard_normal((cfg.audio_tokens, cfg.llm_dim))
            seq = assemble_sequence(text, Tensor(embeds), cfg)
            t = int(rng.integers(0, len(seq) - 1))
            changed_text = [tok if i <= t else (tok + 1) % 256 for i, tok in enumerate(text)]
            changed_embeds = embeds.copy()
            for j in range(cfg.audio_tokens):
                if seq.audio_start + 1 + j > t:
                    changed_embeds[j] = rng.standard_normal(cfg.llm_dim)
            other = assemble_sequence(changed_text, Tensor(changed_embeds), cfg)
            before = lm_forward(seq, self.weights, cfg).data
            after = lm_forward(other, self.weights, cfg).data
            np.testing.assert_array_equal(before[:t + 1], after[:t + 1])

    def test_vocabulary_bounds(self):
        pooled = self.scorer.pooled_features('s1-000000')
        with self.assertRaises(VocabError):
            self.scorer.score_tensor(self.weights, [300], pooled)
        with self.assertRaises(VocabError):
            self.scorer.score_tensor(self.weights, [-1], pooled)

    def test_batch_scores_match_single_sequences(self):
        for readout in ('score_token', 'last_token'):
            cfg = micro_model(init_std=0.3, score_readout=readout)
            params = init_params(cfg, 5, with_score_head=True)
            scorer = AlignmentScorer.from_params(params, cfg)
            weights = params.as_tensors(track=False)
            texts = [list(b'dog'), list(b'rain on a roof'), list(b'x')]
            pooled = np.stack([scorer.pooled_features(f's5-{i:06d}') for i in range(3)])
            batch = scorer.score_batch(weights, texts, pooled).data
            single = [scorer.score_tensor(weights, t, p)[0].item() for t, p in zip(texts, pooled)]
            np.testing.assert_allclose(batch, single, atol=1e-12)

    def test_batch_caption_loss_is_token_weighted(self):
        captions = [list(b'bird'), list(b'engine noise')]
        pooled = np.stack([self.scorer.pooled_features(f's2-{i:06d}') for i in range(2)])
        losses = [self.scorer.caption_loss(self.weights, p, c).item() for p, c in zip(pooled, captions)]
        counts = [len(c) + 1 for c in captions]
        batch = self.scorer.caption_loss_batch(self.weights, pooled, captions).item()
        expected = (losses[0] * counts[0] + losses[1] * counts[1]) / sum(counts)
        self.assertAlmostEqual(batch, expected, delta=1e-12)
        alone = self.scorer.caption_loss_batch(self.weights, pooled[:1], captions[:1]).item()
        self.assertAlmostEqual(alone, losses[0], delta=1e-12)

    def test_score_gradient_matches_finite_differences(self):
        for seed in range(20):
            head = make_rng(seed, 'head').standard_normal(self.cfg.llm_dim)
            params = init_params(self.cfg, seed, with_score_head=True).with_arrays({'score_head.weight': head})
            scorer = AlignmentScorer.from_params(params, self.cfg)
            pooled = scorer.pooled_features(f's{seed}-000003')
            text = list(b'dog bark')
            names = [n for n in params.trainable_names() if n != 'lm_head.weight']
            error = gradient_error(lambda w: scorer.score_tensor(w, text, pooled)[0].sum(), params, names)
            self.assertLess(error, 1e-4, f'seed {seed}')


class HandSteppedForwardTests(SimpleTestCase):
    def setUp(self):
        self.cfg = micro_model(llm_dim=2, ffn_dim=2)
        embed = np.zeros((self.cfg.vocab_size, 2))
        embed[65] = [1.0, 2.0]
        pos = np.zeros((self.cfg.max_seq_len, 2))
        pos[0] = [0.5, -1.0]
        self.arrays = {
            'llm.embed': embed,
            'llm.pos': pos,
            'llm.layers.0.attn_norm': np.array([1.0, 0.5]),
            'llm.layers.0.wq': np.array([[0.3, -0.2], [0.7, 0.1]]),
            'llm.layers.0.wk': np.array([[-0.4, 0.9], [0.2, 0.6]]),
            'llm.layers.0.wv': np.array([[1.0, 0.0], [1.0, 1.0]]),
            'llm.layers.0.wo': np.array([[0.5, 0.0], [0.0, 2.0]]),
            'llm.layers.0.ffn_norm': np.array([2.0, 1.0]),
            'llm.layers.0.ffn.gate': np.eye(2),
            'llm.layers.0.ffn.value': np.array([[1.0, 1.0], [0.0, 1.0]]),
            'llm.layers.0.ffn.out': np.array([[1.0, 0.0], [0.0, -1.0]]),
            'llm.final_norm': np.ones(2),
        }

    def forward(self, arrays):
        seq = InputSequence(slots=[65], embeds=None, audio_start=0, audio_end=0, score=None)
        return lm_forward(seq, {k: Tensor(v) for k, v in arrays.items()}, self.cfg).data

    def test_single_token_matches_hand_steps(self):
        eps = self.cfg.norm_eps

        def norm(v, gain):
            return v / np.sqrt(np.mean(v * v) + eps) * gain

        def silu(v):
            return v / (1.0 + np.exp(-v))

        x = np.array([1.5, 1.0])
        # a single position attends only to itself, so the mix is its own value row
        h = norm(x, [1.0, 0.5])
        v = np.array([h[0] + h[1], h[1]])
        x = x + np.array([0.5 * v[0], 2.0 * v[1]])
        h = norm(x, [2.0, 1.0])
        ffn = silu(h) * np.array([h[0], h[0] + h[1]])
        x = x + np.array([ffn[0], -ffn[1]])
        expected = norm(x, [1.0, 1.0])

        np.testing.assert_allclose(self.forward(self.arrays), [expected], rtol=1e-12)

    def test_query_and_key_weights_do_not_matter_for_one_token(self):
        other = {**self.arrays, 'llm.layers.0.wq': np.full((2, 2), 5.0), 'llm.layers.0.wk': -np.eye(2)}
        np.testing.assert_array_equal(self.forward(self.arrays), self.forward(other))


class ZeroParameterTests(SimpleTestCase):
    def setUp(self):
        self.cfg = micro_model(init_std=0.5)
        self.params = init_params(self.cfg, 3)
        self.embeds = make_rng(3, 'audio').standard_normal((self.cfg.audio_tokens, self.cfg.llm_dim))
        self.seq = assemble_sequence(list(b'hum'), Tensor(self.embeds), self.cfg)

    def test_zero_blocks_leave_the_normalized_embedding_path(self):
        blocks = {name: np.zeros_like(self.params[name]) for name in self.params
                  if name.startswith('llm.layers.') and not name.endswith('_norm')}
        out = lm_forward(self.seq, self.params.with_arrays(blocks), self.cfg).data

        table = self.params['llm.embed']
        rows = [table[slot] if slot is not None else None for slot in self.seq.slots]
        audio = iter(self.embeds)
        x = np.stack([row if row is not None else next(audio) for row in rows])
        x = x + self.params['llm.pos'][:len(self.seq)]
        expected = x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + self.cfg.norm_eps)
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_all_zero_parameters_give_zero_hidden_states(self):
        zeros = self.params.with_arrays({name: np.zeros_like(self.params[name]) for name in self.params})
        seq = assemble_sequence(list(b'hum'), Tensor(np.zeros_like(self.embeds)), self.cfg)
        out = lm_forward(seq, zeros, self.cfg).data
        np.testing.assert_array_equal(out, np.zeros((len(seq), self.cfg.llm_dim)))


class PredictionTests(SimpleTestCase):
    def setUp(self):
        self.cfg = micro_model()

    def test_zero_head_returns_the_bias(self):
        params = init_params(self.cfg, 1, with_score_head=True, score_bias=0.3)
        params = params.with_arrays({'score_head.weight': np.zeros(self.cfg.llm_dim)})
        out = predict_score(list(b'rain'), 's1-000000', params, self.cfg)
        self.assertEqual(out.score, 0.3)
        self.assertEqual(out.score_hidden.shape, (self.cfg.llm_dim,))

    def test_generation_is_deterministic_bytes(self):
        cfg = micro_model(init_std=0.5)
        params = init_params(cfg, 4)
        first = generate_caption('s4-000000', params, cfg, 10)
        second = generate_caption('s4-000000', params, cfg, 10)
        self.assertEqual(first, second)
        self.assertLessEqual(len(first), 10)
        self.assertTrue(all(0 <= token < 256 for token in first))

    def test_zero_length_caption(self):
        params = init_params(self.cfg, 4)
        self.assertEqual(generate_caption('s4-000000', params, self.cfg, 0), [])

    def test_ties_go_to_the_smallest_id(self):
        params = init_params(self.cfg, 4)
        params = params.with_arrays({'lm_head.weight': np.zeros_like(params['lm_head.weight'])})
        self.assertEqual(generate_caption('s4-000000', params, self.cfg, 3), [0, 0, 0])

    def test_generation_stops_at_the_context_limit(self):
        params = init_params(self.cfg, 4)
        params = params.with_arrays({'lm_head.weight': np.zeros_like(params['lm_head.weight'])})
        caption = generate_caption('s4-000000', params, self.cfg, 1000)
        self.assertEqual(len(caption), self.cfg.max_seq_len - self.cfg.audio_tokens - 1)
