import numpy as np
from django.test import SimpleTestCase

from alignment_scorer.autograd import finite_difference_grad, forward_backward
from alignment_scorer.exceptions import NonFiniteError, ShapeError
from alignment_scorer.optim import ParamSet
from alignment_scorer.rng import make_rng
from alignment_scorer.tensor import (Tensor, concat, embedding, log_softmax, matmul, rms_norm, silu,
                                     softmax)

from .helpers import gradient_error


def composite(w):
    h = silu(matmul(w['x'], w['a']) + w['bias'])
    h = rms_norm(h, w['gain'])
    mixed = matmul(softmax(matmul(h, h.T), causal=True), h) * w['x']
    rows = embedding(w['table'], [2, 0, 2])
    stacked = concat([mixed[1:], rows], axis=0).reshape(2, 9).transpose()
    return (log_softmax(stacked, axis=0) * w['mix']).sum() + stacked.mean()


class ForwardBackwardTests(SimpleTestCase):
    def test_linear_map(self):
        params = ParamSet({'w': np.eye(2)})
        loss, grads = forward_backward(lambda w: matmul(w['w'], Tensor([2.0, 3.0])).sum(), params)
        self.assertEqual(loss, 5.0)
        np.testing.assert_array_equal(grads['w'], [[2.0, 3.0], [2.0, 3.0]])

    def test_untouched_parameter_gets_zero_gradient(self):
        params = ParamSet({'w': np.ones(3), 'unused': np.ones((2, 2))})
        _, grads = forward_backward(lambda w: (w['w'] * w['w']).sum(), params)
        np.testing.assert_array_equal(grads['unused'], np.zeros((2, 2)))
        np.testing.assert_array_equal(grads['w'], [2.0, 2.0, 2.0])

    def test_frozen_parameters_get_no_gradient_entry(self):
        params = ParamSet({'w': np.ones(2), 'f': np.ones(2)}, frozen=['f'])
        _, grads = forward_backward(lambda w: (w['w'] * w['f']).sum(), params)
        self.assertEqual(set(grads), {'w'})

    def test_primitives_match_finite_differences(self):
        for seed in range(20):
            rng = make_rng(seed, 'composite')
            params = ParamSet({
                'x': rng.standard_normal((4, 3)),
                'a': rng.standard_normal((3, 3)),
                'bias': rng.standard_normal(3),
                'gain': rng.uniform(0.5, 1.5, 3),
                'table': rng.standard_normal((3, 3)),
            })
            mix = Tensor(rng.standard_normal((9, 2)))
            error = gradient_error(lambda w: composite({**w, 'mix': mix}), params)
            self.assertLess(error, 1e-4, f'seed {seed}')

    def test_batched_matmul_gradient(self):
        rng = make_rng(3, 'batched')
        params = ParamSet({'a': rng.standard_normal((2, 3, 4)), 'b': rng.standard_normal((4, 2))})
        self.assertLess(gradient_error(lambda w: (matmul(w['a'], w['b']) * 1.5).sum(), params), 1e-6)


class PrimitiveTests(SimpleTestCase):
    def test_causal_softmax_zeroes_future_exactly(self):
        scores = Tensor(make_rng(1, 'scores').standard_normal((2, 5, 5)))
        probs = softmax(scores, causal=True).data
        upper = np.triu(np.ones((5, 5), dtype=bool), k=1)
        self.assertTrue(np.all(probs[:, upper] == 0.0))
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_blocked_entries_get_zero_probability(self):
        blocked = np.array([False, True, False])
        probs = softmax(Tensor([1.0, 5.0, 2.0]), blocked=blocked).data
        self.assertEqual(probs[1], 0.0)
        self.assertAlmostEqual(probs[0] + probs[2], 1.0, places=14)

    def test_causal_softmax_needs_square_axes(self):
        with self.assertRaises(ShapeError):
            softmax(Tensor(np.zeros((2, 3))), causal=True)

    def test_non_finite_result_names_the_operation(self):
        with np.errstate(over='ignore'):
            with self.assertRaises(NonFiniteError) as cm:
                Tensor([1e308]) * 10.0
        self.assertEqual(cm.exception.node, 'mul')

    def test_non_finite_input_is_rejected(self):
        with self.assertRaises(NonFiniteError):
            Tensor([1.0, np.nan], name='features')

    def test_matmul_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_embedding_out_of_range(self):
        with self.assertRaises(ShapeError):
            embedding(Tensor(np.ones((4, 2))), [0, 4])

    def test_rms_norm_scales_to_unit_rms(self):
        out = rms_norm(Tensor([[3.0, 4.0]]), Tensor([1.0, 1.0]), eps=0.0).data
        np.testing.assert_allclose(np.sqrt((out ** 2).mean()), 1.0, atol=1e-12)


class FiniteDifferenceTests(SimpleTestCase):
    def test_quadratic(self):
        params = ParamSet({'x': np.array([3.0])})
        estimate = finite_difference_grad(lambda p: float(p['x'][0] ** 2), params, epsilon=1e-4)
        self.assertAlmostEqual(float(estimate['x'][0]), 6.0, delta=1e-6)

    def test_constant_function(self):
        params = ParamSet({'x': np.array([1.0, -2.0])})
        estimate = finite_difference_grad(lambda p: 4.0, params)
        np.testing.assert_array_equal(estimate['x'], [0.0, 0.0])

    def test_does_not_modify_params(self):
        params = ParamSet({'x': np.array([1.0, 2.0])})
        finite_difference_grad(lambda p: float(p['x'].sum()), params)
        np.testing.assert_array_equal(params['x'], [1.0, 2.0])

    def test_rejects_non_positive_epsilon(self):
        with self.assertRaises(ValueError):
            finite_difference_grad(lambda p: 0.0, ParamSet({'x': np.zeros(1)}), epsilon=0.0)
