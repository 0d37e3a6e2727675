import numpy as np
from django.test import SimpleTestCase

from search.exceptions import DimensionError, NumericError, UsageError
from search.microgradient import (
    AdamState,
    Tape,
    Tensor2,
    adam_update,
    backward_check,
    check_finite_gradients,
    clip_grad_norm,
    concat_cols,
    dropout,
    embedding_lookup,
    linear,
    linear_forward,
    make_linear,
    make_lstm_cell,
    masked_mean,
    mse_loss,
    recurrent_step,
    relu,
    sigmoid,
    softmax_cross_entropy,
    tanh,
)


class Tensor2Tests(SimpleTestCase):
    def test_vectors_become_rows(self):
        self.assertEqual(Tensor2([1.0, 2.0, 3.0]).shape, (1, 3))
        self.assertEqual(Tensor2(4.0).shape, (1, 1))

    def test_item_needs_a_scalar(self):
        with self.assertRaises(DimensionError):
            Tensor2(np.zeros((2, 2))).item()

    def test_linear_shape_error_names_both_shapes(self):
        x = Tensor2(np.zeros((2, 3)))
        w = Tensor2(np.zeros((4, 5)))
        b = Tensor2(np.zeros((1, 5)))
        with self.assertRaises(DimensionError) as ctx:
            linear_forward(None, x, w, b)
        self.assertIn('(2, 3)', str(ctx.exception))
        self.assertIn('(4, 5)', str(ctx.exception))

    def test_linear_forward_by_hand(self):
        out = linear_forward(None, Tensor2([[1.0, 1.0]]), Tensor2([[2.0, 3.0], [4.0, 5.0]]), Tensor2([[1.0, 1.0]]))
        np.testing.assert_array_equal(out.value, [[7.0, 9.0]])
        zero = linear_forward(None, Tensor2([[0.0, 0.0]]), Tensor2([[2.0, 3.0], [4.0, 5.0]]), Tensor2([[0.5, -1.5]]))
        np.testing.assert_array_equal(zero.value, [[0.5, -1.5]])


class GradientCheckTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_dense_stack(self):
        first = make_linear(self.rng, 3, 5, 0.5, 'first')
        second = make_linear(self.rng, 5, 1, 0.5, 'second')
        x = Tensor2(self.rng.normal(size=(4, 3)))
        target = self.rng.uniform(size=(4, 1))

        def f(tape):
            hidden = tanh(tape, linear(tape, x, first))
            return mse_loss(tape, sigmoid(tape, linear(tape, hidden, second)), target)

        params = [first.weight, first.bias, second.weight, second.bias]
        self.assertLess(backward_check(f, params), 1e-4)

    def test_relu_away_from_the_kink(self):
        layer = make_linear(self.rng, 2, 3, 1.0, 'layer')
        x = Tensor2([[0.7, -1.3], [2.0, 0.4]])
        target = np.ones((2, 3))

        def f(tape):
            return mse_loss(tape, relu(tape, linear(tape, x, layer)), target)

        self.assertLess(backward_check(f, [layer.weight, layer.bias], step=1e-6), 1e-4)

    def test_recurrent_steps(self):
        cell = make_lstm_cell(self.rng, 3, 4, 0.5, 'cell')
        head = make_linear(self.rng, 4, 1, 0.5, 'head')
        inputs = [Tensor2(self.rng.normal(size=(2, 3))) for _ in range(4)]
        target = np.array([[0.3], [0.7]])

        def f(tape):
            h = Tensor2(np.zeros((2, 4)))
            c = Tensor2(np.zeros((2, 4)))
            for x in inputs:
                h, c = recurrent_step(tape, x, h, c, cell)
            return mse_loss(tape, sigmoid(tape, linear(tape, h, head)), target)

        params = {'w': cell.weight, 'b': cell.bias, 'hw': head.weight, 'hb': head.bias}
        self.assertLess(backward_check(f, params), 1e-4)

    def test_embedding_concat_and_masked_cross_entropy(self):
        table = Tensor2(self.rng.normal(size=(6, 3)), name='table')
        layer = make_linear(self.rng, 5, 6, 0.5, 'proj')
        context = Tensor2(self.rng.normal(size=(3, 2)), name='context')
        ids = np.array([1, 4, 1])
        targets = np.array([2, 3, 2])
        legal = np.array([False, False, True, True, True, False])

        def f(tape):
            x = concat_cols(tape, [embedding_lookup(tape, table, ids), context])
            return softmax_cross_entropy(tape, linear(tape, x, layer), targets, legal)

        self.assertLess(backward_check(f, [table, context, layer.weight, layer.bias]), 1e-4)

    def test_masked_mean(self):
        steps = [Tensor2(self.rng.normal(size=(2, 3)), name=f's{k}') for k in range(3)]
        mask = np.array([[1, 1], [1, 0], [0, 0]])
        target = np.zeros((2, 3))

        def f(tape):
            return mse_loss(tape, masked_mean(tape, steps, mask), target)

        self.assertLess(backward_check(f, steps), 1e-4)

    def test_repeated_embedding_ids_accumulate(self):
        table = Tensor2(np.zeros((3, 2)))
        tape = Tape()
        out = embedding_lookup(tape, table, [1, 1, 2])
        out.grad[...] = 1.0
        for step in reversed(tape._steps):
            step()
        np.testing.assert_array_equal(table.grad, [[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])


class LossTests(SimpleTestCase):
    def test_masked_target_is_rejected(self):
        logits = Tensor2(np.zeros((1, 3)))
        with self.assertRaises(UsageError):
            softmax_cross_entropy(None, logits, [0], np.array([False, True, True]))

    def test_mask_renormalizes_over_legal_classes(self):
        logits = Tensor2(np.zeros((1, 4)))
        loss = softmax_cross_entropy(None, logits, [1], np.array([True, True, False, False]))
        self.assertAlmostEqual(loss.item(), np.log(2.0))

    def test_masked_mean_needs_a_live_step(self):
        steps = [Tensor2(np.ones((2, 2)))]
        with self.assertRaises(DimensionError):
            masked_mean(None, steps, np.array([[1, 0]]))


class DropoutTests(SimpleTestCase):
    def test_identity_without_generator_or_at_keep_one(self):
        x = Tensor2(np.ones((2, 2)))
        self.assertIs(dropout(None, x, 0.5, None), x)
        self.assertIs(dropout(None, x, 1.0, np.random.default_rng(0)), x)

    def test_surviving_units_are_rescaled(self):
        x = Tensor2(np.ones((50, 50)))
        out = dropout(None, x, 0.5, np.random.default_rng(0))
        self.assertTrue(set(np.unique(out.value)) <= {0.0, 2.0})

    def test_keep_probability_range(self):
        with self.assertRaises(UsageError):
            dropout(None, Tensor2(np.ones((1, 1))), 0.0, None)


class OptimizerTests(SimpleTestCase):
    def test_first_adam_step_moves_by_the_learning_rate(self):
        p = Tensor2([[1.0, -1.0]])
        p.grad[...] = [[0.5, -3.0]]
        adam_update({'p': p}, AdamState(learning_rate=0.01))
        np.testing.assert_allclose(p.value, [[0.99, -0.99]], atol=1e-9)

    def test_adam_minimizes_a_quadratic(self):
        p = Tensor2([[3.0, -2.0]])
        state = AdamState(learning_rate=0.05)
        for _ in range(2000):
            p.grad[...] = 2.0 * p.value
            adam_update({'p': p}, state)
        np.testing.assert_allclose(p.value, 0.0, atol=5e-2)
        self.assertEqual(state.step, 2000)

    def test_non_finite_gradient_is_named(self):
        p = Tensor2([[1.0]], name='weight')
        p.grad[...] = np.nan
        with self.assertRaises(NumericError) as ctx:
            check_finite_gradients({'weight': p})
        self.assertIn('weight', str(ctx.exception))

    def test_clipping_scales_to_the_limit(self):
        a = Tensor2([[0.0]])
        b = Tensor2([[0.0]])
        a.grad[...] = 3.0
        b.grad[...] = 4.0
        norm = clip_grad_norm({'a': a, 'b': b}, 1.0)
        self.assertAlmostEqual(norm, 5.0)
        self.assertAlmostEqual(float(np.hypot(a.grad[0, 0], b.grad[0, 0])), 1.0)


def reference_lstm_step(x, h, c, weight, bias):
    hidden = h.shape[1]
    z = np.hstack([x, h]) @ weight + bias
    input_gate = 1.0 / (1.0 + np.exp(-z[:, :hidden]))
    forget_gate = 1.0 / (1.0 + np.exp(-z[:, hidden:2 * hidden]))
    candidate = np.tanh(z[:, 2 * hidden:3 * hidden])
    output_gate = 1.0 / (1.0 + np.exp(-z[:, 3 * hidden:]))
    c_next = forget_gate * c + input_gate * candidate
    return output_gate * np.tanh(c_next), c_next


class RecurrentStepTests(SimpleTestCase):
    def test_zero_parameters_keep_a_zero_state(self):
        cell = make_lstm_cell(np.random.default_rng(0), 3, 4, 0.0, 'cell')
        x = Tensor2(np.random.default_rng(1).normal(size=(2, 3)))
        h, c = recurrent_step(None, x, Tensor2(np.zeros((2, 4))), Tensor2(np.zeros((2, 4))), cell)
        np.testing.assert_array_equal(h.value, 0.0)
        np.testing.assert_array_equal(c.value, 0.0)

    def test_matches_the_gate_equations(self):
        rng = np.random.default_rng(2)
        cell = make_lstm_cell(rng, 3, 5, 0.8, 'cell')
        x, h, c = rng.normal(size=(4, 3)), rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        h_t, c_t = recurrent_step(None, Tensor2(x), Tensor2(h), Tensor2(c), cell)
        expected_h, expected_c = reference_lstm_step(x, h, c, cell.weight.value, cell.bias.value)
        np.testing.assert_allclose(h_t.value, expected_h, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(c_t.value, expected_c, rtol=1e-12, atol=1e-12)

    def test_hidden_state_stays_inside_the_unit_interval(self):
        rng = np.random.default_rng(3)
        cell = make_lstm_cell(rng, 2, 6, 1.0, 'cell')
        h, c = Tensor2(np.zeros((8, 6))), Tensor2(np.zeros((8, 6)))
        for _ in range(20):
            h, c = recurrent_step(None, Tensor2(rng.normal(scale=3.0, size=(8, 2))), h, c, cell)
            self.assertTrue(np.all(np.isfinite(c.value)))
            self.assertTrue(np.all(np.abs(h.value) < 1.0))

    def test_state_size_mismatch(self):
        cell = make_lstm_cell(np.random.default_rng(0), 3, 4, 0.1, 'cell')
        with self.assertRaises(DimensionError):
            recurrent_step(None, Tensor2(np.zeros((1, 3))), Tensor2(np.zeros((1, 5))),
                           Tensor2(np.zeros((1, 4))), cell)


class DropoutRateTests(SimpleTestCase):
    def test_keep_rate_and_rescaling_over_many_units(self):
        x = Tensor2(np.ones((1000, 100)))
        out = dropout(None, x, 0.9, np.random.default_rng(5)).value
        kept = out != 0.0
        self.assertAlmostEqual(kept.mean(), 0.9, delta=0.005)
        np.testing.assert_allclose(out[kept], 1.0 / 0.9)
        self.assertAlmostEqual(out.mean(), 1.0, delta=0.01)


class BackwardCheckExampleTests(SimpleTestCase):
    def test_square_of_a_weight(self):
        w = Tensor2([[3.0]], name='w')

        def f(tape):
            return mse_loss(tape, w, np.zeros((1, 1)))

        self.assertLess(backward_check(f, [w]), 1e-6)
        self.assertEqual(float(w.value[0, 0]), 3.0)

    def test_constant_function(self):
        w = Tensor2([[0.4, -0.2]], name='w')

        def f(tape):
            return mse_loss(tape, Tensor2([[2.0]]), np.zeros((1, 1)))

        self.assertEqual(backward_check(f, [w]), 0.0)


class AdamExampleTests(SimpleTestCase):
    def test_zero_gradient_leaves_parameters_alone(self):
        p = Tensor2([[0.25, -4.0, 7.5]])
        state = AdamState(learning_rate=0.1)
        for _ in range(5):
            p.grad[...] = 0.0
            adam_update({'p': p}, state)
        np.testing.assert_array_equal(p.value, [[0.25, -4.0, 7.5]])
        self.assertEqual(state.step, 5)

    def test_opposite_gradients_give_opposite_steps(self):
        a = Tensor2([[1.0, 2.0]])
        b = Tensor2([[1.0, 2.0]])
        state = AdamState(learning_rate=0.01)
        rng = np.random.default_rng(6)
        for _ in range(10):
            g = rng.normal(size=(1, 2))
            a.grad[...] = g
            b.grad[...] = -g
            adam_update({'a': a, 'b': b}, state)
        start = np.array([[1.0, 2.0]])
        self.assertTrue(np.all(a.value != start))
        np.testing.assert_allclose(a.value - start, start - b.value, atol=1e-12)
