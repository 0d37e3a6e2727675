"""Reverse-mode differentiation over small dense matrices.

Every operation takes a :class:`Tape` as its first argument. With a tape the
operation records a closure that pushes its output gradient back into its
inputs; with ``tape=None`` only the forward value is computed, which is what
inference paths use.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import DimensionError, NumericError, UsageError

logger = logging.getLogger(__name__)

DTYPE = np.float64

GRAD_CHECK_STEP = 1e-4
GRAD_CHECK_TOLERANCE = 1e-4


class Tensor2:
    """A 2-D value together with the gradient accumulated for it."""

    __slots__ = ('value', 'grad', 'name')

    def __init__(self, value, name='', copy=True):
        value = np.array(value, dtype=DTYPE, copy=copy)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        if value.ndim != 2:
            raise DimensionError(f'{name or "tensor"} must be 2-D, got shape {value.shape}')
        self.value = value
        self.grad = np.zeros_like(value)
        self.name = name

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def item(self):
        if self.value.shape != (1, 1):
            raise DimensionError(f'item() needs a 1x1 tensor, got {self.value.shape}')
        return float(self.value[0, 0])

    def __repr__(self):
        label = f' {self.name}' if self.name else ''
        return f'<Tensor2{label} {self.rows}x{self.cols}>'


class Tape:
    """Records backward closures in forward order and replays them in reverse."""

    def __init__(self):
        self._steps = []

    def __len__(self):
        return len(self._steps)

    def record(self, step):
        self._steps.append(step)

    def backward(self, output):
        if output.shape != (1, 1):
            raise DimensionError(f'backward needs a scalar output, got {output.shape}')
        output.grad[...] = 1.0
        for step in reversed(self._steps):
            step()
        self._steps.clear()


@dataclass
class Linear:
    weight: Tensor2
    bias: Tensor2

    @property
    def in_features(self):
        return self.weight.rows

    @property
    def out_features(self):
        return self.weight.cols


@dataclass
class LSTMCell:
    """Gate weights of a single recurrent cell, gates ordered input/forget/cell/output."""

    weight: Tensor2
    bias: Tensor2

    @property
    def hidden_size(self):
        return self.weight.cols // 4

    @property
    def input_size(self):
        return self.weight.rows - self.hidden_size


def init_uniform(rng, shape, scale, name=''):
    return Tensor2(rng.uniform(-scale, scale, size=shape), name=name, copy=False)


def make_linear(rng, in_features, out_features, scale, name):
    return Linear(
        weight=init_uniform(rng, (in_features, out_features), scale, f'{name}.weight'),
        bias=init_uniform(rng, (1, out_features), scale, f'{name}.bias'),
    )


def make_lstm_cell(rng, input_size, hidden_size, scale, name):
    return LSTMCell(
        weight=init_uniform(rng, (input_size + hidden_size, 4 * hidden_size), scale, f'{name}.weight'),
        bias=init_uniform(rng, (1, 4 * hidden_size), scale, f'{name}.bias'),
    )


def linear_forward(tape, x, weights, bias):
    if x.cols != weights.rows:
        raise DimensionError(f'input {x.shape} does not match weights {weights.shape}')
    if bias.shape != (1, weights.cols):
        raise DimensionError(f'bias {bias.shape} does not match weights {weights.shape}')
    out = Tensor2(x.value @ weights.value + bias.value, copy=False)
    if tape is not None:
        def backward():
            x.grad += out.grad @ weights.value.T
            weights.grad += x.value.T @ out.grad
            bias.grad += out.grad.sum(axis=0, keepdims=True)
        tape.record(backward)
    return out


def linear(tape, x, layer):
    return linear_forward(tape, x, layer.weight, layer.bias)


def add(tape, a, b):
    if a.shape != b.shape:
        raise DimensionError(f'cannot add {a.shape} and {b.shape}')
    out = Tensor2(a.value + b.value, copy=False)
    if tape is not None:
        def backward():
            a.grad += out.grad
            b.grad += out.grad
        tape.record(backward)
    return out


def scale(tape, x, factor):
    out = Tensor2(x.value * factor, copy=False)
    if tape is not None:
        def backward():
            x.grad += factor * out.grad
        tape.record(backward)
    return out


def sigmoid(tape, x):
    s = expit(x.value)
    out = Tensor2(s, copy=False)
    if tape is not None:
        def backward():
            x.grad += out.grad * s * (1.0 - s)
        tape.record(backward)
    return out


def tanh(tape, x):
    t = np.tanh(x.value)
    out = Tensor2(t, copy=False)
    if tape is not None:
        def backward():
            x.grad += out.grad * (1.0 - t * t)
        tape.record(backward)
    return out


def relu(tape, x):
    active = x.value > 0.0
    out = Tensor2(np.where(active, x.value, 0.0), copy=False)
    if tape is not None:
        def backward():
            x.grad += out.grad * active
        tape.record(backward)
    return out


def concat_cols(tape, parts):
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise DimensionError(f'cannot concatenate shapes {[p.shape for p in parts]}')
    out = Tensor2(np.concatenate([p.value for p in parts], axis=1), copy=False)
    if tape is not None:
        def backward():
            start = 0
            for p in parts:
                p.grad += out.grad[:, start:start + p.cols]
                start += p.cols
        tape.record(backward)
    return out


def embedding_lookup(tape, table, ids):
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise DimensionError(f'ids must be 1-D, got shape {ids.shape}')
    if ids.size and (ids.min() < 0 or ids.max() >= table.rows):
        raise DimensionError(f'ids out of range for embedding table {table.shape}')
    out = Tensor2(table.value[ids], copy=False)
    if tape is not None:
        def backward():
            np.add.at(table.grad, ids, out.grad)
        tape.record(backward)
    return out


def dropout(tape, x, keep_prob, rng):
    """Inverted dropout; identity when ``keep_prob`` is 1 or no generator is given."""
    if not 0.0 < keep_prob <= 1.0:
        raise UsageError(f'keep probability must lie in (0, 1], got {keep_prob}')
    if keep_prob == 1.0 or rng is None:
        return x
    mask = (rng.random(x.shape) < keep_prob) / keep_prob
    out = Tensor2(x.value * mask, copy=False)
    if tape is not None:
        def backward():
            x.grad += out.grad * mask
        tape.record(backward)
    return out


def masked_mean(tape, steps, mask):
    """Mean over time of ``steps`` (T tensors of shape BxH) where ``mask`` (TxB) is set."""
    mask = np.asarray(mask, dtype=DTYPE)
    if mask.shape != (len(steps), steps[0].rows):
        raise DimensionError(f'mask {mask.shape} does not match {len(steps)} steps of {steps[0].shape}')
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        raise DimensionError('every sequence needs at least one unmasked step')
    weights = mask / counts
    total = np.zeros_like(steps[0].value)
    for w, h in zip(weights, steps):
        total += w[:, None] * h.value
    out = Tensor2(total, copy=False)
    if tape is not None:
        def backward():
            for w, h in zip(weights, steps):
                h.grad += w[:, None] * out.grad
        tape.record(backward)
    return out


def mse_loss(tape, prediction, target):
    target = np.asarray(target, dtype=DTYPE).reshape(prediction.shape)
    diff = prediction.value - target
    out = Tensor2(np.mean(diff * diff), copy=False)
    if tape is not None:
        def backward():
            prediction.grad += (2.0 / diff.size) * diff * out.grad[0, 0]
        tape.record(backward)
    return out


def softmax_cross_entropy(tape, logits, targets, legal=None):
    """Mean negative log-likelihood of ``targets``; ``legal`` masks impossible classes."""
    targets = np.asarray(targets, dtype=np.intp)
    rows = np.arange(logits.rows)
    z = logits.value
    if legal is not None:
        legal = np.broadcast_to(legal, z.shape)
        if not legal[rows, targets].all():
            raise UsageError('a target token is masked out at its position')
        z = np.where(legal, z, -np.inf)
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    picked = shifted[rows, targets] - np.log(denom[:, 0])
    out = Tensor2(-np.mean(picked), copy=False)
    if tape is not None:
        def backward():
            g = probs.copy()
            g[rows, targets] -= 1.0
            logits.grad += g * (out.grad[0, 0] / logits.rows)
        tape.record(backward)
    return out


def recurrent_step(tape, x, h_prev, c_prev, cell):
    """One LSTM step; returns ``(h_t, c_t)``."""
    hidden = cell.hidden_size
    if x.cols != cell.input_size:
        raise DimensionError(f'input {x.shape} does not match cell input size {cell.input_size}')
    if h_prev.cols != hidden or c_prev.cols != hidden:
        raise DimensionError(f'state {h_prev.shape}/{c_prev.shape} does not match hidden size {hidden}')
    if not x.rows == h_prev.rows == c_prev.rows:
        raise DimensionError(f'batch sizes differ: {x.rows}, {h_prev.rows}, {c_prev.rows}')
    xh = np.concatenate([x.value, h_prev.value], axis=1)
    z = xh @ cell.weight.value + cell.bias.value
    i = expit(z[:, :hidden])
    f = expit(z[:, hidden:2 * hidden])
    g = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = expit(z[:, 3 * hidden:])
    c_before = c_prev.value
    c = f * c_before + i * g
    tc = np.tanh(c)
    h_t = Tensor2(o * tc, copy=False)
    c_t = Tensor2(c, copy=False)
    if tape is not None:
        def backward():
            dh = h_t.grad
            dc = c_t.grad + dh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_before * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ], axis=1)
            cell.weight.grad += xh.T @ dz
            cell.bias.grad += dz.sum(axis=0, keepdims=True)
            dxh = dz @ cell.weight.value.T
            x.grad += dxh[:, :x.cols]
            h_prev.grad += dxh[:, x.cols:]
            c_prev.grad += dc * f
        tape.record(backward)
    return h_t, c_t


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def check_finite_gradients(params):
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f'non-finite gradient in parameter {name}')


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values())))
    if max_norm is not None and total > max_norm:
        factor = max_norm / total
        for p in params.values():
            p.grad *= factor
    return total


def adam_update(params, state):
    """Apply one bias-corrected Adam step to ``params`` in place."""
    check_finite_gradients(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for name, p in params.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        if m.shape != p.shape:
            raise DimensionError(f'moment shape {m.shape} does not match parameter {name} {p.shape}')
        m = b1 * m + (1.0 - b1) * p.grad
        v = b2 * v + (1.0 - b2) * p.grad * p.grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.value -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return state


def _scalar(out):
    value = out.item()
    if not np.isfinite(value):
        raise NumericError(f'function value is not finite: {value}')
    return value


def backward_check(f, params, tolerance=GRAD_CHECK_TOLERANCE, step=GRAD_CHECK_STEP,
                   max_entries=None, rng=None):
    """Compare tape gradients of ``f`` with central finite differences.

    ``f(tape)`` must build a 1x1 tensor from ``params`` and record on ``tape``
    when one is given. Returns the largest
    ``|analytic - numeric| / max(1, |analytic| + |numeric|)`` over the checked
    entries. ``max_entries`` limits how many entries per parameter are checked.
    """
    if not isinstance(params, dict):
        params = {p.name or str(k): p for k, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    tape = Tape()
    out = f(tape)
    _scalar(out)
    tape.backward(out)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        size = p.value.size
        if max_entries is not None and size > max_entries:
            flat_indices = rng.choice(size, size=max_entries, replace=False)
        else:
            flat_indices = range(size)
        for k in flat_indices:
            pos = np.unravel_index(int(k), p.shape)
            original = p.value[pos]
            p.value[pos] = original + step
            plus = _scalar(f(None))
            p.value[pos] = original - step
            minus = _scalar(f(None))
            p.value[pos] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = analytic[name][pos]
            error = abs(exact - numeric) / max(1.0, abs(exact) + abs(numeric))
            worst = max(worst, error)

    if worst >= tolerance:
        logger.warning(f'Gradient check failed: max relative error {worst:.3e} >= {tolerance:.1e}')
    else:
        logger.debug(f'Gradient check passed: max relative error {worst:.3e}')
    return worst
