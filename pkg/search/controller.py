"""Encoder, accuracy predictor and decoder trained jointly over token sequences.

The encoder is a single-layer LSTM whose hidden states are averaged over the
non-PAD positions to give the architecture embedding. The predictor maps the
embedding through a small fully connected stack and a sigmoid. The decoder is
an LSTM started from the embedding that also sees the embedding at every step;
it rebuilds the token sequence greedily under the layout masks.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .exceptions import DimensionError, NumericError, UsageError
from .microgradient import (
    AdamState,
    Tape,
    Tensor2,
    adam_update,
    check_finite_gradients,
    clip_grad_norm,
    concat_cols,
    dropout,
    embedding_lookup,
    init_uniform,
    linear,
    make_linear,
    make_lstm_cell,
    masked_mean,
    mse_loss,
    recurrent_step,
    relu,
    scale,
    add,
    sigmoid,
    softmax_cross_entropy,
)
from .search_space import (
    EDGE_OFF,
    EDGE_ON,
    PAD,
    SOS,
    SearchSpaceSpec,
    TokenSequence,
    canonical_hash,
    decode_tokens,
    encode_tokens,
)

logger = logging.getLogger(__name__)

GROUND_TRUTH = 'ground_truth'
PSEUDO = 'pseudo'
SOURCES = (GROUND_TRUTH, PSEUDO)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ControllerConfig:
    hidden_size: int = 16
    predictor_widths: tuple = (16, 64, 1)
    loss_weight_lambda: float = 0.8
    learning_rate: float = 0.001
    epochs_supervised: int = 1000
    epochs_semi: int = 1000
    dropout_rate: float = 0.1
    upsample_ratio: int = 100
    batch_size: int = 100
    grad_clip: float = 5.0
    init_scale: float = 0.1
    warm_start: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'predictor_widths', tuple(int(w) for w in self.predictor_widths))
        if self.hidden_size < 1:
            raise UsageError(f'hidden_size must be positive, got {self.hidden_size}')
        if not self.predictor_widths or self.predictor_widths[-1] != 1:
            raise UsageError(f'predictor must end in a single output, got widths {self.predictor_widths}')
        if not 0.0 <= self.loss_weight_lambda <= 1.0:
            raise UsageError(f'loss_weight_lambda must lie in [0, 1], got {self.loss_weight_lambda}')
        if not 0.0 <= self.dropout_rate < 1.0:
            raise UsageError(f'dropout_rate must lie in [0, 1), got {self.dropout_rate}')
        if self.learning_rate <= 0:
            raise UsageError(f'learning_rate must be positive, got {self.learning_rate}')
        if self.epochs_supervised < 0 or self.epochs_semi < 0:
            raise UsageError('epoch counts must be non-negative')
        if self.upsample_ratio < 1:
            raise UsageError(f'upsample_ratio must be at least 1, got {self.upsample_ratio}')
        if self.batch_size < 1:
            raise UsageError(f'batch_size must be positive, got {self.batch_size}')

    @property
    def keep_prob(self):
        return 1.0 - self.dropout_rate

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        data = dataclasses.asdict(self)
        data['predictor_widths'] = list(self.predictor_widths)
        return data


@dataclass(frozen=True)
class LabeledArchitecture:
    graph: object
    accuracy: float
    source: str = GROUND_TRUTH

    @property
    def digest(self):
        return canonical_hash(self.graph)


class Dataset:
    """Labeled architectures; ground-truth hashes are unique unless ``unique`` is off.

    Training multisets built by :func:`upsample` repeat ground-truth records
    and are created with ``unique=False``.
    """

    def __init__(self, records=(), unique=True):
        self.unique = unique
        self._records = []
        self._truth = {}
        for record in records:
            self.add(record)

    def add(self, record):
        if record.source not in SOURCES:
            raise UsageError(f'unknown record source {record.source!r}')
        if not (np.isfinite(record.accuracy) and 0.0 <= record.accuracy <= 1.0):
            raise UsageError(f'accuracy must lie in [0, 1], got {record.accuracy}')
        if record.source == GROUND_TRUTH:
            digest = record.digest
            if self.unique and digest in self._truth:
                raise UsageError(f'architecture {digest} already has a ground-truth record')
            self._truth.setdefault(digest, record.accuracy)
        self._records.append(record)
        return record

    def add_ground_truth(self, graph, accuracy):
        return self.add(LabeledArchitecture(graph, float(accuracy), GROUND_TRUTH))

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def records(self):
        return tuple(self._records)

    def ground_truth(self):
        return [r for r in self._records if r.source == GROUND_TRUTH]

    def pseudo(self):
        return [r for r in self._records if r.source == PSEUDO]

    def ground_truth_hashes(self):
        return set(self._truth)

    def accuracy_of(self, digest):
        return self._truth.get(digest)

    def graphs(self):
        return [r.graph for r in self._records]

    def accuracies(self):
        return np.array([r.accuracy for r in self._records], dtype=float)

    def union(self, other):
        """Records of both sets; pseudo records for a known ground-truth hash are dropped."""
        merged = Dataset(unique=self.unique and other.unique)
        for record in list(self) + list(other):
            if record.source == GROUND_TRUTH:
                if merged.unique and record.digest in merged._truth:
                    continue
                merged.add(record)
        truth = merged.ground_truth_hashes()
        for record in list(self) + list(other):
            if record.source == PSEUDO and record.digest not in truth:
                merged.add(record)
        return merged


class ControllerModel:
    """Parameters of the encoder, predictor and decoder plus optimizer state."""

    def __init__(self, spec=None, config=None, seed=0):
        self.spec = spec or SearchSpaceSpec()
        self.config = config or ControllerConfig()
        self.seed = seed
        self.vocabulary = self.spec.vocabulary
        self.layout = self.spec.layout
        self.reset_parameters()

    def reset_parameters(self, seed=None):
        rng = np.random.default_rng(self.seed if seed is None else seed)
        hidden = self.config.hidden_size
        s = self.config.init_scale
        self.embedding = init_uniform(rng, (len(self.vocabulary), hidden), s, 'embedding')
        self.encoder = make_lstm_cell(rng, hidden, hidden, s, 'encoder')
        widths = (hidden,) + self.config.predictor_widths
        self.predictor = [
            make_linear(rng, widths[k], widths[k + 1], s, f'predictor.{k}')
            for k in range(len(widths) - 1)
        ]
        self.decoder = make_lstm_cell(rng, 2 * hidden, hidden, s, 'decoder')
        self.projection = make_linear(rng, hidden, len(self.vocabulary), s, 'projection')
        self.adam = AdamState(learning_rate=self.config.learning_rate)
        self.trained = False

    def parameters(self):
        params = {'embedding': self.embedding}
        for prefix, part in (('encoder', self.encoder), ('decoder', self.decoder)):
            params[f'{prefix}.weight'] = part.weight
            params[f'{prefix}.bias'] = part.bias
        for k, layer in enumerate(self.predictor):
            params[f'predictor.{k}.weight'] = layer.weight
            params[f'predictor.{k}.bias'] = layer.bias
        params['projection.weight'] = self.projection.weight
        params['projection.bias'] = self.projection.bias
        return params

    def decoder_parameters(self):
        return {name: p for name, p in self.parameters().items()
                if name.startswith(('decoder.', 'projection.'))}

    def token_ids(self, sequences):
        """Id matrix (N x length) for token sequences or cells."""
        rows = []
        for item in sequences:
            tokens = item if isinstance(item, TokenSequence) else encode_tokens(item, self.spec)
            if len(tokens) != self.layout.length:
                raise UsageError(f'token sequence has {len(tokens)} tokens, layout needs {self.layout.length}')
            rows.append(self.vocabulary.ids(tokens.tokens))
        if not rows:
            return np.zeros((0, self.layout.length), dtype=np.intp)
        return np.stack(rows)


def _zeros(rows, cols):
    return Tensor2(np.zeros((rows, cols)), copy=False)


def _encode_ids(model, tape, ids, keep_prob=1.0, rng=None):
    batch, length = ids.shape
    hidden = model.config.hidden_size
    h, c = _zeros(batch, hidden), _zeros(batch, hidden)
    outputs = []
    for t in range(length):
        x = embedding_lookup(tape, model.embedding, ids[:, t])
        h, c = recurrent_step(tape, x, h, c, model.encoder)
        outputs.append(dropout(tape, h, keep_prob, rng))
    mask = (ids != model.vocabulary.pad_id).T
    return masked_mean(tape, outputs, mask)


def _predictor_logit(model, tape, e, keep_prob=1.0, rng=None):
    x = e
    last = len(model.predictor) - 1
    for k, layer in enumerate(model.predictor):
        x = linear(tape, x, layer)
        if k < last:
            x = dropout(tape, relu(tape, x), keep_prob, rng)
    return x


def _reconstruction_loss(model, tape, e, ids):
    batch, length = ids.shape
    h, c = e, _zeros(batch, model.config.hidden_size)
    total = None
    for t in range(length - 1):
        x = concat_cols(tape, [embedding_lookup(tape, model.embedding, ids[:, t]), e])
        h, c = recurrent_step(tape, x, h, c, model.decoder)
        logits = linear(tape, h, model.projection)
        step = softmax_cross_entropy(tape, logits, ids[:, t + 1], model.layout.legal[t + 1])
        total = step if total is None else add(tape, total, step)
    return scale(tape, total, 1.0 / (length - 1))


def _joint_loss(model, tape, ids, targets, config, rng=None):
    keep = config.keep_prob if rng is not None else 1.0
    e = _encode_ids(model, tape, ids, keep, rng)
    prediction = sigmoid(tape, _predictor_logit(model, tape, e, keep, rng))
    regression = mse_loss(tape, prediction, targets)
    reconstruction = _reconstruction_loss(model, tape, e, ids)
    weight = config.loss_weight_lambda
    total = add(tape, scale(tape, regression, weight), scale(tape, reconstruction, 1.0 - weight))
    return total, regression, reconstruction


def joint_loss(model, graphs, accuracies, tape=None, config=None, rng=None):
    """``(total, regression, reconstruction)`` tensors for a batch of cells."""
    ids = model.token_ids(graphs)
    targets = np.asarray(accuracies, dtype=float).reshape(-1, 1)
    return _joint_loss(model, tape, ids, targets, config or model.config, rng)


def _check_embedding(model, e):
    e = np.asarray(e, dtype=float)
    if e.shape != (model.config.hidden_size,):
        raise DimensionError(f'embedding must have shape ({model.config.hidden_size},), got {e.shape}')
    return e


def encode(model, t):
    if not isinstance(t, TokenSequence):
        t = TokenSequence(t)
    ids = model.token_ids([t])
    return _encode_ids(model, None, ids).value[0].copy()


def encode_graph(model, g):
    return encode(model, encode_tokens(g, model.spec))


def encode_batch(model, graphs, chunk_size=1024):
    graphs = list(graphs)
    if not graphs:
        return np.zeros((0, model.config.hidden_size))
    chunks = []
    for start in range(0, len(graphs), chunk_size):
        ids = model.token_ids(graphs[start:start + chunk_size])
        chunks.append(_encode_ids(model, None, ids).value)
    return np.concatenate(chunks, axis=0)


def predict(model, e):
    e = _check_embedding(model, e)
    return float(expit(_predictor_logit(model, None, Tensor2(e)).value[0, 0]))


def predict_batch(model, embeddings):
    embeddings = np.asarray(embeddings, dtype=float)
    if embeddings.ndim != 2 or embeddings.shape[1] != model.config.hidden_size:
        raise DimensionError(f'embeddings must be N x {model.config.hidden_size}, got {embeddings.shape}')
    if not len(embeddings):
        return np.zeros(0)
    return expit(_predictor_logit(model, None, Tensor2(embeddings)).value[:, 0])


def predict_gradient(model, e):
    """Predicted accuracy at ``e`` and its gradient with respect to ``e``."""
    e = _check_embedding(model, e)
    tape = Tape()
    leaf = Tensor2(e)
    out = sigmoid(tape, _predictor_logit(model, tape, leaf))
    tape.backward(out)
    for layer in model.predictor:
        layer.weight.zero_grad()
        layer.bias.zero_grad()
    return out.item(), leaf.grad[0].copy()


def decode(model, e, rng=None):
    """Greedy decode under the layout masks; the result always parses.

    Once ``max_edges`` edges are emitted every further edge bit is forced off,
    and a node slot that already has an edge may not be left empty.
    """
    e = Tensor2(_check_embedding(model, e))
    vocabulary, layout = model.vocabulary, model.layout
    edge_off = vocabulary.id_of(EDGE_OFF)
    h, c = e, _zeros(1, model.config.hidden_size)
    prev = vocabulary.id_of(SOS)
    tokens = [SOS]
    edges_on = 0
    touched = set()
    for position in range(1, layout.length):
        x = concat_cols(None, [embedding_lookup(None, model.embedding, [prev]), e])
        h, c = recurrent_step(None, x, h, c, model.decoder)
        logits = linear(None, h, model.projection).value[0]
        legal = layout.legal[position].copy()
        kind = layout.kind(position)
        if kind == 'edge' and edges_on >= model.spec.max_edges:
            legal[:] = False
            legal[edge_off] = True
        elif kind == 'node' and position - layout.first_node in touched:
            legal[vocabulary.pad_id] = False
        choice = int(np.argmax(np.where(legal, logits, -np.inf)))
        token = vocabulary.tokens[choice]
        if kind == 'edge' and token == EDGE_ON:
            edges_on += 1
            touched.update(layout.edge_slots[position - layout.first_edge])
        tokens.append(token)
        prev = choice
    return TokenSequence(tokens)


def decode_graph(model, e, rng=None):
    return decode_tokens(decode(model, e, rng), model.spec)


@dataclass(frozen=True)
class EpochLosses:
    epoch: int
    regression: float
    reconstruction: float
    total: float


@dataclass
class TrainingReport:
    phase: str
    records: int
    epochs: list = field(default_factory=list)

    @property
    def final(self):
        return self.epochs[-1] if self.epochs else None

    def series(self, name):
        return [getattr(epoch, name) for epoch in self.epochs]


@dataclass
class SemiSupervisedReport:
    supervised: TrainingReport
    semi: object
    pseudo: Dataset

    @property
    def phases(self):
        return [p for p in (self.supervised, self.semi) if p is not None]

    @property
    def final(self):
        return self.phases[-1].final


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def fit_supervised(model, dataset, config=None, rng=None, epochs=None, phase='supervised'):
    """Train all three parts jointly on ``dataset`` with Adam and gradient clipping."""
    config = config or model.config
    if not len(dataset):
        raise UsageError('cannot train on an empty dataset')
    rng = rng if rng is not None else np.random.default_rng(model.seed)
    epochs = config.epochs_supervised if epochs is None else epochs
    ids = model.token_ids(dataset.graphs())
    targets = dataset.accuracies().reshape(-1, 1)
    params = model.parameters()
    model.adam.learning_rate = config.learning_rate
    report = TrainingReport(phase=phase, records=len(dataset))
    n = len(ids)

    for epoch in range(epochs):
        sums = np.zeros(3)
        for batch in _batches(n, config.batch_size, rng):
            for p in params.values():
                p.zero_grad()
            tape = Tape()
            total, regression, reconstruction = _joint_loss(
                model, tape, ids[batch], targets[batch], config, rng)
            value = total.item()
            if not np.isfinite(value):
                raise NumericError(f'non-finite loss at epoch {epoch} of {phase} training')
            tape.backward(total)
            check_finite_gradients(params)
            clip_grad_norm(params, config.grad_clip)
            adam_update(params, model.adam)
            sums += np.array([regression.item(), reconstruction.item(), value]) * len(batch)
        regression_mean, reconstruction_mean, total_mean = sums / n
        report.epochs.append(EpochLosses(epoch, regression_mean, reconstruction_mean, total_mean))
        logger.debug(f'{phase} epoch {epoch}: regression={regression_mean:.6f} '
                     f'reconstruction={reconstruction_mean:.6f} total={total_mean:.6f}')

    model.trained = True
    if report.final is not None:
        logger.info(f'Finished {phase} training on {n} records over {epochs} epochs '
                    f'(total loss {report.final.total:.6f})')
    return report


def pseudo_label(model, archs, exclude=()):
    """Predicted-accuracy records for ``archs``, skipping hashes listed in ``exclude``."""
    if not model.trained:
        raise UsageError('the controller has not been trained yet')
    exclude = set(exclude)
    keep = [g for g in archs if canonical_hash(g) not in exclude]
    dataset = Dataset(unique=False)
    if not keep:
        return dataset
    predictions = predict_batch(model, encode_batch(model, keep))
    for g, value in zip(keep, predictions):
        dataset.add(LabeledArchitecture(g, float(value), PSEUDO))
    return dataset


def upsample(dataset, ratio):
    """Repeat every ground-truth record ``ratio`` times; pseudo records stay single."""
    if ratio < 1:
        raise UsageError(f'upsample ratio must be at least 1, got {ratio}')
    out = Dataset(unique=False)
    for record in dataset:
        copies = ratio if record.source == GROUND_TRUTH else 1
        for _ in range(copies):
            out.add(record)
    return out


def fit_semi_supervised(model, labeled, unlabeled, config=None, rng=None):
    """Supervised phase, pseudo-labeling, then retraining on the up-sampled mixture.

    The second phase is skipped when nothing is left to pseudo-label, so an
    empty unlabeled pool reduces to plain supervised training.
    """
    config = config or model.config
    if not len(labeled):
        raise UsageError('cannot train on an empty labeled set')
    rng = rng if rng is not None else np.random.default_rng(model.seed)
    first = fit_supervised(model, labeled, config, rng, epochs=config.epochs_supervised)
    pseudo = pseudo_label(model, unlabeled, exclude=labeled.ground_truth_hashes())
    if not len(pseudo):
        logger.info('No unlabeled architectures left, skipping the semi-supervised phase')
        return SemiSupervisedReport(first, None, pseudo)

    mixed = upsample(labeled, config.upsample_ratio)
    for record in pseudo:
        mixed.add(record)
    if not config.warm_start:
        model.reset_parameters()
    logger.info(f'Retraining on {len(labeled)} labeled x{config.upsample_ratio} '
                f'and {len(pseudo)} pseudo-labeled architectures')
    second = fit_supervised(model, mixed, config, rng, epochs=config.epochs_semi,
                            phase='semi-supervised')
    return SemiSupervisedReport(first, second, pseudo)


def token_accuracy(model, graphs):
    """Teacher-forced share of positions where the masked argmax equals the target."""
    ids = model.token_ids(graphs)
    if not len(ids):
        raise UsageError('no architectures to score')
    batch, length = ids.shape
    e = _encode_ids(model, None, ids)
    h, c = e, _zeros(batch, model.config.hidden_size)
    hits = 0
    for t in range(length - 1):
        x = concat_cols(None, [embedding_lookup(None, model.embedding, ids[:, t]), e])
        h, c = recurrent_step(None, x, h, c, model.decoder)
        logits = linear(None, h, model.projection).value
        masked = np.where(model.layout.legal[t + 1], logits, -np.inf)
        hits += int(np.sum(np.argmax(masked, axis=1) == ids[:, t + 1]))
    return hits / (batch * (length - 1))


def reconstruction_accuracy(model, graphs):
    """Share of cells whose greedy decode reproduces their token sequence exactly."""
    graphs = list(graphs)
    if not graphs:
        raise UsageError('no architectures to score')
    embeddings = encode_batch(model, graphs)
    hits = sum(
        decode(model, e) == encode_tokens(g, model.spec)
        for g, e in zip(graphs, embeddings)
    )
    return hits / len(graphs)


def save_model(model, path):
    """Write parameters, Adam moments and configuration to a ``.npz`` file."""
    path = Path(path)
    if path.suffix != '.npz':
        path = path.with_name(path.name + '.npz')
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        'version': CHECKPOINT_VERSION,
        'seed': model.seed,
        'trained': model.trained,
        'config': model.config.as_dict(),
        'spec': {
            'max_nodes': model.spec.max_nodes,
            'max_edges': model.spec.max_edges,
            'op_vocabulary': list(model.spec.op_vocabulary),
        },
        'adam': {
            'learning_rate': model.adam.learning_rate,
            'beta1': model.adam.beta1,
            'beta2': model.adam.beta2,
            'epsilon': model.adam.epsilon,
            'step': model.adam.step,
        },
    }
    arrays = {'meta': np.array(json.dumps(meta, sort_keys=True))}
    for name, p in model.parameters().items():
        arrays[f'param/{name}'] = p.value
        if name in model.adam.first_moment:
            arrays[f'adam_m/{name}'] = model.adam.first_moment[name]
            arrays[f'adam_v/{name}'] = model.adam.second_moment[name]
    np.savez(path, **arrays)
    logger.info(f'Saved controller checkpoint to {path}')
    return path


def load_model(path):
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data['meta']))
        if meta.get('version') != CHECKPOINT_VERSION:
            raise UsageError(f'unsupported checkpoint version {meta.get("version")!r}')
        spec = SearchSpaceSpec(meta['spec']['max_nodes'], meta['spec']['max_edges'],
                               tuple(meta['spec']['op_vocabulary']))
        config = ControllerConfig(**meta['config'])
        model = ControllerModel(spec, config, seed=meta['seed'])
        for name, p in model.parameters().items():
            stored = data[f'param/{name}']
            if stored.shape != p.shape:
                raise DimensionError(f'checkpoint parameter {name} has shape {stored.shape}, expected {p.shape}')
            p.value[...] = stored
            if f'adam_m/{name}' in data:
                model.adam.first_moment[name] = data[f'adam_m/{name}'].copy()
                model.adam.second_moment[name] = data[f'adam_v/{name}'].copy()
        model.adam = dataclasses.replace(model.adam, **meta['adam'])
        model.trained = meta['trained']
    return model
