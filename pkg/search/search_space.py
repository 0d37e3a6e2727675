"""Cell-DAG search space: validity rules, sampling, mutation, hashing and token encoding."""

import functools
import hashlib
import itertools
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import (
    AlphabetError,
    ConfigurationError,
    DecodeError,
    InvalidArchitectureError,
    UsageError,
)

logger = logging.getLogger(__name__)

INPUT = 'input'
OUTPUT = 'output'

PAD = '<pad>'
SOS = '<sos>'
EOS = '<eos>'
EDGE_OFF = '0'
EDGE_ON = '1'

DEFAULT_OPS = ('conv1x1', 'conv3x3', 'maxpool3x3')

# Names used by public NASBench-101 exports.
OP_ALIASES = {
    'conv1x1-bn-relu': 'conv1x1',
    'conv3x3-bn-relu': 'conv3x3',
}

RESERVED = (INPUT, OUTPUT, PAD, SOS, EOS, EDGE_OFF, EDGE_ON)

ENUMERATION_MAX_NODES = 5
SHAPE_TABLE_MAX_NODES = 7

# Share of random draws that pick the node count uniformly before sampling.
NODE_COUNT_SHARE = 0.01


def normalize_op(name):
    name = name.strip()
    return OP_ALIASES.get(name, name)


@dataclass(frozen=True)
class SearchSpaceSpec:
    max_nodes: int = 7
    max_edges: int = 9
    op_vocabulary: tuple = DEFAULT_OPS

    def __post_init__(self):
        object.__setattr__(self, 'op_vocabulary', tuple(self.op_vocabulary))
        if self.max_nodes < 2:
            raise ConfigurationError(f'max_nodes must be at least 2, got {self.max_nodes}')
        if self.max_edges < 1:
            raise ConfigurationError(f'max_edges must be at least 1, got {self.max_edges}')
        if not self.op_vocabulary:
            raise ConfigurationError('op_vocabulary must not be empty')
        reserved = [op for op in self.op_vocabulary if op in RESERVED]
        if reserved:
            raise ConfigurationError(f'reserved names in op_vocabulary: {reserved}')
        if len(set(self.op_vocabulary)) != len(self.op_vocabulary):
            raise ConfigurationError('op_vocabulary contains duplicates')

    @cached_property
    def vocabulary(self):
        return TokenVocabulary(self)

    @cached_property
    def layout(self):
        return TokenLayout(self)


@dataclass(frozen=True)
class CellGraph:
    """Operations per node plus an adjacency matrix; node 0 is the input, the last node the output."""

    ops: tuple
    adjacency: tuple

    def __post_init__(self):
        ops = tuple(str(op) for op in self.ops)
        adjacency = tuple(tuple(int(bool(v)) for v in row) for row in np.asarray(self.adjacency).tolist()) \
            if len(ops) else ()
        if len(adjacency) != len(ops) or any(len(row) != len(ops) for row in adjacency):
            raise InvalidArchitectureError(
                f'adjacency must be {len(ops)}x{len(ops)} to match {len(ops)} operations')
        object.__setattr__(self, 'ops', ops)
        object.__setattr__(self, 'adjacency', adjacency)

    @property
    def num_nodes(self):
        return len(self.ops)

    @property
    def num_edges(self):
        return sum(map(sum, self.adjacency))

    @property
    def matrix(self):
        return np.array(self.adjacency, dtype=np.int8).reshape(self.num_nodes, self.num_nodes)

    def edges(self):
        return [(i, j) for i, row in enumerate(self.adjacency) for j, v in enumerate(row) if v]

    def to_text(self):
        bits = ''.join(str(v) for row in self.adjacency for v in row)
        return f"ops={','.join(self.ops)};adj={bits}"

    @classmethod
    def from_text(cls, text):
        fields = {}
        for part in text.strip().split(';'):
            key, sep, value = part.partition('=')
            if not sep:
                raise InvalidArchitectureError(f'malformed architecture text: {text!r}')
            fields[key.strip()] = value.strip()
        if set(fields) != {'ops', 'adj'}:
            raise InvalidArchitectureError(f'architecture text needs ops= and adj=, got {sorted(fields)}')
        ops = [normalize_op(op) for op in fields['ops'].split(',')]
        bits = fields['adj']
        n = len(ops)
        if len(bits) != n * n or set(bits) - {'0', '1'}:
            raise InvalidArchitectureError(f'adj must be {n * n} characters of 0/1, got {bits!r}')
        matrix = [[int(bits[i * n + j]) for j in range(n)] for i in range(n)]
        return cls(tuple(ops), matrix)

    def __str__(self):
        return self.to_text()


def _reachability(matrix):
    n = matrix.shape[0]
    forward = np.zeros(n, dtype=bool)
    backward = np.zeros(n, dtype=bool)
    forward[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in np.nonzero(matrix[u])[0]:
            if not forward[v]:
                forward[v] = True
                stack.append(v)
    backward[n - 1] = True
    stack = [n - 1]
    while stack:
        v = stack.pop()
        for u in np.nonzero(matrix[:, v])[0]:
            if not backward[u]:
                backward[u] = True
                stack.append(u)
    return forward, backward


def validate(g, spec):
    """Return every rule ``g`` breaks; an empty list means the cell is valid."""
    violations = []
    n = g.num_nodes
    if n < 2:
        return ['fewer than two nodes']
    if n > spec.max_nodes:
        violations.append(f'node budget exceeded ({n} > {spec.max_nodes})')
    if g.ops[0] != INPUT:
        violations.append('first node must be the input')
    if g.ops[-1] != OUTPUT:
        violations.append('last node must be the output')
    for k, op in enumerate(g.ops[1:-1], start=1):
        if op not in spec.op_vocabulary:
            violations.append(f'node {k}: unknown operation {op!r}')
    matrix = g.matrix
    if np.any(np.tril(matrix)):
        violations.append('adjacency is not strictly upper-triangular')
    edges = int(matrix.sum())
    if edges > spec.max_edges:
        violations.append(f'edge budget exceeded ({edges} > {spec.max_edges})')
    forward, backward = _reachability(matrix)
    if not forward[n - 1]:
        violations.append('output not reachable from input')
    for k in range(1, n - 1):
        if not (forward[k] and backward[k]):
            violations.append(f'node {k} not on any input-output path')
    return violations


def is_valid(g, spec):
    return not validate(g, spec)


def prune(g):
    """Drop nodes off every input-output path; None when the output is unreachable."""
    matrix = np.triu(g.matrix, 1)
    forward, backward = _reachability(matrix)
    if not forward[-1]:
        return None
    keep = np.nonzero(forward & backward)[0]
    sub = matrix[np.ix_(keep, keep)]
    return CellGraph(tuple(g.ops[k] for k in keep), sub)


def _topological_orders(matrix):
    """All orderings of the inner nodes that keep every edge pointing forward."""
    n = matrix.shape[0]
    inner = list(range(1, n - 1))
    preds = {v: {u for u in inner if matrix[u, v]} for v in inner}
    order = []
    placed = set()

    def extend():
        if len(order) == len(inner):
            yield list(order)
            return
        for v in inner:
            if v not in placed and preds[v] <= placed:
                order.append(v)
                placed.add(v)
                yield from extend()
                placed.remove(v)
                order.pop()

    return extend()


def canonicalize(g):
    """Pruned, relabelled form shared by every isomorphic copy of ``g``."""
    pruned = prune(g)
    if pruned is None:
        raise InvalidArchitectureError('output is not reachable from input', ['output not reachable from input'])
    matrix = pruned.matrix
    n = pruned.num_nodes
    best_key = None
    best = None
    for inner in _topological_orders(matrix):
        perm = [0] + inner + [n - 1]
        relabelled = matrix[np.ix_(perm, perm)]
        key = (relabelled.tobytes(), tuple(pruned.ops[k] for k in perm))
        if best_key is None or key < best_key:
            best_key = key
            best = (perm, relabelled)
    perm, relabelled = best
    return CellGraph(tuple(pruned.ops[k] for k in perm), relabelled)


@functools.lru_cache(maxsize=262144)
def canonical_hash(g):
    """Lowercase hex digest of the canonical form."""
    return hashlib.sha256(canonicalize(g).to_text().encode('utf-8')).hexdigest()


class TokenVocabulary:
    def __init__(self, spec):
        self.tokens = (PAD, SOS, EOS, EDGE_OFF, EDGE_ON, INPUT, OUTPUT) + spec.op_vocabulary
        self._index = {token: k for k, token in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def id_of(self, token):
        try:
            return self._index[token]
        except KeyError:
            raise AlphabetError(f'unknown token {token!r}') from None

    def ids(self, tokens):
        return np.array([self.id_of(t) for t in tokens], dtype=np.intp)

    def tokens_of(self, ids):
        return tuple(self.tokens[int(k)] for k in ids)

    @property
    def pad_id(self):
        return self._index[PAD]


class TokenLayout:
    """Fixed positions: SOS, upper-triangular edge bits row-major, one token per node slot, EOS."""

    def __init__(self, spec):
        v = spec.max_nodes
        self.frame_size = v
        self.edge_slots = [(i, j) for i in range(v) for j in range(i + 1, v)]
        self.first_edge = 1
        self.first_node = 1 + len(self.edge_slots)
        self.eos_position = self.first_node + v
        self.length = self.eos_position + 1

        inner = frozenset(spec.op_vocabulary) | {PAD}
        allowed = [frozenset({SOS})]
        allowed += [frozenset({EDGE_OFF, EDGE_ON})] * len(self.edge_slots)
        allowed += [frozenset({INPUT})] + [inner] * (v - 2) + [frozenset({OUTPUT})]
        allowed += [frozenset({EOS})]
        self.allowed = allowed

        vocabulary = spec.vocabulary
        self.legal = np.zeros((self.length, len(vocabulary)), dtype=bool)
        for position, tokens in enumerate(allowed):
            for token in tokens:
                self.legal[position, vocabulary.id_of(token)] = True

    def kind(self, position):
        if position == 0:
            return 'start'
        if position < self.first_node:
            return 'edge'
        if position < self.eos_position:
            return 'node'
        return 'end'

    def edge_position(self, i, j):
        return self.first_edge + self.edge_slots.index((i, j))


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(self.tokens))

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def _frame_slot(k, n, v):
    return v - 1 if k == n - 1 else k


def encode_tokens(g, spec):
    layout = spec.layout
    n, v = g.num_nodes, spec.max_nodes
    if not 2 <= n <= v:
        raise InvalidArchitectureError(f'cannot encode a {n}-node cell in a {v}-node space')
    unknown = [op for op in g.ops[1:-1] if op not in spec.op_vocabulary]
    if unknown or g.ops[0] != INPUT or g.ops[-1] != OUTPUT:
        raise InvalidArchitectureError(f'cannot encode operations {g.ops}')
    frame = np.zeros((v, v), dtype=np.int8)
    slots = [PAD] * v
    for k, op in enumerate(g.ops):
        slots[_frame_slot(k, n, v)] = op
    for i, j in g.edges():
        if i < j:
            frame[_frame_slot(i, n, v), _frame_slot(j, n, v)] = 1
    tokens = [SOS]
    tokens += [EDGE_ON if frame[i, j] else EDGE_OFF for i, j in layout.edge_slots]
    tokens += slots
    tokens.append(EOS)
    return TokenSequence(tokens)


def decode_tokens(t, spec):
    layout = spec.layout
    tokens = list(t.tokens if isinstance(t, TokenSequence) else t)
    for position, token in enumerate(tokens[:layout.length]):
        if token not in layout.allowed[position]:
            raise DecodeError(position, f'{token!r} not allowed at {layout.kind(position)} position')
    if len(tokens) != layout.length:
        raise DecodeError(min(len(tokens), layout.length),
                          f'sequence has {len(tokens)} tokens, layout needs {layout.length}')
    v = layout.frame_size
    slots = tokens[layout.first_node:layout.eos_position]
    frame = np.zeros((v, v), dtype=np.int8)
    for offset, (i, j) in enumerate(layout.edge_slots):
        if tokens[layout.first_edge + offset] == EDGE_ON:
            if slots[i] == PAD or slots[j] == PAD:
                raise DecodeError(layout.first_edge + offset, f'edge {i}->{j} touches an empty node slot')
            frame[i, j] = 1
    present = [s for s in range(v) if slots[s] != PAD]
    return CellGraph(tuple(slots[s] for s in present), frame[np.ix_(present, present)])


def random_genotype(spec, rng, num_nodes=None):
    """Unpruned cell of ``num_nodes`` (default ``max_nodes``) nodes, every potential edge on with probability 1/2."""
    v = num_nodes or spec.max_nodes
    matrix = np.triu(rng.integers(0, 2, size=(v, v)), 1)
    inner = rng.integers(0, len(spec.op_vocabulary), size=v - 2)
    ops = (INPUT,) + tuple(spec.op_vocabulary[k] for k in inner) + (OUTPUT,)
    return CellGraph(ops, matrix)


def _repair(g, spec, rng):
    v = g.num_nodes
    matrix = g.matrix.copy()
    matrix[0, v - 1] = 1
    candidates = [(int(i), int(j)) for i, j in zip(*np.nonzero(matrix)) if (i, j) != (0, v - 1)]
    rng.shuffle(candidates)
    for i, j in candidates:
        if prune(CellGraph(g.ops, matrix)).num_edges <= spec.max_edges:
            break
        matrix[i, j] = 0
    return prune(CellGraph(g.ops, matrix))


def _pairs(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


@functools.lru_cache(maxsize=32)
def _connected_shapes(n, max_edges):
    """Edge bitmasks over ``_pairs(n)`` that keep all ``n`` nodes on an input-output path."""
    pairs = _pairs(n)
    masks = np.arange(1 << len(pairs), dtype=np.int64)
    edge_count = np.zeros(len(masks), dtype=np.int8)
    for k in range(len(pairs)):
        edge_count += (masks >> k & 1).astype(np.int8)
    masks = masks[edge_count <= max_edges]

    forward = [np.zeros(len(masks), dtype=bool) for _ in range(n)]
    backward = [np.zeros(len(masks), dtype=bool) for _ in range(n)]
    forward[0][:] = True
    backward[n - 1][:] = True
    for k, (i, j) in enumerate(pairs):
        forward[j] |= forward[i] & (masks >> k & 1 == 1)
    for k in reversed(range(len(pairs))):
        i, j = pairs[k]
        backward[i] |= backward[j] & (masks >> k & 1 == 1)
    keep = np.logical_and.reduce([f & b for f, b in zip(forward, backward)])
    return masks[keep]


@functools.lru_cache(maxsize=8)
def _inner_orders(n):
    """Node positions (P x n) for every order of the inner nodes; input and output stay put."""
    orders = list(itertools.permutations(range(1, n - 1)))
    positions = np.zeros((len(orders), n), dtype=np.intp)
    positions[:, n - 1] = n - 1
    if n > 2:
        positions[:, 1:n - 1] = np.array(orders)
    return positions


def labeling_count(g, spec):
    """Number of distinct upper-triangular labelings of ``g`` with input first and output last."""
    n = g.num_nodes
    edges = np.array(g.edges(), dtype=np.intp).reshape(-1, 2)
    positions = _inner_orders(n)
    positions = positions[np.all(positions[:, edges[:, 0]] < positions[:, edges[:, 1]], axis=1)]
    slot = np.zeros((n, n), dtype=np.int64)
    for k, (i, j) in enumerate(_pairs(n)):
        slot[i, j] = k
    edge_keys = (np.int64(1) << slot[positions[:, edges[:, 0]], positions[:, edges[:, 1]]]).sum(axis=1)
    op_ids = np.array([0] + [1 + spec.op_vocabulary.index(op) for op in g.ops[1:-1]] + [0], dtype=np.int64)
    base = np.int64(len(spec.op_vocabulary) + 1)
    op_keys = (op_ids[None, :] * base ** positions).sum(axis=1)
    return len(set(zip(edge_keys.tolist(), op_keys.tolist())))


def _shape_cell(n, mask, inner, spec):
    matrix = np.zeros((n, n), dtype=np.int8)
    for k, (i, j) in enumerate(_pairs(n)):
        if mask >> k & 1:
            matrix[i, j] = 1
    ops = (INPUT,) + tuple(spec.op_vocabulary[int(k)] for k in inner) + (OUTPUT,)
    return CellGraph(ops, matrix)


def _random_by_pruning(spec, rng, max_retries):
    n = int(rng.integers(2, spec.max_nodes + 1))
    for _ in range(max_retries):
        g = random_genotype(spec, rng, num_nodes=n)
        pruned = prune(g)
        if pruned is not None and pruned.num_nodes == n and not validate(pruned, spec):
            return canonicalize(pruned)
    logger.warning(f'No valid {n}-node cell after {max_retries} samples, repairing the last one')
    return canonicalize(_repair(g, spec, rng))


def random_architecture(spec, rng, max_retries=1000):
    """Valid cell, uniform over canonical cells.

    A ``NODE_COUNT_SHARE`` of draws first picks the node count uniformly so
    that small cells appear at all. Frames above ``SHAPE_TABLE_MAX_NODES``
    nodes pick a node count uniformly and rejection-sample edges instead.
    """
    if spec.max_nodes > SHAPE_TABLE_MAX_NODES:
        return _random_by_pruning(spec, rng, max_retries)
    k = len(spec.op_vocabulary)
    shapes = {n: _connected_shapes(n, spec.max_edges) for n in range(2, spec.max_nodes + 1)}
    sizes = [n for n in shapes if len(shapes[n])]
    if not sizes:
        raise UsageError(f'no valid cell fits in {spec.max_edges} edges')
    weights = np.array([len(shapes[n]) * float(k) ** (n - 2) for n in sizes])
    fixed = sizes[int(rng.integers(len(sizes)))] if rng.random() < NODE_COUNT_SHARE else None
    for _ in range(max_retries):
        n = fixed if fixed is not None else sizes[int(rng.choice(len(sizes), p=weights / weights.sum()))]
        mask = int(shapes[n][int(rng.integers(len(shapes[n])))])
        g = _shape_cell(n, mask, rng.integers(0, k, size=n - 2), spec)
        if rng.random() * labeling_count(g, spec) < 1.0:
            return canonicalize(g)
    logger.warning(f'Accepted no {g.num_nodes}-node draw after {max_retries} tries, keeping the last one')
    return canonicalize(g)


@dataclass(frozen=True)
class Edit:
    """Flip edge ``(i, j)`` or set node ``i`` to ``op``."""

    kind: str
    i: int
    j: int = -1
    op: str = ''


def single_edits(g, spec):
    n = g.num_nodes
    for i in range(n):
        for j in range(i + 1, n):
            yield Edit('edge', i, j)
    for k in range(1, n - 1):
        for op in spec.op_vocabulary:
            if op != g.ops[k]:
                yield Edit('op', k, op=op)


def apply_edit(g, edit):
    if edit.kind == 'edge':
        matrix = g.matrix
        matrix[edit.i, edit.j] ^= 1
        return CellGraph(g.ops, matrix)
    if edit.kind == 'op':
        if not 0 < edit.i < g.num_nodes - 1:
            raise UsageError(f'node {edit.i} is not an inner node')
        ops = list(g.ops)
        ops[edit.i] = edit.op
        return CellGraph(tuple(ops), g.adjacency)
    raise UsageError(f'unknown edit kind {edit.kind!r}')


def _random_edit(g, spec, rng):
    n = g.num_nodes
    if n > 2 and rng.random() < 0.5:
        node = int(rng.integers(1, n - 1))
        choices = [op for op in spec.op_vocabulary if op != g.ops[node]]
        if choices:
            return Edit('op', node, op=choices[int(rng.integers(len(choices)))])
    pairs = n * (n - 1) // 2
    k = int(rng.integers(pairs))
    i, j = [(a, b) for a in range(n) for b in range(a + 1, n)][k]
    return Edit('edge', i, j)


def _acceptable(child, spec, parent_hash):
    pruned = prune(child)
    if pruned is None or validate(pruned, spec):
        return False
    return canonical_hash(pruned) != parent_hash


def mutate_genotype(g, spec, rng, max_retries=100):
    """One primitive edit of ``g`` whose pruned result is valid and new.

    ``g`` may carry nodes that are off every path; they stay in the returned
    genotype so later edits can reconnect them. Returns ``g`` itself only when
    no single edit yields a different valid cell.
    """
    pruned = prune(g)
    parent_hash = canonical_hash(pruned) if pruned is not None else None
    for _ in range(max_retries):
        child = apply_edit(g, _random_edit(g, spec, rng))
        if _acceptable(child, spec, parent_hash):
            return child
    edits = list(single_edits(g, spec))
    for k in rng.permutation(len(edits)):
        child = apply_edit(g, edits[int(k)])
        if _acceptable(child, spec, parent_hash):
            return child
    logger.debug(f'No valid single-edit neighbour for {g.to_text()}')
    return g


def mutate(g, spec, rng, max_retries=100):
    return canonicalize(mutate_genotype(g, spec, rng, max_retries=max_retries))


def enumerate_space(spec):
    """Every valid cell of a small space, one canonical representative per hash."""
    if spec.max_nodes > ENUMERATION_MAX_NODES:
        raise UsageError(f'enumeration is limited to {ENUMERATION_MAX_NODES} nodes, got {spec.max_nodes}')
    found = {}
    for n in range(2, spec.max_nodes + 1):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        placeholder = (INPUT,) + (spec.op_vocabulary[0],) * (n - 2) + (OUTPUT,)
        for bits in range(1 << len(pairs)):
            matrix = np.zeros((n, n), dtype=np.int8)
            for k, (i, j) in enumerate(pairs):
                if bits >> k & 1:
                    matrix[i, j] = 1
            if int(matrix.sum()) > spec.max_edges:
                continue
            shape = prune(CellGraph(placeholder, matrix))
            if shape is None or shape.num_nodes != n:
                continue
            for inner in itertools.product(spec.op_vocabulary, repeat=n - 2):
                g = CellGraph((INPUT,) + inner + (OUTPUT,), matrix)
                digest = canonical_hash(g)
                if digest not in found:
                    found[digest] = canonicalize(g)
    return list(found.values())
