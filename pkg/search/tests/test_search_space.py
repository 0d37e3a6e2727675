import itertools

import numpy as np
from django.test import SimpleTestCase

from search.exceptions import (
    AlphabetError,
    ConfigurationError,
    DecodeError,
    InvalidArchitectureError,
    UsageError,
)
from search.search_space import (
    EDGE_ON,
    PAD,
    CellGraph,
    Edit,
    SearchSpaceSpec,
    apply_edit,
    canonical_hash,
    canonicalize,
    decode_tokens,
    encode_tokens,
    enumerate_space,
    is_valid,
    labeling_count,
    mutate,
    mutate_genotype,
    prune,
    random_architecture,
    random_genotype,
    single_edits,
    validate,
)

from .helpers import TOY_SPACE, cell, chain

SPACE = SearchSpaceSpec()


class SearchSpaceSpecTests(SimpleTestCase):
    def test_rejects_reserved_and_duplicate_operations(self):
        with self.assertRaises(ConfigurationError):
            SearchSpaceSpec(op_vocabulary=('conv3x3', 'output'))
        with self.assertRaises(ConfigurationError):
            SearchSpaceSpec(op_vocabulary=('conv3x3', 'conv3x3'))

    def test_needs_room_for_input_and_output(self):
        with self.assertRaises(ConfigurationError):
            SearchSpaceSpec(max_nodes=1)

    def test_layout_length(self):
        self.assertEqual(SPACE.layout.length, 30)
        self.assertEqual(len(SPACE.vocabulary), 10)


class CellGraphTests(SimpleTestCase):
    def test_text_form_accepts_aliases(self):
        g = CellGraph.from_text('ops=input,conv3x3-bn-relu,output;adj=010001000')
        self.assertEqual(g, chain('conv3x3'))
        self.assertEqual(CellGraph.from_text(g.to_text()), g)

    def test_malformed_text(self):
        with self.assertRaises(InvalidArchitectureError):
            CellGraph.from_text('ops=input,output;adj=01')

    def test_adjacency_must_be_square(self):
        with self.assertRaises(InvalidArchitectureError):
            CellGraph(('input', 'output'), [[0, 1, 0]])


class ValidationTests(SimpleTestCase):
    def test_valid_chain(self):
        self.assertEqual(validate(chain('conv1x1', 'maxpool3x3'), SPACE), [])

    def test_collects_every_violation(self):
        matrix = [[0, 1, 0], [0, 0, 0], [1, 0, 0]]
        g = CellGraph(('input', 'sepconv', 'output'), matrix)
        violations = validate(g, SPACE)
        self.assertIn("node 1: unknown operation 'sepconv'", violations)
        self.assertIn('adjacency is not strictly upper-triangular', violations)
        self.assertIn('output not reachable from input', violations)

    def test_edge_budget(self):
        dense = cell(['conv1x1'] * 3, [(i, j) for i in range(5) for j in range(i + 1, 5)])
        self.assertFalse(is_valid(dense, SearchSpaceSpec(max_edges=9)))
        self.assertTrue(is_valid(dense, SearchSpaceSpec(max_edges=10)))

    def test_dangling_node_is_invalid_until_pruned(self):
        g = cell(['conv1x1', 'conv3x3'], [(0, 1), (1, 3), (0, 2)])
        self.assertIn('node 2 not on any input-output path', validate(g, SPACE))
        self.assertEqual(prune(g), chain('conv1x1'))

    def test_prune_without_a_path(self):
        self.assertIsNone(prune(cell(['conv1x1'], [(0, 1)])))


class CanonicalHashTests(SimpleTestCase):
    def test_isomorphic_cells_share_a_hash(self):
        a = cell(['conv1x1', 'conv3x3'], [(0, 1), (0, 2), (1, 3), (2, 3)])
        b = cell(['conv3x3', 'conv1x1'], [(0, 1), (0, 2), (1, 3), (2, 3)])
        self.assertNotEqual(a, b)
        self.assertEqual(canonical_hash(a), canonical_hash(b))
        self.assertEqual(canonicalize(a), canonicalize(b))

    def test_dangling_nodes_do_not_change_the_hash(self):
        padded = cell(['conv1x1', 'maxpool3x3'], [(0, 1), (1, 3), (0, 2)])
        self.assertEqual(canonical_hash(padded), canonical_hash(chain('conv1x1')))

    def test_order_of_a_chain_matters(self):
        self.assertNotEqual(canonical_hash(chain('conv1x1', 'conv3x3')),
                            canonical_hash(chain('conv3x3', 'conv1x1')))

    def test_hash_is_lowercase_hex(self):
        digest = canonical_hash(chain('conv3x3'))
        self.assertEqual(len(digest), 64)
        self.assertEqual(digest, digest.lower())

    def test_relabelled_random_cells(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            g = random_architecture(SPACE, rng)
            n = g.num_nodes
            inner = list(rng.permutation(np.arange(1, n - 1)))
            perm = [0] + [int(k) for k in inner] + [n - 1]
            relabelled = np.zeros_like(g.matrix)
            position = {old: new for new, old in enumerate(perm)}
            for i, j in g.edges():
                relabelled[position[i], position[j]] = 1
            ops = [None] * n
            for old, new in position.items():
                ops[new] = g.ops[old]
            # only topological labellings are cells
            if np.any(np.tril(relabelled)):
                continue
            self.assertEqual(canonical_hash(CellGraph(tuple(ops), relabelled)), canonical_hash(g))


class TokenTests(SimpleTestCase):
    def test_sequence_shape(self):
        t = encode_tokens(chain('conv1x1'), SPACE)
        self.assertEqual(len(t), SPACE.layout.length)
        self.assertEqual(t.tokens[0], '<sos>')
        self.assertEqual(t.tokens[-1], '<eos>')
        self.assertEqual(t.tokens.count(PAD), 4)

    def test_decoding_restores_canonical_cells(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            g = random_architecture(SPACE, rng)
            self.assertEqual(decode_tokens(encode_tokens(g, SPACE), SPACE), g)

    def test_illegal_token_reports_its_index(self):
        tokens = list(encode_tokens(chain('conv1x1'), SPACE).tokens)
        tokens[1] = 'conv3x3'
        with self.assertRaises(DecodeError) as ctx:
            decode_tokens(tokens, SPACE)
        self.assertEqual(ctx.exception.index, 1)

    def test_edge_into_an_empty_slot(self):
        tokens = list(encode_tokens(chain('conv1x1'), SPACE).tokens)
        position = SPACE.layout.edge_position(0, 2)
        tokens[position] = EDGE_ON
        with self.assertRaises(DecodeError) as ctx:
            decode_tokens(tokens, SPACE)
        self.assertEqual(ctx.exception.index, position)

    def test_truncated_sequence(self):
        tokens = list(encode_tokens(chain('conv1x1'), SPACE).tokens)[:-1]
        with self.assertRaises(DecodeError):
            decode_tokens(tokens, SPACE)

    def test_unknown_token(self):
        with self.assertRaises(AlphabetError):
            SPACE.vocabulary.id_of('sepconv')


class SamplingTests(SimpleTestCase):
    def test_random_architectures_are_valid_and_canonical(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            g = random_architecture(SPACE, rng)
            self.assertTrue(is_valid(g, SPACE))
            self.assertEqual(canonicalize(g), g)

    def test_ten_thousand_draws_are_distinct_and_cover_every_size(self):
        rng = np.random.default_rng(0)
        draws = [random_architecture(SPACE, rng) for _ in range(10000)]
        digests = {canonical_hash(g) for g in draws}
        self.assertGreaterEqual(len(digests), 9800)
        self.assertEqual({g.num_nodes for g in draws}, set(range(2, SPACE.max_nodes + 1)))

    def test_sampled_nodes_survive_pruning(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            g = random_architecture(TOY_SPACE, rng)
            self.assertEqual(prune(g).num_nodes, g.num_nodes)

    def test_every_toy_cell_is_reachable(self):
        cells = {canonical_hash(g) for g in enumerate_space(TOY_SPACE)}
        rng = np.random.default_rng(2)
        seen = {canonical_hash(random_architecture(TOY_SPACE, rng)) for _ in range(40 * len(cells))}
        self.assertEqual(seen, cells)

    def test_frames_beyond_the_shape_table(self):
        space = SearchSpaceSpec(max_nodes=8, max_edges=12)
        rng = np.random.default_rng(3)
        for _ in range(20):
            self.assertTrue(is_valid(random_architecture(space, rng), space))

    def test_labeling_count(self):
        diamond = [(0, 1), (0, 2), (1, 3), (2, 3)]
        self.assertEqual(labeling_count(cell(['conv1x1', 'conv3x3'], diamond), SPACE), 2)
        self.assertEqual(labeling_count(cell(['conv1x1', 'conv1x1'], diamond), SPACE), 1)
        self.assertEqual(labeling_count(chain('conv1x1', 'conv3x3', 'maxpool3x3'), SPACE), 1)

    def test_same_seed_same_samples(self):
        a = [random_architecture(SPACE, np.random.default_rng(9)) for _ in range(3)]
        b = [random_architecture(SPACE, np.random.default_rng(9)) for _ in range(3)]
        self.assertEqual(a, b)


class MutationTests(SimpleTestCase):
    def test_mutants_are_valid_and_new(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            parent = random_architecture(SPACE, rng)
            child = mutate(parent, SPACE, rng)
            self.assertTrue(is_valid(child, SPACE))
            self.assertNotEqual(canonical_hash(child), canonical_hash(parent))

    def test_genotype_mutation_keeps_the_frame(self):
        rng = np.random.default_rng(4)
        g = random_genotype(SPACE, rng)
        while prune(g) is None or not is_valid(prune(g), SPACE):
            g = random_genotype(SPACE, rng)
        child = mutate_genotype(g, SPACE, rng)
        self.assertEqual(child.num_nodes, SPACE.max_nodes)

    def test_single_edits_of_a_chain(self):
        g = chain('conv3x3')
        edits = list(single_edits(g, SPACE))
        self.assertEqual(len(edits), 5)
        self.assertIn(Edit('op', 1, op='maxpool3x3'), edits)
        self.assertEqual(apply_edit(g, Edit('edge', 0, 2)), cell(['conv3x3'], [(0, 1), (1, 2), (0, 2)]))
        self.assertEqual(apply_edit(g, Edit('op', 1, op='conv1x1')), chain('conv1x1'))

    def test_input_node_cannot_change_operation(self):
        with self.assertRaises(UsageError):
            apply_edit(chain('conv3x3'), Edit('op', 0, op='conv1x1'))


class EnumerationTests(SimpleTestCase):
    def test_toy_space(self):
        cells = enumerate_space(TOY_SPACE)
        digests = [canonical_hash(g) for g in cells]
        self.assertEqual(len(digests), len(set(digests)))
        self.assertTrue(all(is_valid(g, TOY_SPACE) for g in cells))
        self.assertIn(canonical_hash(cell([], [(0, 1)])), digests)

    def test_toy_space_count(self):
        cells = enumerate_space(TOY_SPACE)
        by_size = {}
        for g in cells:
            by_size[g.num_nodes] = by_size.get(g.num_nodes, 0) + 1
        self.assertEqual(by_size[2], 1)
        self.assertEqual(by_size[3], 6)

    def test_too_large_to_enumerate(self):
        with self.assertRaises(UsageError):
            enumerate_space(SPACE)


def labeled_toy_cells():
    """Every labeled cell of the toy space whose nodes all lie on an input-output path."""
    for n in range(2, TOY_SPACE.max_nodes + 1):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        for bits in itertools.product((0, 1), repeat=len(pairs)):
            edges = [pair for pair, bit in zip(pairs, bits) if bit]
            for inner in itertools.product(TOY_SPACE.op_vocabulary, repeat=n - 2):
                g = cell(inner, edges)
                pruned = prune(g)
                if pruned is not None and pruned.num_nodes == n and is_valid(g, TOY_SPACE):
                    yield g


def brute_force_class(g):
    n = g.num_nodes
    matrix = g.matrix
    keys = []
    for inner in itertools.permutations(range(1, n - 1)):
        order = [0, *inner, n - 1]
        keys.append((tuple(g.ops[k] for k in order), matrix[np.ix_(order, order)].tobytes()))
    return min(keys)


class ExhaustiveToySpaceTests(SimpleTestCase):
    def test_hash_agrees_with_brute_force_isomorphism(self):
        classes_of_hash = {}
        hashes_of_class = {}
        for g in labeled_toy_cells():
            digest, key = canonical_hash(g), brute_force_class(g)
            classes_of_hash.setdefault(digest, set()).add(key)
            hashes_of_class.setdefault(key, set()).add(digest)
        self.assertTrue(all(len(keys) == 1 for keys in classes_of_hash.values()))
        self.assertTrue(all(len(digests) == 1 for digests in hashes_of_class.values()))
        self.assertEqual(len(classes_of_hash), len(enumerate_space(TOY_SPACE)))

    def test_every_small_cell_round_trips(self):
        for g in enumerate_space(TOY_SPACE):
            self.assertEqual(decode_tokens(encode_tokens(g, TOY_SPACE), TOY_SPACE), g)
            self.assertEqual(decode_tokens(encode_tokens(g, SPACE), SPACE), g)

    def test_labeling_counts_add_up(self):
        total = sum(1 for _ in labeled_toy_cells())
        self.assertEqual(sum(labeling_count(g, TOY_SPACE) for g in enumerate_space(TOY_SPACE)), total)


class MutationDistanceTests(SimpleTestCase):
    def test_mutants_are_single_edit_neighbours(self):
        parent = cell(['conv1x1', 'conv3x3', 'maxpool3x3'], [(0, 1), (1, 2), (2, 4), (0, 3), (3, 4)])
        neighbours = set()
        for edit in single_edits(parent, SPACE):
            child = apply_edit(parent, edit)
            pruned = prune(child)
            if pruned is not None and is_valid(pruned, SPACE):
                neighbours.add(canonical_hash(pruned))
        parent_hash = canonical_hash(parent)
        neighbours.discard(parent_hash)

        rng = np.random.default_rng(8)
        for _ in range(1000):
            child = mutate(parent, SPACE, rng)
            self.assertTrue(is_valid(child, SPACE))
            self.assertIn(canonical_hash(child), neighbours)
