import numpy as np

from search.controller import ControllerConfig
from search.search_space import INPUT, OUTPUT, CellGraph, SearchSpaceSpec, canonical_hash, random_architecture

TOY_SPACE = SearchSpaceSpec(max_nodes=4, max_edges=6)


def cell(inner_ops, edges):
    """Cell with ``inner_ops`` between input and output and the given edge list."""
    ops = (INPUT,) + tuple(inner_ops) + (OUTPUT,)
    n = len(ops)
    matrix = np.zeros((n, n), dtype=np.int8)
    for i, j in edges:
        matrix[i, j] = 1
    return CellGraph(ops, matrix)


def chain(*inner_ops):
    n = len(inner_ops) + 2
    return cell(inner_ops, [(k, k + 1) for k in range(n - 1)])


def unique_architectures(space, count, seed=0):
    rng = np.random.default_rng(seed)
    found = {}
    while len(found) < count:
        g = random_architecture(space, rng)
        found.setdefault(canonical_hash(g), g)
    return list(found.values())


def tiny_controller(**changes):
    values = dict(epochs_supervised=3, epochs_semi=2, batch_size=16, upsample_ratio=2)
    values.update(changes)
    return ControllerConfig(**values)
