"""Ground-truth evaluators: a seeded synthetic oracle and a tabular benchmark file."""

import csv
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BudgetError,
    InvalidArchitectureError,
    TabularLoadError,
    UnknownArchitectureError,
    UsageError,
)
from .search_space import (
    ENUMERATION_MAX_NODES,
    INPUT,
    OUTPUT,
    CellGraph,
    SearchSpaceSpec,
    canonical_hash,
    canonicalize,
    enumerate_space,
    normalize_op,
    validate,
)
from .utils import mean_sd

logger = logging.getLogger(__name__)

VALID = 'valid'
TEST = 'test'
SPLITS = (VALID, TEST)

CSV_HEADER = ('ops', 'adj', 'valid_acc_mean', 'test_acc_mean', 'repeats')


@dataclass(frozen=True)
class LedgerEntry:
    digest: str
    accuracy: float
    timestamp: float


@dataclass(frozen=True)
class LedgerSnapshot:
    count: int
    test_count: int


class QueryLedger:
    """Append-only record of ground-truth queries.

    ``count`` covers validation queries only, the ones a search pays for.
    Test queries made for final reporting are logged separately.
    """

    def __init__(self, limit=None):
        self.limit = limit
        self._lock = threading.Lock()
        self._log = []
        self._test_log = []

    @property
    def count(self):
        return len(self._log)

    @property
    def test_count(self):
        return len(self._test_log)

    @property
    def log(self):
        return tuple(self._log)

    @property
    def remaining(self):
        return None if self.limit is None else max(0, self.limit - len(self._log))

    def record(self, digest, accuracy, split=VALID):
        if split not in SPLITS:
            raise UsageError(f'unknown split {split!r}')
        entry = LedgerEntry(digest, float(accuracy), time.time())
        with self._lock:
            if split == TEST:
                self._test_log.append(entry)
                return entry
            if self.limit is not None and len(self._log) >= self.limit:
                raise BudgetError(f'evaluator budget of {self.limit} queries is exhausted')
            self._log.append(entry)
        return entry

    def snapshot(self):
        with self._lock:
            return LedgerSnapshot(len(self._log), len(self._test_log))


def _band_depths(g):
    """Longest-path depth from the input for every node of a pruned cell."""
    matrix = g.matrix
    depth = [0] * g.num_nodes
    for v in range(1, g.num_nodes):
        preds = np.nonzero(matrix[:v, v])[0]
        depth[v] = max(depth[u] for u in preds) + 1 if len(preds) else 0
    return depth


@dataclass(frozen=True)
class SyntheticOracleConfig:
    seed: int = 0
    op_weights: dict = field(default_factory=dict)
    edge_weights: dict = field(default_factory=dict)
    interaction_pairs: dict = field(default_factory=dict)
    noise_sd: float = 0.01
    base: float = 0.85
    bands: int = 3
    frame_size: int = 7

    def __post_init__(self):
        if self.noise_sd < 0:
            raise UsageError(f'noise_sd must be non-negative, got {self.noise_sd}')
        if self.bands < 1:
            raise UsageError(f'bands must be positive, got {self.bands}')

    @classmethod
    def generate(cls, seed, spec, weight_scale=0.02, noise_sd=0.01, base=0.85, bands=3,
                 interaction_density=0.25):
        """Draw every weight from a generator seeded with ``seed``."""
        rng = np.random.default_rng(seed)
        op_weights = {
            (band, op): float(rng.normal(0.0, weight_scale))
            for band in range(bands) for op in spec.op_vocabulary
        }
        v = spec.max_nodes
        edge_weights = {
            (i, j): float(rng.normal(0.0, weight_scale))
            for i in range(v) for j in range(i + 1, v)
        }
        names = (INPUT,) + spec.op_vocabulary + (OUTPUT,)
        interaction_pairs = {}
        for a in names:
            for b in names:
                if rng.random() < interaction_density:
                    interaction_pairs[(a, b)] = float(rng.normal(0.0, weight_scale))
        return cls(seed=seed, op_weights=op_weights, edge_weights=edge_weights,
                   interaction_pairs=interaction_pairs, noise_sd=noise_sd, base=base,
                   bands=bands, frame_size=v)


def _structure_score(config, g):
    n = g.num_nodes
    depth = _band_depths(g)
    score = 0.0
    for k in range(1, n - 1):
        band = min(depth[k] - 1, config.bands - 1)
        score += config.op_weights.get((band, g.ops[k]), 0.0)
    frame_last = max(config.frame_size, n) - 1
    for i, j in g.edges():
        slot_j = frame_last if j == n - 1 else j
        score += config.edge_weights.get((i, slot_j), 0.0)
        score += config.interaction_pairs.get((g.ops[i], g.ops[j]), 0.0)
    return score


def _noise(config, digest, split):
    if config.noise_sd == 0:
        return 0.0
    seed_bytes = hashlib.sha256(f'{config.seed}:{split}:{digest}'.encode('utf-8')).digest()[:8]
    rng = np.random.default_rng(int.from_bytes(seed_bytes, 'big'))
    return float(rng.normal(0.0, config.noise_sd))


def synthetic_accuracy(config, g):
    """Deterministic ``(valid, test)`` accuracy of ``g`` under ``config``."""
    cell = canonicalize(g)
    digest = canonical_hash(cell)
    score = config.base + _structure_score(config, cell)
    valid = min(1.0, max(0.0, score + _noise(config, digest, VALID)))
    test = min(1.0, max(0.0, score + _noise(config, digest, TEST)))
    return valid, test


class SyntheticOracle:
    kind = 'synthetic'

    def __init__(self, config, spec):
        self.config = config
        self.spec = spec
        self._cache = {}
        self._ranking = None

    def accuracies(self, g):
        digest = canonical_hash(g)
        found = self._cache.get(digest)
        if found is None:
            found = self._cache[digest] = synthetic_accuracy(self.config, g)
        return found

    def lookup(self, g, split=VALID):
        valid, test = self.accuracies(g)
        return valid if split == VALID else test

    @property
    def enumerable(self):
        return self.spec.max_nodes <= ENUMERATION_MAX_NODES

    def ranking(self):
        """Test accuracies of the whole space in descending order, None when too large."""
        if not self.enumerable:
            return None
        if self._ranking is None:
            self._ranking = np.sort([self.lookup(g, TEST) for g in enumerate_space(self.spec)])[::-1]
        return self._ranking

    def optimum(self):
        """Cell with the best test accuracy, found by enumeration."""
        if not self.enumerable:
            return None
        return max(enumerate_space(self.spec), key=lambda g: (self.lookup(g, TEST), canonical_hash(g)))

    def optimum_test_accuracy(self):
        ranking = self.ranking()
        return None if ranking is None else float(ranking[0])

    def rank_of(self, test_accuracy):
        ranking = self.ranking()
        if ranking is None:
            return None
        return int(np.sum(ranking > test_accuracy)) + 1


@dataclass(frozen=True)
class TabularEntry:
    graph: CellGraph
    valid_accuracy: float
    test_accuracy: float
    repeats: int


class TabularBenchmark:
    kind = 'tabular'

    def __init__(self, entries, optimum_test_accuracy=None, path=None):
        self.entries = dict(entries)
        self.metadata_optimum = optimum_test_accuracy
        self.path = path
        self._ranking = None

    def __len__(self):
        return len(self.entries)

    def lookup(self, g, split=VALID):
        digest = canonical_hash(g)
        entry = self.entries.get(digest)
        if entry is None:
            raise UnknownArchitectureError(digest)
        return entry.valid_accuracy if split == VALID else entry.test_accuracy

    def ranking(self):
        if self._ranking is None:
            self._ranking = np.sort([e.test_accuracy for e in self.entries.values()])[::-1]
        return self._ranking

    def optimum_test_accuracy(self):
        if self.metadata_optimum is not None:
            return self.metadata_optimum
        return float(self.ranking()[0]) if self.entries else None

    def rank_of(self, test_accuracy):
        if not self.entries:
            return None
        return int(np.sum(self.ranking() > test_accuracy)) + 1


def query(backend, g, ledger, split=VALID):
    """Ground-truth accuracy of ``g``; every call is logged on ``ledger``."""
    accuracy = backend.lookup(g, split)
    ledger.record(canonical_hash(g), accuracy, split)
    return accuracy


def metadata_path(path):
    path = Path(path)
    return path.with_name(f'{path.stem}.meta.json')


def _parse_row(row, spec):
    graph = CellGraph.from_text(f"ops={row['ops']};adj={row['adj']}")
    valid = float(row['valid_acc_mean'])
    test = float(row['test_acc_mean'])
    repeats = int(row['repeats'])
    problems = []
    for name, value in (('valid_acc_mean', valid), ('test_acc_mean', test)):
        if not 0.0 <= value <= 1.0:
            problems.append(f'{name} {value} outside [0, 1]')
    if repeats < 1:
        problems.append(f'repeats must be positive, got {repeats}')
    violations = validate(graph, spec)
    if violations:
        problems.append('invalid cell: ' + ', '.join(violations))
    return TabularEntry(graph, valid, test, repeats), problems


def _read_optimum(meta):
    if not meta.exists():
        return None
    value = json.loads(meta.read_text(encoding='utf-8')).get('optimum_test_accuracy')
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise TabularLoadError(meta, [(1, f'optimum_test_accuracy {value!r} is not a fraction in [0, 1]')])
    return float(value)


def load_tabular(path, spec=None):
    """Load a benchmark CSV; every malformed row is reported in one TabularLoadError."""
    spec = spec or SearchSpaceSpec()
    path = Path(path)
    offenders = []
    entries = {}
    first_seen = {}
    with path.open(newline='', encoding='utf-8') as fh:
        reader = csv.DictReader(fh)
        missing = [column for column in CSV_HEADER if column not in (reader.fieldnames or [])]
        if missing:
            raise TabularLoadError(path, [(1, f'missing columns: {", ".join(missing)}')])
        for row in reader:
            line = reader.line_num
            try:
                entry, problems = _parse_row(row, spec)
            except (ValueError, TypeError, AttributeError, InvalidArchitectureError) as exc:
                offenders.append((line, str(exc)))
                continue
            if problems:
                offenders.extend((line, problem) for problem in problems)
                continue
            digest = canonical_hash(entry.graph)
            if digest in entries:
                offenders.append((line, f'duplicate architecture {digest} (first on line {first_seen[digest]})'))
                continue
            first_seen[digest] = line
            entries[digest] = TabularEntry(canonicalize(entry.graph), entry.valid_accuracy,
                                           entry.test_accuracy, entry.repeats)
    if offenders:
        raise TabularLoadError(path, offenders)

    optimum = _read_optimum(metadata_path(path))
    logger.info(f'Loaded {len(entries)} benchmark entries from {path}')
    return TabularBenchmark(entries, optimum_test_accuracy=optimum, path=path)


def dump_tabular(benchmark, path):
    """Write ``benchmark`` in the load schema, rows sorted by digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(CSV_HEADER)
        for digest in sorted(benchmark.entries):
            entry = benchmark.entries[digest]
            bits = ''.join(str(v) for row in entry.graph.adjacency for v in row)
            writer.writerow([','.join(entry.graph.ops), bits, repr(entry.valid_accuracy),
                             repr(entry.test_accuracy), entry.repeats])
    if benchmark.metadata_optimum is not None:
        metadata_path(path).write_text(
            json.dumps({'optimum_test_accuracy': benchmark.metadata_optimum}, indent=2) + '\n',
            encoding='utf-8')
    logger.info(f'Wrote {len(benchmark.entries)} benchmark entries to {path}')
    return path


def synthetic_table(oracle):
    """Tabular copy of an enumerable synthetic oracle."""
    entries = {}
    for g in enumerate_space(oracle.spec):
        valid, test = oracle.accuracies(g)
        entries[canonical_hash(g)] = TabularEntry(g, valid, test, 1)
    return TabularBenchmark(entries)


def merge_rows(rows):
    """Collapse raw ``(graph, valid, test, repeats)`` rows onto canonical cells.

    Rows sharing a canonical hash are averaged, weighted by their repeats.
    """
    merged = {}
    for graph, valid, test, repeats in rows:
        cell = canonicalize(graph)
        digest = canonical_hash(cell)
        if digest in merged:
            old = merged[digest]
            total = old.repeats + repeats
            merged[digest] = TabularEntry(
                cell,
                (old.valid_accuracy * old.repeats + valid * repeats) / total,
                (old.test_accuracy * old.repeats + test * repeats) / total,
                total,
            )
        else:
            merged[digest] = TabularEntry(cell, valid, test, repeats)
    return merged


def read_raw_rows(path):
    """Rows of an export that may hold unpruned cells; returns (rows, offenders)."""
    rows = []
    offenders = []
    with Path(path).open(newline='', encoding='utf-8') as fh:
        reader = csv.DictReader(fh)
        missing = [column for column in CSV_HEADER if column not in (reader.fieldnames or [])]
        if missing:
            raise TabularLoadError(path, [(1, f'missing columns: {", ".join(missing)}')])
        for row in reader:
            try:
                ops = [normalize_op(op) for op in row['ops'].split(',')]
                graph = CellGraph.from_text(f"ops={','.join(ops)};adj={row['adj']}")
                canonicalize(graph)
                rows.append((graph, float(row['valid_acc_mean']), float(row['test_acc_mean']),
                             int(row['repeats'])))
            except (ValueError, TypeError, AttributeError, InvalidArchitectureError) as exc:
                offenders.append((reader.line_num, str(exc)))
    return rows, offenders


@dataclass(frozen=True)
class RunStats:
    best_hash: str
    best_arch: str
    best_valid_accuracy: float
    best_test_accuracy: float
    regret: object
    rank: object
    queries: int


@dataclass(frozen=True)
class StatsReport:
    runs: tuple
    mean_best_test_accuracy: float
    sd_best_test_accuracy: float
    mean_best_valid_accuracy: float
    mean_regret: object
    sd_regret: object
    mean_rank: object


def run_stats(history, backend, ledger=None):
    if not history.evaluated:
        raise UsageError('cannot report on an empty history')
    best = history.best
    if ledger is not None:
        test = query(backend, best.graph, ledger, TEST)
    else:
        test = backend.lookup(best.graph, TEST)
    optimum = backend.optimum_test_accuracy()
    regret = None if optimum is None else float(optimum - test)
    return RunStats(
        best_hash=best.digest,
        best_arch=best.graph.to_text(),
        best_valid_accuracy=best.accuracy,
        best_test_accuracy=float(test),
        regret=regret,
        rank=backend.rank_of(test),
        queries=history.ledger_count,
    )


def summarize_runs(runs):
    runs = tuple(runs)
    if not runs:
        raise UsageError('no runs to summarize')
    mean_test, sd_test = mean_sd([r.best_test_accuracy for r in runs])
    mean_valid, _ = mean_sd([r.best_valid_accuracy for r in runs])
    mean_regret = sd_regret = mean_rank = None
    if all(r.regret is not None for r in runs):
        mean_regret, sd_regret = mean_sd([r.regret for r in runs])
    if all(r.rank is not None for r in runs):
        mean_rank, _ = mean_sd([r.rank for r in runs])
    return StatsReport(runs, mean_test, sd_test, mean_valid, mean_regret, sd_regret, mean_rank)


def report_stats(histories, backend, ledger=None):
    """Best-architecture statistics for one history or a list of them."""
    if hasattr(histories, 'evaluated'):
        histories = [histories]
    if not histories:
        raise UsageError('no histories to report on')
    return summarize_runs(run_stats(h, backend, ledger) for h in histories)
