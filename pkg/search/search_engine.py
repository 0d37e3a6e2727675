"""Search loops: embedding-space gradient ascent, random search and aging evolution.

Every loop evaluates only canonical cells it has not evaluated before, and
charges each evaluation to a :class:`QueryLedger`.
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .benchmark import VALID, QueryLedger, query
from .controller import (
    GROUND_TRUTH,
    ControllerConfig,
    ControllerModel,
    Dataset,
    LabeledArchitecture,
    decode_graph,
    encode_batch,
    fit_semi_supervised,
    predict,
    predict_batch,
    predict_gradient,
)
from .exceptions import (
    BudgetError,
    DecodeError,
    InvalidArchitectureError,
    NumericError,
    UnknownArchitectureError,
    UsageError,
)
from .search_space import (
    canonical_hash,
    canonicalize,
    mutate,
    mutate_genotype,
    prune,
    random_architecture,
    random_genotype,
    validate,
)
from .utils import child_rng

logger = logging.getLogger(__name__)

MAX_HALVINGS = 10
MAX_CONSECUTIVE_DUPLICATES = 10000


@dataclass(frozen=True)
class SearchBudget:
    n_initial: int = 100
    m_unlabeled: int = 2000
    k_seeds: int = 100
    iterations: int = 2
    step_size: float = 10.0
    new_per_iteration: int = 100
    steps_per_eval: int = 1
    ascent_steps: int = 1
    step_multipliers: tuple = (1, 2, 4, 8)

    def __post_init__(self):
        object.__setattr__(self, 'step_multipliers', tuple(self.step_multipliers))
        for name in ('n_initial', 'm_unlabeled', 'iterations', 'new_per_iteration'):
            if getattr(self, name) < 0:
                raise UsageError(f'{name} must be non-negative, got {getattr(self, name)}')
        if self.n_initial < 1:
            raise UsageError('n_initial must be at least 1')
        if self.k_seeds < 1:
            raise UsageError(f'k_seeds must be positive, got {self.k_seeds}')
        if self.step_size < 0:
            raise UsageError(f'step_size must be non-negative, got {self.step_size}')
        if self.ascent_steps < 1:
            raise UsageError(f'ascent_steps must be positive, got {self.ascent_steps}')
        if not self.step_multipliers or min(self.step_multipliers) <= 0:
            raise UsageError(f'step_multipliers must be positive, got {self.step_multipliers}')

    @property
    def total_queries(self):
        return self.n_initial + self.new_per_iteration * self.iterations


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 100
    sample_size: int = 10
    candidates: int = 1
    retrain_every: int = 100
    m_unlabeled: int = 1000
    max_attempts: int = 100

    def __post_init__(self):
        if self.population_size < 1:
            raise UsageError(f'population_size must be positive, got {self.population_size}')
        if not 1 <= self.sample_size <= self.population_size:
            raise UsageError(f'sample_size must lie in [1, {self.population_size}], got {self.sample_size}')
        if self.candidates < 1:
            raise UsageError(f'candidates must be positive, got {self.candidates}')
        if self.retrain_every < 1:
            raise UsageError(f'retrain_every must be positive, got {self.retrain_every}')


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    digest: str
    graph: object
    accuracy: float
    source: str
    cumulative_best: float
    ledger: int

    def as_dict(self):
        return {
            'iter': self.iteration,
            'hash': self.digest,
            'arch': self.graph.to_text(),
            'accuracy': self.accuracy,
            'source': self.source,
            'cumulative_best': self.cumulative_best,
            'ledger': self.ledger,
        }


@dataclass
class SearchHistory:
    controller: str
    evaluated: list = field(default_factory=list)
    ledger: object = None
    flagged: int = 0
    removed: list = field(default_factory=list)
    seen: set = field(default_factory=set, repr=False)
    rejected: set = field(default_factory=set, repr=False)

    def __len__(self):
        return len(self.evaluated)

    @property
    def best(self):
        best = None
        for record in self.evaluated:
            if best is None or record.accuracy > best.accuracy:
                best = record
        return best

    @property
    def ledger_count(self):
        return self.ledger.count if self.ledger is not None else len(self.evaluated)

    def append(self, graph, digest, accuracy, iteration, source, ledger_count):
        best = self.evaluated[-1].cumulative_best if self.evaluated else accuracy
        record = HistoryRecord(iteration, digest, graph, accuracy, source, max(best, accuracy), ledger_count)
        self.evaluated.append(record)
        self.seen.add(digest)
        return record

    def dataset(self):
        return Dataset(LabeledArchitecture(r.graph, r.accuracy, GROUND_TRUTH) for r in self.evaluated)

    def finish(self, ledger):
        self.ledger = ledger.snapshot()
        return self


class _Evaluation:
    """Routes novel canonical cells to the backend and records them."""

    def __init__(self, backend, ledger, history):
        self.backend = backend
        self.ledger = ledger
        self.history = history

    def is_novel(self, digest):
        return digest not in self.history.seen and digest not in self.history.rejected

    def evaluate(self, graph, iteration, source):
        cell = canonicalize(graph)
        digest = canonical_hash(cell)
        if not self.is_novel(digest):
            return None
        try:
            accuracy = query(self.backend, cell, self.ledger, VALID)
        except UnknownArchitectureError:
            logger.debug(f'Benchmark has no entry for {digest}, rejecting candidate')
            self.history.rejected.add(digest)
            return None
        return self.history.append(cell, digest, accuracy, iteration, source, self.ledger.count)


def _fill_random(evaluation, space, rng, target, iteration, source='random'):
    misses = 0
    while len(evaluation.history) < target:
        if evaluation.evaluate(random_architecture(space, rng), iteration, source) is None:
            misses += 1
            if misses >= MAX_CONSECUTIVE_DUPLICATES:
                raise BudgetError(f'no unseen architecture after {misses} consecutive samples; '
                                  f'the space looks exhausted at {len(evaluation.history)} evaluations')
        else:
            misses = 0


@dataclass(frozen=True)
class AscentStep:
    embedding: np.ndarray
    step_size: float
    flagged: bool


def line_search_step(model, e, eta, max_halvings=MAX_HALVINGS):
    """One ascent step on the predictor, halving ``eta`` until the prediction does not drop.

    After ``max_halvings`` failed halvings ``e`` is returned unchanged and the
    step is flagged.
    """
    if eta < 0:
        raise UsageError(f'step size must be non-negative, got {eta}')
    e = np.asarray(e, dtype=float)
    value, grad = predict_gradient(model, e)
    if not np.all(np.isfinite(grad)):
        raise NumericError('predictor gradient is not finite')
    step = float(eta)
    for _ in range(max_halvings + 1):
        candidate = e + step * grad
        if predict(model, candidate) >= value:
            return AscentStep(candidate, step, False)
        step /= 2.0
    logger.debug(f'Ascent step did not improve the prediction after {max_halvings} halvings')
    return AscentStep(e.copy(), 0.0, True)


def gradient_ascent_step(model, e, eta):
    return line_search_step(model, e, eta).embedding


def ascend(model, e, eta, steps=1):
    flagged = False
    for _ in range(steps):
        result = line_search_step(model, e, eta)
        e = result.embedding
        flagged = flagged or result.flagged
    return AscentStep(e, eta, flagged)


def top_k(dataset, k):
    """Best ``k`` records by accuracy; ties keep dataset order."""
    records = list(dataset)
    order = sorted(range(len(records)), key=lambda i: (-records[i].accuracy, i))
    return [records[i] for i in order[:k]]


def _propose(model, seeds, budget, evaluation, needed, history):
    """Novel decodes reached from ``seeds``, smallest step multiple first."""
    embeddings = encode_batch(model, [s.graph for s in seeds])
    proposals = []
    proposed = set()
    for multiplier in budget.step_multipliers:
        for e in embeddings:
            if len(proposals) >= needed:
                return proposals
            result = ascend(model, e, budget.step_size * multiplier, budget.ascent_steps)
            history.flagged += int(result.flagged)
            try:
                cell = canonicalize(decode_graph(model, result.embedding))
            except (DecodeError, InvalidArchitectureError):
                continue
            if validate(cell, model.spec):
                continue
            digest = canonical_hash(cell)
            if digest in proposed or not evaluation.is_novel(digest):
                continue
            proposed.add(digest)
            proposals.append(cell)
    return proposals


def _fill_by_mutation(evaluation, space, seeds, rng, target, iteration, max_attempts):
    attempts = 0
    while len(evaluation.history) < target and attempts < max_attempts:
        seed = seeds[attempts % len(seeds)]
        evaluation.evaluate(mutate(seed.graph, space, rng), iteration, 'mutation')
        attempts += 1


def run_seminas(space, evaluator, budget, config=None, rng=None, ledger=None, controller='seminas'):
    """Sample and evaluate ``n_initial`` cells, then improve them for ``iterations`` rounds.

    Each round trains a fresh controller on everything evaluated so far plus
    ``m_unlabeled`` pseudo-labeled random cells, moves the best ``k_seeds``
    embeddings along the predictor gradient and evaluates the decoded cells.
    Shortfalls from duplicate decodes are filled by mutating the seeds, then
    by random sampling, so each round spends exactly ``new_per_iteration``.
    """
    config = config or ControllerConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    ledger = ledger if ledger is not None else QueryLedger()
    history = SearchHistory(controller)
    evaluation = _Evaluation(evaluator, ledger, history)
    try:
        _fill_random(evaluation, space, rng, budget.n_initial, 0)
        logger.info(f'[{controller}] initial {budget.n_initial} evaluated, best {history.best.accuracy:.4f}')
        for iteration in range(1, budget.iterations + 1):
            model = ControllerModel(space, config, seed=int(rng.integers(2 ** 31)))
            labeled = history.dataset()
            unlabeled = [random_architecture(space, rng) for _ in range(budget.m_unlabeled)]
            report = fit_semi_supervised(model, labeled, unlabeled, config, rng)
            seeds = top_k(labeled.union(report.pseudo), budget.k_seeds)

            target = len(history) + budget.new_per_iteration
            for cell in _propose(model, seeds, budget, evaluation, budget.new_per_iteration, history):
                if len(history) >= target:
                    break
                evaluation.evaluate(cell, iteration, 'ascent')
            ascended = len(history) - (target - budget.new_per_iteration)
            if len(history) < target:
                logger.debug(f'[{controller}] iteration {iteration}: {target - len(history)} short '
                             f'after ascent, filling by mutation')
                _fill_by_mutation(evaluation, space, seeds, rng, target, iteration,
                                  max_attempts=20 * budget.new_per_iteration)
                _fill_random(evaluation, space, rng, target, iteration)
            logger.info(f'[{controller}] iteration {iteration}/{budget.iterations}: '
                        f'{ascended} from ascent, ledger {ledger.count}, best {history.best.accuracy:.4f}')
    except BudgetError as exc:
        exc.history = history.finish(ledger)
        raise
    return history.finish(ledger)


def run_nao(space, evaluator, budget, config=None, rng=None, ledger=None):
    """Supervised-only controller: no unlabeled pool and no up-sampling."""
    budget = replace(budget, m_unlabeled=0)
    config = replace(config or ControllerConfig(), upsample_ratio=1)
    return run_seminas(space, evaluator, budget, config, rng, ledger, controller='nao')


def run_random(space, evaluator, queries, rng=None, ledger=None):
    if queries < 1:
        raise UsageError(f'queries must be at least 1, got {queries}')
    rng = rng if rng is not None else np.random.default_rng(0)
    ledger = ledger if ledger is not None else QueryLedger()
    history = SearchHistory('random')
    evaluation = _Evaluation(evaluator, ledger, history)
    try:
        _fill_random(evaluation, space, rng, queries, 0)
    except BudgetError as exc:
        exc.history = history.finish(ledger)
        raise
    logger.info(f'[random] {queries} evaluated, best {history.best.accuracy:.4f}')
    return history.finish(ledger)


@dataclass
class _Member:
    genotype: object
    record: HistoryRecord
    index: int


def _random_genotype(space, rng, max_tries=1000):
    for _ in range(max_tries):
        genotype = random_genotype(space, rng)
        cell = prune(genotype)
        if cell is not None and not validate(cell, space):
            return genotype
    return random_architecture(space, rng)


class _Predictor:
    """Surrogate fitness for evolution, retrained on the evaluated cells every ``retrain_every``."""

    def __init__(self, space, config, evolution, rng):
        self.space = space
        self.config = config
        self.evolution = evolution
        self.rng = rng
        self.model = None
        self.trained_at = -1

    def refresh(self, history):
        if self.model is not None and len(history) - self.trained_at < self.evolution.retrain_every:
            return
        self.model = ControllerModel(self.space, self.config, seed=int(self.rng.integers(2 ** 31)))
        labeled = history.dataset()
        unlabeled = [random_architecture(self.space, self.rng) for _ in range(self.evolution.m_unlabeled)]
        fit_semi_supervised(self.model, labeled, unlabeled, self.config, self.rng)
        self.trained_at = len(history)
        logger.info(f'[semi_re] predictor retrained on {len(labeled)} evaluated architectures')

    def best(self, cells):
        scores = predict_batch(self.model, encode_batch(self.model, cells))
        return int(np.argmax(scores))


def _propose_child(population, space, evolution, evaluation, rng):
    for _ in range(evolution.max_attempts):
        picks = rng.choice(len(population), size=evolution.sample_size, replace=False)
        parent = max((population[int(k)] for k in picks), key=lambda m: (m.record.accuracy, -m.index))
        child = mutate_genotype(parent.genotype, space, rng)
        cell = prune(child)
        if cell is None or validate(cell, space):
            continue
        if evaluation.is_novel(canonical_hash(cell)):
            return child, 'evolution'
    return _random_genotype(space, rng), 'random'


def _evolve(space, evaluator, queries, evolution, config, rng, ledger, controller):
    if queries < evolution.population_size:
        raise UsageError(f'queries ({queries}) must be at least the population size '
                         f'({evolution.population_size})')
    rng = rng if rng is not None else np.random.default_rng(0)
    ledger = ledger if ledger is not None else QueryLedger()
    history = SearchHistory(controller)
    evaluation = _Evaluation(evaluator, ledger, history)
    predictor = None
    if evolution.candidates > 1:
        predictor = _Predictor(space, config or ControllerConfig(), evolution, child_rng(rng))

    population = deque()
    misses = 0
    try:
        while len(history) < queries:
            warm = len(population) < evolution.population_size
            if warm:
                genotype, source = _random_genotype(space, rng), 'random'
            elif predictor is None:
                genotype, source = _propose_child(population, space, evolution, evaluation, rng)
            else:
                predictor.refresh(history)
                options = [_propose_child(population, space, evolution, evaluation, rng)
                           for _ in range(evolution.candidates)]
                choice = predictor.best([canonicalize(g) for g, _ in options])
                genotype, source = options[choice]
            record = evaluation.evaluate(genotype, 0 if warm else 1, source)
            if record is None:
                misses += 1
                if misses >= MAX_CONSECUTIVE_DUPLICATES:
                    raise BudgetError(f'no unseen architecture after {misses} consecutive proposals')
                continue
            misses = 0
            population.append(_Member(genotype, record, len(history) - 1))
            if len(population) > evolution.population_size:
                history.removed.append(population.popleft().index)
    except BudgetError as exc:
        exc.history = history.finish(ledger)
        raise
    logger.info(f'[{controller}] {queries} evaluated, best {history.best.accuracy:.4f}')
    return history.finish(ledger)


def run_re(space, evaluator, queries, population_size=100, sample_size=10, rng=None, ledger=None):
    """Aging evolution: tournament parent, one mutation, oldest member removed."""
    evolution = EvolutionConfig(population_size=population_size, sample_size=sample_size, candidates=1)
    return _evolve(space, evaluator, queries, evolution, None, rng, ledger, 're')


def run_semi_re(space, evaluator, queries, evolution=None, config=None, rng=None, ledger=None):
    """Aging evolution whose children are picked by the semi-supervised predictor.

    Each cycle mutates ``candidates`` tournament winners and evaluates only the
    child the predictor scores highest. Predictor training draws from a
    generator spawned off ``rng``, so with one candidate the run matches
    :func:`run_re` exactly.
    """
    evolution = evolution or EvolutionConfig(candidates=16)
    return _evolve(space, evaluator, queries, evolution, config, rng, ledger, 'semi_re')
