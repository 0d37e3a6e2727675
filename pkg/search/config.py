"""Resolved experiment configuration and the engine objects built from it."""

import dataclasses
from dataclasses import dataclass, field

from .controller import ControllerConfig
from .exceptions import UsageError
from .search_engine import EvolutionConfig, SearchBudget
from .search_space import DEFAULT_OPS, SearchSpaceSpec

CONTROLLERS = ('seminas', 'nao', 'random', 're', 'semi_re')
BACKENDS = ('synthetic', 'tabular')
SWEEP_AXES = ('m_unlabeled', 'upsample_ratio')

_budget = SearchBudget()
_controller = ControllerConfig()
_evolution = EvolutionConfig(candidates=16)


@dataclass(frozen=True)
class ExperimentConfig:
    backend: str
    controller: str = 'seminas'
    preset: str = ''
    benchmark_path: str = ''
    oracle_seed: int = 0
    noise_sd: float = 0.01
    weight_scale: float = 0.02
    base: float = 0.85

    max_nodes: int = 7
    max_edges: int = 9
    op_vocabulary: tuple = DEFAULT_OPS

    n_initial: int = _budget.n_initial
    m_unlabeled: int = _budget.m_unlabeled
    k_seeds: int = _budget.k_seeds
    iterations: int = _budget.iterations
    step_size: float = _budget.step_size
    new_per_iteration: int = _budget.new_per_iteration
    steps_per_eval: int = _budget.steps_per_eval
    ascent_steps: int = _budget.ascent_steps

    queries: int = 2000
    population_size: int = _evolution.population_size
    sample_size: int = _evolution.sample_size
    candidates: int = _evolution.candidates
    retrain_every: int = _evolution.retrain_every
    evolution_unlabeled: int = _evolution.m_unlabeled

    hidden_size: int = _controller.hidden_size
    predictor_widths: tuple = _controller.predictor_widths
    loss_weight_lambda: float = _controller.loss_weight_lambda
    learning_rate: float = _controller.learning_rate
    epochs_supervised: int = _controller.epochs_supervised
    epochs_semi: int = _controller.epochs_semi
    dropout_rate: float = _controller.dropout_rate
    upsample_ratio: int = _controller.upsample_ratio
    batch_size: int = _controller.batch_size
    grad_clip: float = _controller.grad_clip
    warm_start: bool = _controller.warm_start

    seeds: tuple = field(default_factory=tuple)
    seed_offset: int = 0
    output_dir: str = 'results'

    def __post_init__(self):
        for name in ('op_vocabulary', 'predictor_widths', 'seeds'):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def space(self):
        return SearchSpaceSpec(self.max_nodes, self.max_edges, self.op_vocabulary)

    def budget(self):
        return SearchBudget(
            n_initial=self.n_initial,
            m_unlabeled=self.m_unlabeled,
            k_seeds=self.k_seeds,
            iterations=self.iterations,
            step_size=self.step_size,
            new_per_iteration=self.new_per_iteration,
            steps_per_eval=self.steps_per_eval,
            ascent_steps=self.ascent_steps,
        )

    def controller_config(self):
        return ControllerConfig(
            hidden_size=self.hidden_size,
            predictor_widths=self.predictor_widths,
            loss_weight_lambda=self.loss_weight_lambda,
            learning_rate=self.learning_rate,
            epochs_supervised=self.epochs_supervised,
            epochs_semi=self.epochs_semi,
            dropout_rate=self.dropout_rate,
            upsample_ratio=self.upsample_ratio,
            batch_size=self.batch_size,
            grad_clip=self.grad_clip,
            warm_start=self.warm_start,
        )

    def evolution(self):
        return EvolutionConfig(
            population_size=self.population_size,
            sample_size=self.sample_size,
            candidates=self.candidates if self.controller == 'semi_re' else 1,
            retrain_every=self.retrain_every,
            m_unlabeled=self.evolution_unlabeled,
        )

    def sweep_field(self, axis):
        """Field that a sweep over ``axis`` sets for this controller."""
        if axis not in SWEEP_AXES:
            raise UsageError(f'cannot sweep {axis!r}; choose one of {", ".join(SWEEP_AXES)}')
        if self.controller in ('random', 're'):
            raise UsageError(f'{self.controller} trains no predictor, so {axis} has no effect')
        if axis == 'm_unlabeled' and self.controller == 'semi_re':
            return 'evolution_unlabeled'
        return axis

    def expected_queries(self):
        if self.controller in ('seminas', 'nao'):
            return self.budget().total_queries
        return self.queries

    def check(self):
        """Build every engine object once so bad values surface before any run."""
        self.space()
        self.controller_config()
        if self.controller in ('seminas', 'nao'):
            self.budget()
        else:
            evolution = self.evolution()
            if self.controller != 'random' and self.queries < evolution.population_size:
                raise UsageError(f'queries ({self.queries}) must be at least population_size '
                                 f'({evolution.population_size})')
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        data = dataclasses.asdict(self)
        for name in ('op_vocabulary', 'predictor_widths', 'seeds'):
            data[name] = list(data[name])
        return data
