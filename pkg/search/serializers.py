from django.conf import settings
from rest_framework import serializers

from .config import BACKENDS, CONTROLLERS, ExperimentConfig
from .exceptions import SearchError
from .presets import PRESETS, preset_names
from .search_space import DEFAULT_OPS, normalize_op

_defaults = ExperimentConfig(backend='synthetic')


def _default_seeds():
    return list(range(settings.SEMINAS_DEFAULT_SEEDS))


def _default_output_dir():
    return str(settings.SEMINAS_OUTPUT_DIR)


class CommaListField(serializers.ListField):
    """List field that also accepts a comma separated string."""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item.strip() for item in data.split(',') if item.strip()]
        return super().to_internal_value(data)


class ExperimentConfigSerializer(serializers.Serializer):
    preset = serializers.ChoiceField(choices=preset_names(), allow_blank=True, default='')
    controller = serializers.ChoiceField(choices=CONTROLLERS, default=_defaults.controller)
    backend = serializers.ChoiceField(choices=BACKENDS)
    benchmark_path = serializers.CharField(required=False, allow_blank=True, default='')
    oracle_seed = serializers.IntegerField(default=_defaults.oracle_seed)
    noise_sd = serializers.FloatField(min_value=0.0, default=_defaults.noise_sd)
    weight_scale = serializers.FloatField(min_value=0.0, default=_defaults.weight_scale)
    base = serializers.FloatField(min_value=0.0, max_value=1.0, default=_defaults.base)

    max_nodes = serializers.IntegerField(min_value=2, default=_defaults.max_nodes)
    max_edges = serializers.IntegerField(min_value=1, default=_defaults.max_edges)
    op_vocabulary = CommaListField(child=serializers.CharField(), min_length=1, default=list(DEFAULT_OPS))

    n_initial = serializers.IntegerField(min_value=1, default=_defaults.n_initial)
    m_unlabeled = serializers.IntegerField(min_value=0, default=_defaults.m_unlabeled)
    k_seeds = serializers.IntegerField(min_value=1, default=_defaults.k_seeds)
    iterations = serializers.IntegerField(min_value=0, default=_defaults.iterations)
    step_size = serializers.FloatField(min_value=0.0, default=_defaults.step_size)
    new_per_iteration = serializers.IntegerField(min_value=0, default=_defaults.new_per_iteration)
    steps_per_eval = serializers.IntegerField(min_value=1, default=_defaults.steps_per_eval)
    ascent_steps = serializers.IntegerField(min_value=1, default=_defaults.ascent_steps)

    queries = serializers.IntegerField(min_value=1, default=_defaults.queries)
    population_size = serializers.IntegerField(min_value=1, default=_defaults.population_size)
    sample_size = serializers.IntegerField(min_value=1, default=_defaults.sample_size)
    candidates = serializers.IntegerField(min_value=1, default=_defaults.candidates)
    retrain_every = serializers.IntegerField(min_value=1, default=_defaults.retrain_every)
    evolution_unlabeled = serializers.IntegerField(min_value=0, default=_defaults.evolution_unlabeled)

    hidden_size = serializers.IntegerField(min_value=1, default=_defaults.hidden_size)
    predictor_widths = CommaListField(child=serializers.IntegerField(min_value=1), min_length=1,
                                      default=list(_defaults.predictor_widths))
    loss_weight_lambda = serializers.FloatField(min_value=0.0, max_value=1.0, default=_defaults.loss_weight_lambda)
    learning_rate = serializers.FloatField(min_value=0.0, default=_defaults.learning_rate)
    epochs_supervised = serializers.IntegerField(min_value=0, default=_defaults.epochs_supervised)
    epochs_semi = serializers.IntegerField(min_value=0, default=_defaults.epochs_semi)
    dropout_rate = serializers.FloatField(min_value=0.0, max_value=0.99, default=_defaults.dropout_rate)
    upsample_ratio = serializers.IntegerField(min_value=1, default=_defaults.upsample_ratio)
    batch_size = serializers.IntegerField(min_value=1, default=_defaults.batch_size)
    grad_clip = serializers.FloatField(min_value=0.0, default=_defaults.grad_clip)
    warm_start = serializers.BooleanField(default=_defaults.warm_start)

    seeds = CommaListField(child=serializers.IntegerField(min_value=0), min_length=1, default=_default_seeds)
    output_dir = serializers.CharField(default=_default_output_dir)

    def to_internal_value(self, data):
        data = dict(data)
        unknown = sorted(set(data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: ['Unknown configuration key.'] for key in unknown})
        preset = data.get('preset')
        if preset:
            if preset not in PRESETS:
                raise serializers.ValidationError({'preset': [f'Unknown preset "{preset}".']})
            data = {**PRESETS[preset], **data}
        return super().to_internal_value(data)

    def validate_op_vocabulary(self, value):
        return [normalize_op(op) for op in value]

    def validate(self, attrs):
        if attrs['backend'] == 'tabular' and not attrs.get('benchmark_path'):
            raise serializers.ValidationError({'benchmark_path': ['Required for the tabular backend.']})
        if attrs['seeds'] and len(set(attrs['seeds'])) != len(attrs['seeds']):
            raise serializers.ValidationError({'seeds': ['Seeds must be distinct.']})
        try:
            self._build(attrs).check()
        except (SearchError, ValueError) as exc:
            raise serializers.ValidationError(str(exc)) from None
        return attrs

    @staticmethod
    def _build(attrs, offset=0):
        values = dict(attrs)
        values['seeds'] = [seed + offset for seed in values['seeds']]
        return ExperimentConfig(seed_offset=offset, **values)

    def create(self, validated_data):
        return self._build(validated_data, settings.SEMINAS_SEED_OFFSET)


class HistoryRecordSerializer(serializers.Serializer):
    iter = serializers.IntegerField(source='iteration')
    hash = serializers.CharField(source='digest')
    arch = serializers.SerializerMethodField()
    accuracy = serializers.FloatField()
    source = serializers.CharField()
    cumulative_best = serializers.FloatField()
    ledger = serializers.IntegerField()

    def get_arch(self, record):
        return record.graph.to_text()


class RunResultSerializer(serializers.Serializer):
    final = serializers.BooleanField(default=True)
    seed = serializers.IntegerField()
    controller = serializers.CharField()
    status = serializers.CharField()
    error = serializers.CharField(allow_null=True)
    best_hash = serializers.CharField(allow_null=True)
    best_arch = serializers.CharField(allow_null=True)
    best_valid_accuracy = serializers.FloatField(allow_null=True)
    best_test_accuracy = serializers.FloatField(allow_null=True)
    regret = serializers.FloatField(allow_null=True)
    rank = serializers.IntegerField(allow_null=True)
    queries = serializers.IntegerField()
    flagged_steps = serializers.IntegerField()
