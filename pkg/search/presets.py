"""Named experiment presets. Explicit config keys override preset values."""

# Epoch counts are cut down from the controller defaults so a seed finishes
# in minutes on one core.
PRESETS = {
    'seminas-300': {
        'controller': 'seminas',
        'n_initial': 100,
        'm_unlabeled': 2000,
        'k_seeds': 100,
        'iterations': 2,
        'new_per_iteration': 100,
        'upsample_ratio': 100,
        'epochs_supervised': 500,
        'epochs_semi': 10,
        'batch_size': 50,
    },
    'seminas-2000': {
        'controller': 'seminas',
        'n_initial': 1100,
        'm_unlabeled': 4000,
        'k_seeds': 100,
        'iterations': 3,
        'new_per_iteration': 300,
        'upsample_ratio': 10,
        'epochs_supervised': 100,
        'epochs_semi': 10,
        'batch_size': 100,
    },
    'nao-300': {
        'controller': 'nao',
        'n_initial': 100,
        'k_seeds': 100,
        'iterations': 2,
        'new_per_iteration': 100,
        'epochs_supervised': 500,
        'batch_size': 50,
    },
    'nao-2000': {
        'controller': 'nao',
        'n_initial': 1100,
        'k_seeds': 100,
        'iterations': 3,
        'new_per_iteration': 300,
        'epochs_supervised': 100,
        'batch_size': 100,
    },
    'random-2000': {
        'controller': 'random',
        'queries': 2000,
    },
    're-2000': {
        'controller': 're',
        'queries': 2000,
        'population_size': 100,
        'sample_size': 10,
    },
    'semi-re-1000': {
        'controller': 'semi_re',
        'queries': 1000,
        'population_size': 100,
        'sample_size': 10,
        'candidates': 16,
        'retrain_every': 100,
        'evolution_unlabeled': 500,
        'upsample_ratio': 2,
        'epochs_supervised': 50,
        'epochs_semi': 5,
    },
    'semi-re-2000': {
        'controller': 'semi_re',
        'queries': 2000,
        'population_size': 100,
        'sample_size': 10,
        'candidates': 16,
        'retrain_every': 100,
        'evolution_unlabeled': 500,
        'upsample_ratio': 2,
        'epochs_supervised': 50,
        'epochs_semi': 5,
    },
    'toy-seminas': {
        'controller': 'seminas',
        'max_nodes': 4,
        'max_edges': 6,
        'noise_sd': 0.0,
        'n_initial': 10,
        'm_unlabeled': 50,
        'k_seeds': 10,
        'iterations': 3,
        'new_per_iteration': 6,
        'upsample_ratio': 5,
        'epochs_supervised': 300,
        'epochs_semi': 30,
        'batch_size': 20,
    },
}


def preset_names():
    return sorted(PRESETS)
