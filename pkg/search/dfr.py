"""Diagonal focus rate of encoder-decoder attention maps."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import AttentionFormatError, DimensionError, DomainError, UndefinedMetricError, UsageError

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class AttentionMap:
    """Attention weights of shape O x I (output steps by input steps)."""

    weights: np.ndarray
    row_stochastic: bool = False

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        if weights.ndim != 2 or 0 in weights.shape:
            raise DimensionError(f'attention map must be a non-empty O x I matrix, got shape {weights.shape}')
        if not np.all(np.isfinite(weights)):
            raise DomainError('attention map contains non-finite entries')
        if np.any(weights < 0):
            raise DomainError('attention map contains negative entries')
        if self.row_stochastic:
            sums = weights.sum(axis=1)
            bad = np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)[0]
            if bad.size:
                raise DomainError(f'row {int(bad[0]) + 1} sums to {sums[bad[0]]:.9f}, expected 1')
        weights.setflags(write=False)
        object.__setattr__(self, 'weights', weights)

    @property
    def output_length(self):
        return self.weights.shape[0]

    @property
    def input_length(self):
        return self.weights.shape[1]


def band_mask(output_length, input_length, band):
    """True where output row o lies within ``band`` of ceil(i * O / I), both 1-based."""
    if band < 0:
        raise UsageError(f'band width must be non-negative, got {band}')
    i = np.arange(1, input_length + 1)
    centers = np.clip(-(-output_length * i // input_length), 1, output_length)
    o = np.arange(1, output_length + 1)[:, None]
    return np.abs(o - centers[None, :]) <= band


def compute_dfr(a, band):
    """Share of attention mass inside the diagonal band of half-width ``band``."""
    if not isinstance(a, AttentionMap):
        a = AttentionMap(a)
    total = float(np.sum(a.weights))
    if total <= 0.0:
        raise UndefinedMetricError('diagonal focus rate is undefined for an all-zero attention map')
    mask = band_mask(a.output_length, a.input_length, band)
    inside = float(np.sum(np.where(mask, a.weights, 0.0)))
    return min(1.0, inside / total)


@dataclass(frozen=True)
class BatchDFR:
    mean: float
    values: tuple


def batch_dfr(maps, band):
    maps = list(maps)
    if not maps:
        raise UsageError('no attention maps given')
    values = tuple(compute_dfr(a, band) for a in maps)
    return BatchDFR(float(np.mean(values)), values)


def load_attention_map(path, row_stochastic=False):
    """Read a map stored as an ``O I`` header line followed by O rows of I reals."""
    path = Path(path)
    lines = [(k, line.split()) for k, line in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1)]
    lines = [(k, fields) for k, fields in lines if fields]
    if not lines:
        raise AttentionFormatError(path, 1, 'file is empty')
    header_line, header = lines[0]
    try:
        output_length, input_length = (int(v) for v in header)
    except ValueError:
        raise AttentionFormatError(path, header_line, f'header must be "O I", got {" ".join(header)!r}') from None
    if output_length < 1 or input_length < 1:
        raise AttentionFormatError(path, header_line, 'O and I must be positive')
    rows = lines[1:]
    if len(rows) != output_length:
        line = rows[-1][0] if rows else header_line
        raise AttentionFormatError(path, line, f'expected {output_length} rows, found {len(rows)}')
    weights = np.empty((output_length, input_length))
    for r, (line, fields) in enumerate(rows):
        if len(fields) != input_length:
            raise AttentionFormatError(path, line, f'expected {input_length} values, found {len(fields)}')
        try:
            weights[r] = [float(v) for v in fields]
        except ValueError as exc:
            raise AttentionFormatError(path, line, str(exc)) from None
    try:
        return AttentionMap(weights, row_stochastic=row_stochastic)
    except (DomainError, DimensionError) as exc:
        raise AttentionFormatError(path, header_line, str(exc)) from None


def dump_attention_map(a, path):
    path = Path(path)
    rows = [f'{a.output_length} {a.input_length}']
    rows += [' '.join(repr(float(v)) for v in row) for row in a.weights]
    path.write_text('\n'.join(rows) + '\n', encoding='utf-8')
    return path
