"""Exceptions raised by the search engine."""


class SearchError(Exception):
    """Base class for every error raised by the engine."""


class ConfigurationError(SearchError, ValueError):
    """A configuration value is missing, malformed or out of range."""


class UsageError(SearchError, ValueError):
    """An operation was called with arguments its contract rejects."""


class DimensionError(SearchError, ValueError):
    """Operand shapes do not agree."""


class NumericError(SearchError, ArithmeticError):
    """A loss, gradient or parameter stopped being finite."""


class AlphabetError(SearchError, KeyError):
    """A token is not part of the controller vocabulary."""

    def __str__(self):
        return str(self.args[0]) if self.args else 'unknown token'


class DecodeError(SearchError, ValueError):
    """A token sequence does not describe a cell."""

    def __init__(self, index, reason):
        self.index = index
        self.reason = reason
        super().__init__(f'token {index}: {reason}')


class InvalidArchitectureError(SearchError, ValueError):
    """A cell violates the search space rules."""

    def __init__(self, message, violations=()):
        self.violations = list(violations)
        super().__init__(message)


class BudgetError(SearchError):
    """The evaluator cannot answer more queries. Carries the partial history."""

    def __init__(self, message, history=None):
        self.history = history
        super().__init__(message)


class UnknownArchitectureError(SearchError, LookupError):
    """A tabular benchmark has no entry for the requested cell."""

    def __init__(self, digest):
        self.digest = digest
        super().__init__(f'no benchmark entry for {digest}')


class TabularLoadError(SearchError):
    """A benchmark file failed to load. `offenders` lists (line, reason) pairs."""

    def __init__(self, path, offenders):
        self.path = path
        self.offenders = list(offenders)
        listing = '; '.join(f'line {line}: {reason}' for line, reason in self.offenders[:20])
        more = '' if len(self.offenders) <= 20 else f' (+{len(self.offenders) - 20} more)'
        super().__init__(f'{path}: {listing}{more}')


class DomainError(SearchError, ValueError):
    """An input lies outside the domain of a metric."""


class UndefinedMetricError(SearchError, ValueError):
    """A metric is undefined for the given input."""


class AttentionFormatError(SearchError, ValueError):
    """An attention map file is malformed."""

    def __init__(self, path, line, reason):
        self.path = path
        self.line = line
        super().__init__(f'{path}:{line}: {reason}')
