"""
Exception hierarchy shared by every subpackage.

Library code raises these; only the CLI maps them to exit codes.
"""
from typing import Iterable, Optional


class KvwError(Exception):
    """Base class for all engine errors."""

    exit_code = 2


class ConfigurationError(KvwError):
    """Shapes, layer ranges or capacities that do not fit the model."""


class InputError(KvwError):
    """Malformed or empty inputs (token ids, datasets, grids, tags)."""


class EmptySelectionError(InputError):
    """No (example, position) pairs were selected for extraction."""


class CompatibilityError(KvwError):
    """Cached coefficients do not match the target model."""


class CorruptFileError(KvwError):
    """A container or cache file is truncated or inconsistent."""

    def __init__(self, message: str, tensor: Optional[str] = None):
        if tensor is not None:
            message = f"{message} (tensor '{tensor}')"
        super().__init__(message)
        self.tensor = tensor


class VersionError(KvwError):
    """Unknown format version, activation, variant or source tag."""


class NumericError(KvwError):
    """A non-finite value appeared in a forward pass or an edit."""

    exit_code = 3

    def __init__(self, message: str, layer: Optional[int] = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class ConstructionError(KvwError):
    """A planted-fact model failed its build-time verification."""

    def __init__(self, message: str, fact_ids: Iterable[str] = ()):
        self.fact_ids = list(fact_ids)
        if self.fact_ids:
            message = f"{message}: {', '.join(self.fact_ids)}"
        super().__init__(message)


class NoFeasibleConfigError(KvwError):
    """No candidate configuration satisfies the retain constraint."""

    exit_code = 4
