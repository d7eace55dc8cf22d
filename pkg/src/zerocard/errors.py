"""Exception types shared across the toolkit.

Class names double as the machine-readable ``error`` field emitted by the
CLI, so they are kept short and stable.
"""


class ZeroCardError(Exception):
    """Base class for all toolkit errors."""


class SchemaMismatch(ZeroCardError):
    """CSV header and schema file disagree."""


class ParseError(ZeroCardError):
    """A cell could not be parsed under its declared column type."""

    def __init__(self, row: int, column: str, cell: str):
        self.row = row
        self.column = column
        self.cell = cell
        super().__init__(f"row {row}, column {column!r}: cannot parse {cell!r}")


class UnknownColumn(ZeroCardError):
    """A referenced column does not exist in the table."""


class EmptyColumn(ZeroCardError):
    """Operation requires at least one non-null cell."""


class InvalidBounds(ZeroCardError):
    """Numerical bounds violate l <= u."""


class KindMismatch(ZeroCardError):
    """Predicate/operation applied to a column of the wrong kind."""


class FormatError(ZeroCardError):
    """A binary container is malformed (bad magic, truncation, bad sizes)."""


class VersionMismatch(ZeroCardError):
    """A binary container has an unsupported format version."""


class ShapeMismatch(ZeroCardError):
    """Tensor shapes are inconsistent with the declared hyperparameters."""


class MissingEmbedding(ZeroCardError):
    """No embedding stored for the requested column text."""


class TooManyPredicates(ZeroCardError):
    """Query exceeds the maximum predicate count."""


class EmptyQuery(ZeroCardError):
    """Query has no predicates where at least one is required."""


class InvalidCard(ZeroCardError):
    """Cardinality outside the domain of the log-space loss (< 1)."""


class GenerationExhausted(ZeroCardError):
    """Query generation could not produce enough valid queries."""

    def __init__(self, requested: int, produced: int, budget: int):
        self.requested = requested
        self.produced = produced
        self.budget = budget
        super().__init__(
            f"generated {produced}/{requested} queries within a budget of "
            f"{budget} attempts"
        )


class NonFiniteLoss(ZeroCardError):
    """Training loss became NaN/inf."""

    def __init__(self, epoch: int, batch_index: int):
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")


class EmptyWorkload(ZeroCardError):
    """Evaluation invoked on an empty workload."""


class Undefined(ZeroCardError):
    """q-error requested for a failed (zero) estimate."""


class ConfigError(ZeroCardError):
    """CLI configuration is missing or inconsistent."""
