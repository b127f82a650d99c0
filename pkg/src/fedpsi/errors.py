"""Exception types raised across the package."""

from __future__ import annotations


class FedPsiError(Exception):
    """Base class for every error raised by fedpsi."""


class SpecError(FedPsiError, ValueError):
    """A dataset description or configuration violates its invariants."""


class IngestError(FedPsiError, ValueError):
    """CSV ingestion failed; the message carries row/column context."""


class RangeError(FedPsiError, ValueError):
    """An argument lies outside its admissible range."""


class ShapeError(FedPsiError, ValueError):
    """Arrays or parameter vectors have incompatible shapes."""


class InfeasiblePartition(FedPsiError):
    """No partition satisfying the per-client minimum could be produced."""


class EmptyFederation(FedPsiError, ValueError):
    """The federation holds no samples at all."""


class NeedsSmoothing(FedPsiError, ValueError):
    """A pmf with zero mass was passed where strictly positive entries are required."""


class EmptyShard(FedPsiError, ValueError):
    """A client shard has no examples to evaluate."""


class DivergedError(FedPsiError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, client_id: int | None = None, round_index: int | None = None):
        super().__init__(message)
        self.client_id = client_id
        self.round_index = round_index
