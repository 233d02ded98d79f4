"""Exception hierarchy shared across the package."""


class SampleSortError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SampleSortError, ValueError):
    """An input parameter is invalid; the message names the offending field."""


class ContractError(SampleSortError):
    """A caller violated an operation precondition (e.g. unsorted input)."""


class InsufficientSamplesError(SampleSortError):
    """Too few samples reached the master to pick the requested splitters.

    Raising the sample multiplier (or lowering the worker count) fixes this.
    """


class TransportError(SampleSortError):
    """A peer failed, timed out, or the cluster was aborted mid-operation."""


class ProtocolError(TransportError):
    """A received frame disagrees with the negotiated exchange plan."""
