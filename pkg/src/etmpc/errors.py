"""Exception types shared across the toolkit."""


class EtmpcError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(EtmpcError):
    """A problem definition violates one or more invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DareDivergence(EtmpcError):
    """The Riccati fixed-point iteration did not reach the residual tolerance."""


class Infeasible(EtmpcError):
    """No input sequence satisfies the constraints for the given state."""


class DegenerateActiveSet(EtmpcError):
    """The working set lost row independence and could not recover."""


class RankDeficient(EtmpcError):
    """A pivoted factorization met a pivot below the rank tolerance."""


class EncodingRangeError(EtmpcError):
    """A real value falls outside the representable range of the wire format."""


class FramingError(EtmpcError):
    """A byte sequence does not parse as a valid frame or payload."""


class CentralInfeasible(EtmpcError):
    """The central node reported the requested state as infeasible."""


class TransportError(EtmpcError):
    """Connection-level failure; the request may be retried."""


class TransportTimeout(TransportError):
    """No reply arrived within the configured timeout."""
