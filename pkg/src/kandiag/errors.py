"""Exception types shared across the package."""


class KandiagError(Exception):
    """Base class for all package errors."""


class ShapeError(KandiagError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(KandiagError):
    """Math operation applied outside its valid input domain."""


class ContractError(KandiagError):
    """An operation was called in a state its contract forbids."""


class ConfigError(KandiagError):
    """Invalid configuration value (grid, temperature, epochs, ...)."""


class IdLookupError(KandiagError):
    """Student or exercise id not present in the roster."""


class IntegrityError(KandiagError):
    """Dataset or checkpoint violates a structural invariant."""


class ParseError(KandiagError):
    """Malformed input file; message names the offending line."""


class CapabilityError(KandiagError):
    """Requested a facility the chosen model variant does not have."""


class MetricError(KandiagError):
    """Metric is undefined on the given inputs (e.g. single-class AUC)."""


class TrainingError(KandiagError):
    """Training aborted; message names the offending epoch/batch."""
