"""Exceptions raised by the environment-assisted metrology toolkit."""

from __future__ import annotations


class EamMetrologyException(Exception):
    """Generic toolkit exception."""


class InvalidParameter(EamMetrologyException, ValueError):
    """Exception raised when a precondition on an argument is violated."""

    def __init__(self, name: str, message: str) -> None:
        """Initialize an invalid parameter error."""
        super().__init__(f"{name}: {message}")
        self.name = name


class DimensionOverflow(InvalidParameter):
    """Exception raised when an explicit Hilbert space would exceed the site cap."""

    def __init__(self, sites: int, cap: int) -> None:
        """Initialize a dimension overflow error."""
        super().__init__("sites", f"{sites} sites exceed the configured cap of {cap}")
        self.sites = sites
        self.cap = cap


class NonHermitianError(InvalidParameter):
    """Exception raised when a generator is not Hermitian within tolerance."""


class CoincidentSpins(InvalidParameter):
    """Exception raised when two spins (or a spin and the probe) coincide."""

    def __init__(self, indices: tuple[int, int]) -> None:
        """Initialize a coincident spins error."""
        super().__init__("positions", f"spins {indices[0]} and {indices[1]} coincide")
        self.indices = indices


class SequenceError(EamMetrologyException):
    """Exception raised when a pulse sequence cannot be built or compiled."""


class ConfigError(EamMetrologyException):
    """Exception raised for an invalid run configuration."""

    def __init__(self, key: str, message: str, line: int | None = None) -> None:
        """Initialize a config error."""
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}{where}: {message}")
        self.key = key
        self.line = line


class UnknownConfigKey(ConfigError):
    """Exception raised when a config file names a key that does not exist."""

    def __init__(self, key: str, line: int | None = None) -> None:
        """Initialize an unknown key error."""
        super().__init__(key, "unknown key", line)


class ConfigValueError(ConfigError):
    """Exception raised when a config value has the wrong type or violates a constraint."""


class VerificationFailed(EamMetrologyException):
    """Exception raised when the verify suite reports failing checks."""

    def __init__(self, failed: list[str]) -> None:
        """Initialize a verification failure."""
        super().__init__(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        self.failed = failed
