"""Exception types shared across the package.

Configuration problems raise ConfigError (or plain ValueError for direct
API misuse); runtime numerical failures raise NumericalError subclasses.
The command line driver maps these onto distinct exit codes.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """A run configuration is malformed or violates a parameter invariant."""


class NumericalError(RuntimeError):
    """Base class for numerical failures during a run."""


class NumericalCollapseError(NumericalError):
    """The field lost all mass or produced non-finite values."""


class BoxTooSmallError(NumericalError):
    """Probability mass escaping the simulation box exceeded its budget."""


class InsufficientReplicasError(NumericalError):
    """A statistical test was asked to run on too small an ensemble."""


class NoStrongDisorderCertificateError(NumericalError):
    """No finite time horizon certifies strong disorder at these parameters.

    Raised when the collision time integral converges and the disorder
    strength is too small for the certificate inequality to ever hold.
    """


class BadEpsilonError(ConfigError):
    """The certificate slack parameter is outside its admissible range."""
