"""Exception taxonomy shared across the solver."""


class PsiboxError(Exception):
    """Base class for all solver errors."""


class ConfigError(PsiboxError, ValueError):
    """Invalid run description, lattice parameters, or file header."""


class FormatError(ConfigError):
    """Malformed binary field file (bad magic, truncation, non-finite data)."""


class DivergenceError(PsiboxError):
    """Numerical divergence, typically a violated stability bound."""


class NonConvergenceError(PsiboxError):
    """Run exhausted its step budget without meeting the tolerance."""


class ZeroNormError(PsiboxError):
    """Field has zero (or non-finite) norm where a normalizable state is required."""


class SingularCoefficientError(PsiboxError):
    """1 + (dtau/2) V vanished at a site; the potential needs regulating."""


class DegenerateSnapshotError(PsiboxError):
    """Snapshot contained no component outside the projected basis."""


class ExtractionError(PsiboxError):
    """Excited-state extraction failed (too few snapshots, mis-ordered energies)."""


class TransportError(PsiboxError):
    """Message transport failure: peer disconnect, timeout, missing contribution."""


class ProtocolError(TransportError):
    """Protocol desynchronization (step-tag mismatch). Fatal."""
