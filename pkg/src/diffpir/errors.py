"""Exception types shared across the toolkit."""


class DiffpirError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(DiffpirError):
    """Operands have incompatible dimensions."""


class InvalidRange(DiffpirError):
    """A constructor parameter is outside its valid range."""


class OutOfRange(DiffpirError):
    """A runtime argument (timestep, weight, ...) is outside its valid range."""


class KernelTooLarge(DiffpirError):
    """Convolution kernel exceeds the image extent."""


class IoError(DiffpirError):
    """File could not be read or written."""


class UnsupportedFormat(DiffpirError):
    """Image file format outside the supported 8-bit grayscale/RGB subset."""


class NumericalInstability(DiffpirError):
    """A solver produced a result outside its numerical validity envelope."""


class InvalidConfig(DiffpirError):
    """Run configuration is incomplete or inconsistent."""


class ConnectionLost(DiffpirError):
    """Remote denoiser bridge became unreachable or timed out."""


class ProtocolViolation(DiffpirError):
    """Remote denoiser bridge sent a malformed or unexpected frame."""


class RemoteError(DiffpirError):
    """Remote denoiser bridge reported an error frame."""


class NonDifferentiableDenoiser(DiffpirError):
    """Denoiser exposes no Jacobian path and finite differences are disabled."""
