"""Exception hierarchy shared across voxkit modules."""


class VoxkitError(Exception):
    """Base class for all voxkit errors."""


# --- audio I/O ---------------------------------------------------------------

class MalformedWav(VoxkitError):
    """WAV container is truncated or structurally invalid."""


class UnsupportedEncoding(VoxkitError):
    """WAV encoding other than PCM16 / IEEE float32."""


class IoFailure(VoxkitError):
    """Filesystem-level read/write failure."""


class BadFraming(VoxkitError):
    """STFT hop/window violate 0 < hop <= window <= length."""


# --- degradation -------------------------------------------------------------

class DegenerateNoise(VoxkitError):
    """Noise signal has zero RMS, cannot be scaled to a target SNR."""


class RateMismatch(VoxkitError):
    """Operands have different sample rates."""


class BadThreshold(VoxkitError):
    """Clipping threshold outside the allowed range (strict mode)."""


class BadBellParams(VoxkitError):
    """EQ bell parameters outside the allowed count/gain/center ranges."""


class MissingAsset(VoxkitError):
    """Asset provider cannot supply a required noise/RIR/interferer."""


# --- tokenizer ---------------------------------------------------------------

class InsufficientData(VoxkitError):
    """Too few distinct frames to train the requested codebook."""


class DimMismatch(VoxkitError):
    """Feature dimensionality does not match the codebooks."""


class MaskedInput(VoxkitError):
    """Operation requires a fully committed grid but got MASK entries."""


# --- maskgen -----------------------------------------------------------------

class OutOfDomain(VoxkitError):
    """Schedule time outside (0, T]."""


class ShapeMismatch(VoxkitError):
    """Array arguments disagree in shape."""


class ContractViolation(VoxkitError):
    """Model returned non-finite logits or out-of-range critic scores."""


# --- training ----------------------------------------------------------------

class NonFiniteLoss(VoxkitError):
    """Training loss became NaN/Inf; carries step diagnostics."""


# --- evaluation --------------------------------------------------------------

class LengthMismatch(VoxkitError):
    """Signals must have equal length."""


class SingleClass(VoxkitError):
    """ROC-AUC needs both positive and negative labels."""


# --- config ------------------------------------------------------------------

class ConfigError(VoxkitError):
    """Invalid or unknown configuration keys/values."""
