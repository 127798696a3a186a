"""Exception hierarchy shared across the package.

``SedlabError`` marks contract violations (CLI exit code 1); ``ConfigError``
marks bad run configuration (exit code 2).
"""


class SedlabError(Exception):
    """Base class for contract violations raised by this package."""


class ShapeError(SedlabError):
    """Operand shapes violate an operation's precondition."""


class TapeError(SedlabError):
    """Backward called on a dead tape, or loss not attached to one."""


class NumericsError(SedlabError):
    """NaN or Inf detected in tensor data or gradients."""


class CheckpointError(SedlabError):
    """Malformed or truncated checkpoint file."""


class AudioError(SedlabError):
    """Unsupported or malformed WAV input."""


class LabelsError(SedlabError):
    """Unparsable label file row (message carries the line number)."""


class PackingError(SedlabError):
    """Scene spec asks for more event time than the clip can hold."""


class MaskError(SedlabError):
    """Mask spec invalid for the given sequence length."""


class FusionError(SedlabError):
    """Sliding window longer than the clip."""


class TrainingDiverged(SedlabError):
    """Loss became NaN/Inf during a training loop."""


class EvalError(SedlabError):
    """Evaluation input contract violated (clip ids, vocabulary, windows)."""


class ConfigError(SedlabError):
    """Invalid or unknown configuration keys/values."""
