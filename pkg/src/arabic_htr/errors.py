"""Error types shared across the pipeline."""


class ConfigurationError(ValueError):
    """A knob was set to a value the pipeline cannot honor."""


class ValidationError(ValueError):
    """Input data violates a documented invariant."""


class TrainingError(RuntimeError):
    """Training cannot proceed (empty corpus, divergence, ...)."""


class NumericError(RuntimeError):
    """A forward or backward pass produced non-finite values."""
