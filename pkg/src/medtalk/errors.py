"""Exception hierarchy shared by every stage of the pipeline."""


class MedTalkError(Exception):
    """Base class for all package errors."""


class ConfigError(MedTalkError, ValueError):
    """Bad controller indices, widths that do not line up, unknown names."""


class ValidationError(MedTalkError, ValueError):
    """Input data violates a precondition (shapes, lengths, degenerate values)."""


class ParseError(MedTalkError, ValueError):
    """A rig, feature or guidance file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class FrozenError(MedTalkError, RuntimeError):
    """Attempt to mutate parameters of a frozen module."""


class DivergenceError(MedTalkError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, stage, message="loss became non-finite"):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


class CheckpointError(MedTalkError, OSError):
    """Missing, unreadable or incompatible checkpoint."""
