"""Exception types shared across the package."""


class DualCDError(Exception):
    pass


class DataFormatError(DualCDError, ValueError):
    """A row of an input file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ValidationError(DualCDError, ValueError):
    pass


class ContractViolation(DualCDError, ValueError):
    """An input references entities outside the space a function was built for."""


class UndefinedMetricError(DualCDError, ValueError):
    pass


class UnavailableError(DualCDError, RuntimeError):
    """A network backend is needed but offline mode forbids it."""


class TransportError(DualCDError, RuntimeError):
    def __init__(self, message, entity=None):
        self.entity = entity
        super().__init__(message)


class TrainingDiverged(DualCDError, RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class StageError(DualCDError, RuntimeError):
    def __init__(self, stage, seed, cause):
        self.stage = stage
        self.seed = seed
        super().__init__(f"stage {stage!r} failed for seed {seed}: {cause}")
