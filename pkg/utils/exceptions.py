from typing import Optional


class HotColdError(Exception):
    """Base class for every error raised by the predictor"""

    exit_code = 2


class ValidationError(HotColdError):
    """Input data or configuration does not satisfy its contract"""

    exit_code = 1


class DataValidationError(ValidationError):
    """A row of an input file failed validation"""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class DuplicateIdError(DataValidationError):
    """The same content id (or content/date pair) appeared twice"""


class ConfigError(ValidationError):
    """Run configuration is invalid"""


class TrainingError(HotColdError):
    """A model could not be trained or applied"""


class EmptyPartitionError(TrainingError):
    """One of the training partitions U_A / U_B holds no rows"""

    def __init__(self, partition: str):
        self.partition = partition
        super().__init__(f"{partition} empty: no labelable contents of this type in the training window")


class SingleClassError(TrainingError):
    """Training data carries only one label"""


class NonFiniteError(TrainingError):
    """A gradient or activation became NaN/inf"""

    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite values encountered in {where}")


class DegenerateScoresError(TrainingError):
    """Threshold calibration received scores that are all equal"""


class ArtifactError(TrainingError):
    """A model artifact is missing state or has an unknown format"""
