"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class DataError(Exception):
    """Dataset layout, manifest or annotation problem."""


class TrainingDiverged(ArithmeticError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, message, epoch=None, layer=None):
        super().__init__(message)
        self.epoch = epoch
        self.layer = layer


class CheckpointMismatch(Exception):
    """Checkpoint does not match the requested model variant or shapes."""


class DegenerateLabels(ValueError):
    """ROC AUC requested for labels that contain a single class."""
