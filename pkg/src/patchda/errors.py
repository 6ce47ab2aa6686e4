"""Exception hierarchy shared by all modules."""


class InvalidInputError(ValueError):
    """An argument has the wrong shape, range or value."""


class InvalidConfigError(ValueError):
    """A configuration is inconsistent or names unknown keys."""


class DataError(IOError):
    """A data file is missing, truncated or otherwise unreadable."""


class IngestionError(DataError):
    """A precomputed feature file failed validation."""

    def __init__(self, clip_id, message):
        super().__init__(f"{clip_id}: {message}")
        self.clip_id = clip_id


class CheckpointError(DataError):
    """A checkpoint is corrupt or incompatible with the requested config."""


class LabelAccessError(RuntimeError):
    """Target-domain labels were requested outside of evaluation."""


class TrainingAbort(RuntimeError):
    """Training diverged; carries the epoch and offending loss component."""

    def __init__(self, epoch, component, message=None):
        self.epoch = epoch
        self.component = component
        where = "" if epoch is None else f" at epoch {epoch}"
        super().__init__(f"{message or 'non-finite loss component'} ({component!r}{where})")
