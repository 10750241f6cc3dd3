"""Exception hierarchy shared by every stage of the pipeline."""


class CustsegError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(CustsegError, ValueError):
    """A CSV header is missing a required column."""

    def __init__(self, column, table="input"):
        self.column = column
        super().__init__(f"{table}: missing required column {column!r}")


class RowError(CustsegError, ValueError):
    """A data row could not be parsed or violates a field invariant."""

    def __init__(self, row_index, message):
        self.row_index = row_index
        super().__init__(f"row {row_index}: {message}")


class OrphanTransactionError(CustsegError, ValueError):
    """Transactions reference accounts that have no customer profile."""

    def __init__(self, account_ids):
        self.account_ids = sorted(set(account_ids))
        shown = ", ".join(self.account_ids[:10])
        more = "" if len(self.account_ids) <= 10 else f" (+{len(self.account_ids) - 10} more)"
        super().__init__(f"transactions reference unknown accounts: {shown}{more}")


class ConfigError(CustsegError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DegenerateFeatureError(CustsegError, ValueError):
    """A feature is constant, so it cannot be standardised."""


class UndefinedMetricError(CustsegError, ValueError):
    """A cluster validity index is undefined for the given labelling."""


class NumericError(CustsegError, FloatingPointError):
    """A computation produced non-finite values."""


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss; carries the last good epoch."""

    def __init__(self, epoch, last_good_epoch, message="non-finite loss"):
        self.epoch = epoch
        self.last_good_epoch = last_good_epoch
        super().__init__(
            f"training diverged at epoch {epoch} ({message}); "
            f"last good epoch was {last_good_epoch}"
        )


class StageError(CustsegError):
    """A pipeline stage failed; wraps the original exception."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
