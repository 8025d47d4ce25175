"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` so the CLI can map failures to distinct
process exit statuses without a lookup table.
"""


class EvtaeError(Exception):
    exit_code = 1


class ConfigError(EvtaeError, ValueError):
    exit_code = 2


class DataError(EvtaeError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    pass


class NumericError(EvtaeError, ArithmeticError):
    exit_code = 4


class TrainingDivergence(NumericError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class FormatError(EvtaeError):
    exit_code = 5
