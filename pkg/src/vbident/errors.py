"""Exception hierarchy; each class carries the CLI exit status it maps to."""


class VbError(Exception):
    exit_code = 1


class ConfigError(VbError):
    exit_code = 2


class DataError(VbError):
    exit_code = 3


class DivergenceError(VbError):
    exit_code = 4

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class IdentificationError(VbError):
    exit_code = 5

    def __init__(self, message, stage=None):
        super().__init__(f"[{stage}] {message}" if stage else message)
        self.stage = stage
