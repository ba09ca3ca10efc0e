class FedCACError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(FedCACError, ValueError):
    pass


class DataError(FedCACError, ValueError):
    pass


class PartitionError(DataError):
    pass


class StructureError(FedCACError, ValueError):
    """Two layered containers do not share names, order and shapes."""


class RoundError(FedCACError):
    """Wraps a failure inside a simulation round and names the round."""

    def __init__(self, round_index, cause):
        super().__init__(f"round {round_index} failed: {cause}")
        self.round_index = round_index
        self.cause = cause
