"""Exception hierarchy shared by every layer of the runtime."""


class ChtError(Exception):
    """Base class for all runtime faults."""


class UsageError(ChtError):
    """The caller violated an API precondition."""


class RegistryError(ChtError):
    """Unknown chunk or task type."""


class SerializationError(ChtError):
    """A chunk wrote a buffer whose length differs from its reported size."""


class DeserializationError(ChtError):
    """A buffer could not be turned back into a chunk object."""


class DecodeError(ChtError):
    """Malformed identifier or wire bytes."""


class DestinationDeadError(ChtError):
    """A message was addressed to a worker that has been killed."""

    def __init__(self, rank: int):
        super().__init__(f"worker {rank} is dead")
        self.rank = rank


class DanglingIdError(ChtError):
    """The owner of a chunk id has no entry for it."""


class DataLossError(ChtError):
    """A chunk's owner died and no replica is available."""


class TaskFailedError(ChtError):
    """A user task raised during execute."""
