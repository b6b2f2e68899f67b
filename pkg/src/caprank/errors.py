"""Exception hierarchy shared across the toolkit.

Every error carries a stable class name that the CLI surfaces verbatim in
its single-line error output, so downstream tooling can match on it.
"""


class CaprankError(Exception):
    """Base class for all toolkit errors."""

    @property
    def name(self) -> str:
        return type(self).__name__


class InvalidField(CaprankError):
    """A field value violates a basic invariant (empty id, bad grade, ...)."""


# ---- preference store ----------------------------------------------------

class UnknownImage(CaprankError):
    pass


class UnknownCaption(CaprankError):
    pass


class DuplicateImageId(CaprankError):
    pass


class DuplicateCaptionId(CaprankError):
    pass


class CaptionLimitExceeded(CaprankError):
    pass


class DuplicateRecordId(CaprankError):
    pass


class RankingNotPartition(CaprankError):
    pass


class CorruptLog(CaprankError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class SchemaVersionMismatch(CaprankError):
    pass


# ---- pair generation -----------------------------------------------------

class DegenerateRecord(CaprankError):
    pass


class EmptyStore(CaprankError):
    pass


# ---- embedding shards ----------------------------------------------------

class BadMagic(CaprankError):
    pass


class DimensionMismatch(CaprankError):
    pass


class TruncatedShard(CaprankError):
    def __init__(self, byte_offset: int, message: str = ""):
        detail = f"shard data ends at byte {byte_offset}"
        if message:
            detail += f": {message}"
        super().__init__(detail)
        self.byte_offset = byte_offset


class CorruptShard(CaprankError):
    pass


class NonFiniteVector(CaprankError):
    def __init__(self, key, message: str = "vector contains NaN or Inf"):
        super().__init__(f"{key!r}: {message}")
        self.key = key


class DuplicateKey(CaprankError):
    pass


class EndpointUnreachable(CaprankError):
    pass


class PartialResponse(CaprankError):
    def __init__(self, missing_keys):
        self.missing_keys = list(missing_keys)
        shown = ", ".join(repr(k) for k in self.missing_keys[:5])
        more = "" if len(self.missing_keys) <= 5 else f" (+{len(self.missing_keys) - 5} more)"
        super().__init__(f"endpoint omitted keys: {shown}{more}")


# ---- reward head ---------------------------------------------------------

class NonFiniteActivation(CaprankError):
    def __init__(self, layer_index: int):
        super().__init__(f"non-finite activation after layer {layer_index}")
        self.layer_index = layer_index


class NonFiniteLoss(CaprankError):
    def __init__(self, delta):
        super().__init__(f"non-finite pair loss (reward delta = {delta!r})")
        self.delta = delta


class MissingEmbedding(CaprankError):
    def __init__(self, keys):
        self.keys = list(keys)
        shown = ", ".join(repr(k) for k in self.keys[:5])
        more = "" if len(self.keys) <= 5 else f" (+{len(self.keys) - 5} more)"
        super().__init__(f"no embedding for: {shown}{more}")


class DivergedTraining(CaprankError):
    def __init__(self, update: int, checkpoint=None):
        super().__init__(f"loss became non-finite at update {update}")
        self.update = update
        self.checkpoint = checkpoint


class IncompatibleArchitecture(CaprankError):
    pass


class CorruptCheckpoint(CaprankError):
    pass


# ---- compression ---------------------------------------------------------

class NonFiniteScore(CaprankError):
    def __init__(self, pair_id):
        super().__init__(f"non-finite score for pair {pair_id!r}")
        self.pair_id = pair_id


class EmptyTable(CaprankError):
    pass


class MissingPair(CaprankError):
    def __init__(self, pair_id):
        super().__init__(f"pair {pair_id!r} not present in source listing")
        self.pair_id = pair_id


# ---- evaluation ----------------------------------------------------------

class ZeroVector(CaprankError):
    pass


class EmptyEvalSet(CaprankError):
    pass


# ---- annotation service --------------------------------------------------

class UnknownLabeler(CaprankError):
    pass


class UnknownTask(CaprankError):
    pass


class LeaseExpired(CaprankError):
    pass
