"""Exception taxonomy shared across the package."""


class TokenrollError(Exception):
    pass


class ContractViolation(TokenrollError, ValueError):
    """An operation was called outside its declared contract."""


class ShapeMismatch(ContractViolation):
    pass


class NumericDomainError(TokenrollError, ValueError):
    """Non-finite or out-of-domain values where finite ones are required."""


class SpecRejection(TokenrollError, ValueError):
    """A clip spec violates a generation bound; message names the bound."""


class VocabularyError(TokenrollError, ValueError):
    pass


class CorpusError(TokenrollError, ValueError):
    pass


class CorpusVersionMismatch(CorpusError):
    pass


class CorpusTruncated(CorpusError):
    pass


class CorpusDimMismatch(CorpusError):
    pass


class CheckpointError(TokenrollError, ValueError):
    pass


class ConfigError(TokenrollError, ValueError):
    pass


class EvalSetError(TokenrollError, ValueError):
    pass
