class DigsibError(Exception):
    """Base class for framework errors."""


class DegenerateSpec(DigsibError, ValueError):
    pass


class GenerationExhausted(DigsibError, RuntimeError):
    pass


class MutationExhausted(DigsibError, RuntimeError):
    pass


class EmptyPopulation(DigsibError, ValueError):
    pass


class MismatchedBinning(DigsibError, ValueError):
    pass


class MismatchedTestSets(DigsibError, ValueError):
    pass


class MismatchedCells(DigsibError, ValueError):
    pass


class EmptyDataset(DigsibError, ValueError):
    pass


class DegenerateVariance(DigsibError, ValueError):
    pass


class NoPositives(DigsibError, ValueError):
    pass


class NoNegatives(DigsibError, ValueError):
    pass


class ConfigError(DigsibError, ValueError):
    """Invalid experiment configuration; the message names the offending key."""


class ManifestCorrupt(DigsibError, RuntimeError):
    pass
