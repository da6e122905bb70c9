"""Exception hierarchy shared by every crowdcert module."""


class CrowdCertError(ValueError):
    """Base class for all library errors."""


# core
class DuplicatePair(CrowdCertError):
    pass


class LabelOutOfRange(CrowdCertError):
    pass


class EmptyDataset(CrowdCertError):
    pass


class MissingGold(CrowdCertError):
    pass


class InvalidMatrix(CrowdCertError):
    """Transition matrix or prior fails its stochasticity invariants."""


# exact
class InvalidRange(CrowdCertError):
    pass


class EvenH(CrowdCertError):
    pass


class DegenerateThreshold(CrowdCertError):
    """The MAP vote threshold A_c is (numerically) an integer."""


class TooManyAnnotators(CrowdCertError):
    pass


class InvalidParams(CrowdCertError):
    pass


# aggregate
class UnannotatedTask(CrowdCertError):
    pass


class ZeroLikelihood(CrowdCertError):
    pass


# estimate
class MissingClassAnchors(CrowdCertError):
    pass


class SingularMatrix(CrowdCertError):
    pass


# certify
class AdversarialNoise(CrowdCertError):
    pass


class PreconditionViolated(CrowdCertError):
    pass


class RhoMismatch(CrowdCertError):
    pass


class GroupTooLarge(CrowdCertError):
    pass


class BoundUndefined(CrowdCertError):
    pass


class UnsupportedClassCount(CrowdCertError):
    pass


# simulate
class SigmaTooLarge(CrowdCertError):
    pass


class InvalidSplit(CrowdCertError):
    pass
