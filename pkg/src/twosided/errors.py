"""Exception hierarchy shared by the loss-model and queueing-model code."""


class ModelError(ValueError):
    """Base class for invalid inputs and infeasible numerical problems."""


class NonRecurrent(ModelError):
    pass


class StationaryOverflow(ModelError):
    pass


class BoundViolation(ModelError):
    pass


class PriceOutOfRange(ModelError):
    pass


class RateOutOfRange(ModelError):
    pass


class RequiresLinearModel(ModelError):
    pass


class NoStablePrice(ModelError):
    pass


class Infeasible(ModelError):
    pass


class PreconditionViolation(ModelError):
    pass


class InfeasibleRate(ModelError):
    pass


class InfeasibleDemand(ModelError):
    pass


class NoRoot(ModelError):
    pass


class NegativeRate(ModelError):
    pass


class TooShort(ModelError):
    pass


class ConfigInvalid(ModelError):
    pass
