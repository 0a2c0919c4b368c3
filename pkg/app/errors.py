class DryingGameError(Exception):
    """Base class for every error raised by the drying game library."""


class ConfigError(DryingGameError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InvalidRange(DryingGameError):
    pass


class OutOfDomain(DryingGameError):
    pass


class NotReachable(DryingGameError):
    """The terminal set cannot be guaranteed from x0 within the horizon."""


class StrategyMismatch(DryingGameError):
    """A strategy or artifact was built for a different partition, grid or config."""


class InvalidStrategy(DryingGameError):
    pass


class InstanceTooLarge(DryingGameError):
    pass
