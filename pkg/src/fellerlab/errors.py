"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class PreconditionError(ValueError):
    """A documented precondition of an operation does not hold."""


class NonUniqueInvariantMeasure(ValueError):
    """The chain has more than one closed recurrent class."""

    def __init__(self, classes):
        self.classes = [sorted(int(s) for s in c) for c in classes]
        super().__init__(
            f"chain has {len(self.classes)} recurrent classes {self.classes}; "
            "invariant measure is not unique"
        )


class ODEToleranceError(RuntimeError):
    """Adaptive integration could not meet the requested tolerance."""

    def __init__(self, message, report=None):
        self.report = report or {}
        super().__init__(f"{message}: {self.report}")


class ConfigError(ValueError):
    """One or more problems found while validating an experiment config."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.problems))
