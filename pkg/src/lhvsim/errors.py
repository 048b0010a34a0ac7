"""Exception hierarchy. CLI exit codes are attached to the classes."""


class LhvsimError(Exception):
    exit_code = 1


class InvalidDirectionError(LhvsimError, ValueError):
    pass


class RangeError(LhvsimError, ValueError):
    pass


class ParameterError(LhvsimError, ValueError):
    pass


class DomainError(LhvsimError, ValueError):
    """A run setting lies outside the finite setting set a model was built for."""


class ProtocolError(LhvsimError):
    pass


class FlavorError(ProtocolError):
    """Binary and time verdicts were mixed, or a rule got the wrong flavor."""


class EmptyExperimentError(LhvsimError, ValueError):
    pass


class InsufficientDataError(LhvsimError):
    exit_code = 3

    def __init__(self, message: str, n_accepted: int):
        super().__init__(f"{message} (n_accepted={n_accepted})")
        self.n_accepted = n_accepted
