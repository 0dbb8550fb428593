"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class ESDError(Exception):
    pass


class ValidationError(ESDError, ValueError):
    """Bad input: shapes, ranges, config keys, malformed files."""


class NumericalError(ESDError, ArithmeticError):
    """A factorization or sampler update failed numerically."""


class SamplerError(NumericalError):
    def __init__(self, iteration, update, cause):
        self.iteration = iteration
        self.update = update
        self.cause = cause
        super().__init__(f"iteration {iteration}: update '{update}' failed: {cause}")
