class ValidationError(ValueError):
    """Invalid configuration or inputs; carries every offending field."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericalError(ArithmeticError):
    """A computation produced non-finite or otherwise unusable numbers."""
