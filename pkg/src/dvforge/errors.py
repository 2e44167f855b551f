class ValidationError(ValueError):
    """Bad input or configuration. The CLI maps it to exit code 1."""


class VocabError(ValidationError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, report):
        self.step = step
        self.report = report
        super().__init__(f"loss became non-finite at step {step}")
