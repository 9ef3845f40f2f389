"""Exception hierarchy shared by all modules."""


class SopaiError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SopaiError, ValueError):
    """Array shapes disagree with the network or with each other."""


class SizeLimitError(SopaiError):
    """A dense oracle was asked to work on more parameters than its cap."""


class NumericalError(SopaiError, ArithmeticError):
    """Base class for failures of the numerical routines."""


class SingularCurvatureError(NumericalError):
    """A curvature factor cannot be inverted at the requested damping."""


class IllConditionedError(NumericalError):
    """A damped Hessian is too ill-conditioned to invert reliably."""


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch, loss):
        super().__init__(f"loss became non-finite ({loss!r}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
