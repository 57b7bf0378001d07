"""Exception hierarchy shared by all modules."""


class StlFunnelError(Exception):
    """Base class; ``module`` names the component that raised it."""

    module = "stlfunnel"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


# -- formulas ---------------------------------------------------------------

class FormulaError(StlFunnelError):
    module = "stl_ast"


class FormulaSyntaxError(FormulaError):
    def __init__(self, message, position, expected=None):
        self.position = position
        self.expected = expected
        detail = f"{message} at position {position}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)


class UnknownAtom(FormulaError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown atom {name!r}")


class FragmentViolation(FormulaError):
    pass


class WindowOrderViolation(FormulaError):
    pass


class UnboundedWindowInSequence(FormulaError):
    pass


class InvalidAtom(FormulaError):
    pass


# -- robustness -------------------------------------------------------------

class RobustnessError(StlFunnelError):
    module = "robustness"


class NonFiniteState(StlFunnelError):
    """A state vector (or an integrated one) contains inf or nan."""

    module = "numerics"


class InsufficientHorizon(RobustnessError):
    pass


class InfeasibleFormula(RobustnessError):
    """The smooth optimum of a task body is not positive."""


class NotConverged(RobustnessError):
    def __init__(self, message, estimate=None):
        self.estimate = estimate
        super().__init__(message)


# -- funnel -----------------------------------------------------------------

class FunnelError(StlFunnelError):
    module = "funnel"


class FunnelViolation(FunnelError):
    def __init__(self, side, margin, detail=""):
        self.side = side
        self.margin = margin
        msg = f"robustness left the funnel on the {side} side (margin {margin:.3e})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InfeasibleTask(FunnelError):
    def __init__(self, message, task=None):
        self.task = task
        if task is not None:
            message = f"task {task}: {message}"
        super().__init__(message)


class InvalidRhoMax(FunnelError):
    pass


class DeadlinePassed(FunnelError):
    pass


# -- controller / dynamics --------------------------------------------------

class SingularInput(StlFunnelError):
    module = "controller"


class DynamicsError(StlFunnelError):
    module = "dynamics"


class InvalidLaplacian(DynamicsError):
    pass


# -- hybrid -----------------------------------------------------------------

class HybridFault(StlFunnelError):
    """The jump window of a task elapsed without the jump firing."""

    module = "hybrid"


class RunAborted(StlFunnelError):
    """Wraps a fault raised mid-run together with the partial trajectory."""

    module = "hybrid"

    def __init__(self, cause, trajectory, report=None):
        self.cause = cause
        self.trajectory = trajectory
        self.report = report
        super().__init__(f"run aborted at t={trajectory.times[-1] if len(trajectory) else 0.0:.4f}: {cause}")


# -- scenario files ---------------------------------------------------------

class ScenarioError(StlFunnelError):
    module = "cli"


class ParseError(ScenarioError):
    def __init__(self, line, key, message):
        self.line = line
        self.key = key
        super().__init__(f"line {line}: {message}" + (f" (key {key!r})" if key else ""))


class ValidationError(ScenarioError):
    def __init__(self, key, reason):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")
