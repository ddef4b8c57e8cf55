"""Exception types shared across the package."""


class InfeasibleDesign(RuntimeError):
    """No grid point meets the requested resolution target."""


class SimulationDiverged(RuntimeError):
    """A transient run produced a non-finite state."""

    def __init__(self, cycle: int):
        super().__init__(f"simulation diverged at clock cycle {cycle}")
        self.cycle = cycle


class QuadratureError(RuntimeError):
    """In-band integral did not converge under node-count refinement."""


class TrainingError(RuntimeError):
    """Reconstruction-filter training could not produce a solution."""
