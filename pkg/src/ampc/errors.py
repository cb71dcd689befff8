from typing import Optional

from ampc.constants import (
    EXIT_CERTIFICATION_FAILED,
    EXIT_DESIGN_INFEASIBLE,
    EXIT_IO,
    EXIT_TRAINING_DIVERGED,
)


class AMPCError(Exception):
    """
    Base class for domain failures. `exit_code` is what the CLI returns.
    """

    exit_code: int = 1


class DesignInfeasible(AMPCError):
    """
    Tightened sets empty, disturbance bound too large, or no terminal radius found.
    """

    exit_code = EXIT_DESIGN_INFEASIBLE


class TrainingDiverged(AMPCError):
    exit_code = EXIT_TRAINING_DIVERGED

    def __init__(self, seed: int, epoch: int, loss: float) -> None:
        super().__init__(
            f"Training diverged (seed={seed}, epoch={epoch}, loss={loss!r})"
        )
        self.seed = seed
        self.epoch = epoch
        self.loss = loss


class CertificationFailed(AMPCError):
    exit_code = EXIT_CERTIFICATION_FAILED


class ArtifactFormatError(AMPCError, ValueError):
    """Malformed dataset or weights file. Carries the offending line number."""

    exit_code = EXIT_IO

    def __init__(self, path: object, line: Optional[int], message: str) -> None:
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


class OCPInfeasible(AMPCError):
    """Raised by `pi_mpc` when the optimal control problem has no solution."""
