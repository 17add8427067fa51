"""Exception hierarchy.

Every error carries a ``category`` that the CLI maps to a process exit code.
"""

EXIT_CODES = {
    "config": 2,
    "mesh": 3,
    "numeric": 4,
    "io": 5,
    "check": 6,
}


class VpinnError(Exception):
    category = "numeric"

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.category]


class InvalidArgumentError(VpinnError, ValueError):
    category = "config"


class ConfigError(VpinnError, ValueError):
    category = "config"


class ContractViolationError(VpinnError, ValueError):
    category = "numeric"


class InvalidModeError(VpinnError, ValueError):
    category = "config"


class MeshError(VpinnError):
    category = "mesh"


class DegenerateElementError(MeshError):
    def __init__(self, element_id, det=None):
        self.element_id = element_id
        self.det = det
        msg = f"element {element_id} is degenerate"
        if det is not None:
            msg += f" (Jacobian determinant {det:.3e})"
        super().__init__(msg)


class UnsupportedFormatError(MeshError):
    pass


class UnsupportedElementError(MeshError):
    pass


class MalformedFileError(MeshError):
    pass


class AssemblyError(VpinnError):
    category = "numeric"


class NumericOverflowError(VpinnError, FloatingPointError):
    category = "numeric"


class TrainingAbortError(VpinnError):
    category = "numeric"

    def __init__(self, step, reason):
        self.step = step
        super().__init__(f"training aborted at step {step}: {reason}")


class ArtifactIOError(VpinnError, OSError):
    category = "io"


class CheckFailedError(VpinnError):
    category = "check"
