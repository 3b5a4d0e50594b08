from __future__ import annotations


class LatentForensicsError(Exception):
    """
    Base class for every error raised by this package
    """


class ShapeMismatchError(LatentForensicsError, ValueError):
    """
    Raised when tensor shapes do not fit the operation consuming them
    """

    def __init__(self, message: str, node: str | None = None):
        self.node: str | None = node
        prefix = f"node '{node}': " if node else ""
        super().__init__(f"{prefix}{message}")


class NonFiniteError(LatentForensicsError, ArithmeticError):
    """
    Raised when a primitive produces NaN or infinite values
    """

    def __init__(self, node: str):
        self.node: str = node
        super().__init__(f"node '{node}' produced non-finite values")


class InversionDivergedError(LatentForensicsError, ArithmeticError):
    def __init__(self, iteration: int, detail: str = ""):
        self.iteration: int = iteration
        suffix = f": {detail}" if detail else ""
        super().__init__(f"inversion loss became non-finite at iteration {iteration}{suffix}")


class SingleClassError(LatentForensicsError, ValueError):
    def __init__(self, context: str = "labels"):
        super().__init__(f"{context} must contain both genuine and fake samples")


class UndefinedPointError(LatentForensicsError, ValueError):
    """
    Both densities vanish at the queried point, so the likelihood ratio is undefined
    """


class ConfigValidationError(LatentForensicsError, ValueError):
    def __init__(self, key_path: str, message: str):
        self.key_path: str = key_path
        self.message: str = message
        super().__init__(f"{key_path}: {message}")


class MissingArtifactError(LatentForensicsError, FileNotFoundError):
    def __init__(self, path: str, producer: str):
        self.path: str = path
        self.producer: str = producer
        super().__init__(f"missing artifact {path}; run the '{producer}' subcommand first")


class ArtifactHashMismatchError(LatentForensicsError):
    def __init__(self, path: str, expected: str, found: str | None):
        self.path: str = path
        super().__init__(
            f"artifact {path} was produced by config {found or 'unknown'}, expected {expected}"
        )


class ContainerFormatError(LatentForensicsError, ValueError):
    """
    Raised when a tensor container file is malformed
    """
