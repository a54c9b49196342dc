"""Exception hierarchy shared by every poselift module."""


class PoseLiftError(Exception):
    """Base class for all poselift errors."""


class NonPositiveDepth(PoseLiftError, ValueError):
    def __init__(self, joint_index, depth=None):
        self.joint_index = int(joint_index)
        self.depth = depth
        msg = f"joint {self.joint_index} has non-positive camera depth"
        if depth is not None:
            msg += f" ({depth:.6g} mm)"
        super().__init__(msg)


class SkeletonMismatch(PoseLiftError, ValueError):
    pass


class EmptyInput(PoseLiftError, ValueError):
    pass


class EmptyLibrary(PoseLiftError, ValueError):
    pass


class DegenerateScale(PoseLiftError, ValueError):
    pass


class DegenerateConfiguration(PoseLiftError, ValueError):
    pass


class SingularNormalEquations(PoseLiftError, ArithmeticError):
    pass


class FormatVersionMismatch(PoseLiftError, ValueError):
    pass


class CorruptProjectionCache(PoseLiftError, ValueError):
    pass


class ConfigInvalid(PoseLiftError, ValueError):
    pass
