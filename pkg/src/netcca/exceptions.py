"""Exception types raised by netcca."""


class NetccaError(Exception):
    """Base class for all library errors."""


class ZeroVarianceColumn(NetccaError, ValueError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"column {index} has zero variance")


class DimensionMismatch(NetccaError, ValueError):
    pass


class RankDeficient(NetccaError, ValueError):
    pass


class DegenerateBasis(NetccaError, ValueError):
    pass


class UnknownFeature(NetccaError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown feature {name!r}")

    def __str__(self):
        return self.args[0]


class SelfLoop(NetccaError, ValueError):
    def __init__(self, line):
        self.line = line
        super().__init__(f"self-loop on line {line}")


class ParseError(NetccaError, ValueError):
    def __init__(self, line, detail=""):
        self.line = line
        msg = f"cannot parse line {line}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class Infeasible(NetccaError, RuntimeError):
    pass


class TooLarge(NetccaError, ValueError):
    pass


class DegenerateGrid(NetccaError, ValueError):
    pass


class AllDegenerate(NetccaError, RuntimeError):
    pass


class NotPositiveSemidefinite(NetccaError, ValueError):
    pass
