"""Exception types raised across the simulator."""


class PonSliceError(Exception):
    pass


class SchedulingInPast(PonSliceError, ValueError):
    pass


class UnknownOnu(PonSliceError, IndexError):
    pass


class InvalidSlice(PonSliceError, ValueError):
    pass


class EmptyCohort(PonSliceError, ValueError):
    pass


class DegenerateWindow(PonSliceError, ValueError):
    pass


class NoClients(PonSliceError, ValueError):
    pass


class InfeasibleConfig(PonSliceError):
    pass


class UnknownInvolvement(PonSliceError, KeyError):
    pass


class EmptyReport(PonSliceError, ValueError):
    pass


class ConsistencyError(PonSliceError, ValueError):
    pass


class ParseError(PonSliceError, ValueError):
    """Bad scenario input. Carries the offending key and line when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
