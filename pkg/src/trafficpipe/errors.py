"""Exception types raised across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by trafficpipe."""


class MalformedRow(PipelineError):
    def __init__(self, path, line, reason=""):
        self.path = str(path)
        self.line = line
        self.reason = reason
        msg = f"{self.path}:{line}: malformed row"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class DanglingEdge(PipelineError):
    def __init__(self, u, v):
        self.u, self.v = u, v
        super().__init__(f"edge {u}->{v} references a node that does not exist")


class EmptyGraph(PipelineError):
    pass


class UnknownRoadType(PipelineError):
    pass


class NonPositiveInput(PipelineError):
    pass


class NegativeVolume(PipelineError):
    pass


class UnknownZone(PipelineError):
    def __init__(self, zone_id):
        self.zone_id = zone_id
        super().__init__(f"trip references undefined zone {zone_id}")


class UnreachableDestination(PipelineError):
    def __init__(self, origin, dest):
        self.origin, self.dest = origin, dest
        super().__init__(f"destination {dest} is unreachable from origin {origin}")


class AtlasOverflow(PipelineError):
    pass


class ConfigError(PipelineError):
    """Invalid or incomplete run configuration (CLI exit code 1)."""
