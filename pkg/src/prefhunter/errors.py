"""Exception types raised across the pipeline."""


class PrefHunterError(Exception):
    pass


class MalformedRecord(PrefHunterError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DanglingReference(PrefHunterError):
    def __init__(self, uuid: str, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"event references unknown node {uuid}{where}")
        self.uuid = uuid
        self.line_no = line_no


class NonMonotoneSeq(PrefHunterError):
    pass


class UnknownNode(PrefHunterError):
    pass


class OrphanAction(PrefHunterError):
    """An attacker action was observed before any initial access."""


class InvalidScript(PrefHunterError):
    pass


class DegenerateRanking(PrefHunterError):
    pass


class EmptyEvidence(PrefHunterError):
    pass


class NonFiniteObjective(PrefHunterError):
    pass
