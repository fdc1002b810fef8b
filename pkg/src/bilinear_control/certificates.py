"""Finite-truncation certificates shared by the certification routines."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Certificate:
    """Outcome of a numerical check at truncation ``M``.

    A certificate with ``ok = False`` is a valid negative answer, not an error.
    ``witness_values`` holds the numbers the verdict was based on, and
    ``data`` any structured extras (index pairs, quadruples, ...).  Items of
    ``data`` are also readable as attributes, e.g. ``cert.C_N``.
    """

    assumption: str
    N: int
    M: int
    ok: bool
    witness_values: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def __getattr__(self, name):
        # only called when normal lookup fails
        data = self.__dict__.get("data", {})
        if name in data:
            return data[name]
        raise AttributeError(name)

    def __bool__(self):
        return bool(self.ok)

    def to_dict(self):
        return {
            "assumption": self.assumption,
            "N": int(self.N),
            "M": int(self.M),
            "ok": bool(self.ok),
            "witness_values": list(self.witness_values),
            "details": dict(self.data),
        }
