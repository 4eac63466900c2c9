"""Per-layer operation tally shared by layer instrumentation and the cost model.

Counts follow the accounting of the closed-form layer op model: one entry
per arithmetic operation of the multiply-accumulate datapath (standard
layers) or of the add/max log-domain datapath (BM layers).  Activation
applications are counted whatever the activation function is, identity
included, because the model prices the activation slot, not a particular
sigma.
"""

from __future__ import annotations

from dataclasses import dataclass, fields


@dataclass
class OpCount:
    activation: int = 0
    exp: int = 0
    log: int = 0
    add: int = 0
    max: int = 0
    mul: int = 0

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def __iadd__(self, other: "OpCount") -> "OpCount":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def reset(self) -> None:
        for f in fields(self):
            setattr(self, f.name, 0)

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def total(self) -> int:
        return sum(self.as_dict().values())
