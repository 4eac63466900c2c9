"""Closed-form op counts and the gate/latency cost model for conv/fc layers.

Unit costs (65 nm synthesis of IEEE 754 single-precision arithmetic blocks)
price one operation of each kind; layer op counts follow the standard
multiply-accumulate datapath versus the four-path BM datapath.

The per-output hardware weighting assumes the four BM terms run on parallel
paths: add and max op counts halve per path, exp divides by four, and the
input logarithms are shared across all F filters, i.e. amortize as C/F per
output (P/Q for fc).  Accumulation is sequential, so latency carries the
same K^2*C scaling as gates.  With G the gate table and D the latency
table, per output value:

    std:  K^2*C * (G_mul + G_add)              (latency alike)
    BM:   (K^2*C + 2) * G_add + (K^2*C - 1) * G_max + G_exp + (C/F) * G_log

Activation cost is excluded on both sides (identical in both models).
This weighting reproduces all 24 published gate and latency ratio rows to
their 2-decimal rounding; a fixed grid of those rows ships with the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .netspec import NetworkSpec, conv_geometries, fc_geometries
from .opcount import OpCount


@dataclass(frozen=True)
class OpCost:
    gates: int
    latency: int


@dataclass(frozen=True)
class GateConstants:
    add: OpCost = OpCost(16048, 3)
    max: OpCost = OpCost(1464, 2)
    mul: OpCost = OpCost(35345, 4)
    log: OpCost = OpCost(154179, 35)
    exp: OpCost = OpCost(256965, 21)

    def as_dict(self) -> dict:
        return {k: {"gates": getattr(self, k).gates, "latency": getattr(self, k).latency}
                for k in ("add", "max", "mul", "log", "exp")}

    @classmethod
    def from_dict(cls, d: dict) -> "GateConstants":
        base = cls().as_dict()
        for k, v in d.items():
            if k not in base:
                raise ValueError(f"unknown op kind {k!r} in gate constants")
            base[k].update(v)
        return cls(**{k: OpCost(v["gates"], v["latency"]) for k, v in base.items()})


@dataclass(frozen=True)
class ConvShape:
    F: int
    C: int
    K: int
    L: int
    M: int

    def __post_init__(self):
        if min(self.F, self.C, self.K, self.L, self.M) < 1:
            raise ValueError(f"conv shape extents must be >= 1: {self}")


def opcount_conv(shape: ConvShape, model: str) -> OpCount:
    """Whole-layer operation counts for one input image (Table of the
    conv op model); L, M are output spatial extents."""
    F, C, K, L, M = shape.F, shape.C, shape.K, shape.L, shape.M
    lm = L * M
    if model == "standard":
        return OpCount(activation=F * lm, add=F * K * K * C * lm, mul=F * K * K * C * lm)
    if model == "bm":
        kkc = K * K * C
        return OpCount(
            activation=F * lm,
            exp=4 * F * lm,
            log=C * lm,
            add=2 * F * (kkc + 2) * lm,
            max=2 * F * (kkc - 1) * lm,
        )
    raise ValueError(f"unknown model {model!r}")


def opcount_fc(P: int, Q: int, model: str) -> OpCount:
    if P < 1 or Q < 1:
        raise ValueError("fc extents must be >= 1")
    if model == "standard":
        return OpCount(activation=Q, add=Q * P, mul=Q * P)
    if model == "bm":
        return OpCount(activation=Q, exp=4 * Q, log=P, add=2 * Q * (P + 2), max=2 * Q * (P - 1))
    raise ValueError(f"unknown model {model!r}")


def _unit_costs(n: int, log_share: float, gc: GateConstants) -> tuple[float, float, float, float]:
    """Per-output costs for a receptive field of n products and a log term
    amortized as log_share per output.  Returns (gates_std, gates_bm,
    latency_std, latency_bm)."""
    gates_std = n * (gc.mul.gates + gc.add.gates)
    lat_std = n * (gc.mul.latency + gc.add.latency)
    gates_bm = (n + 2) * gc.add.gates + (n - 1) * gc.max.gates + gc.exp.gates + log_share * gc.log.gates
    lat_bm = (n + 2) * gc.add.latency + (n - 1) * gc.max.latency + gc.exp.latency + log_share * gc.log.latency
    return gates_std, gates_bm, lat_std, lat_bm


def conv_unit_costs(F: int, C: int, K: int, gc: GateConstants | None = None):
    gc = gc or GateConstants()
    return _unit_costs(K * K * C, C / F, gc)


def ratio_conv(F: int, C: int, K: int, gc: GateConstants | None = None) -> tuple[float, float]:
    """Standard/BM gate and latency ratios for one conv output."""
    gs, gb, ls, lb = conv_unit_costs(F, C, K, gc)
    return gs / gb, ls / lb


def fc_unit_costs(P: int, Q: int, gc: GateConstants | None = None):
    gc = gc or GateConstants()
    return _unit_costs(P, P / Q, gc)


def ratio_fc(P: int, Q: int, gc: GateConstants | None = None) -> tuple[float, float]:
    gs, gb, ls, lb = fc_unit_costs(P, Q, gc)
    return gs / gb, ls / lb


# ---------------------------------------------------------------------------
# whole-network reports


@dataclass
class LayerCost:
    layer_id: str
    kind: str           # conv | fc
    F: int              # fc: Q
    C: int              # fc: P
    K: int              # fc: 1
    L: int
    M: int
    converted: bool
    gates_std: float    # unit gates x output volume
    gates_bm: float
    gate_ratio: float
    latency_std: float  # per-output datapath latency
    latency_bm: float
    latency_ratio: float
    ops_std: OpCount = field(default_factory=OpCount)
    ops_bm: OpCount = field(default_factory=OpCount)

    @property
    def gates(self) -> float:
        return self.gates_bm if self.converted else self.gates_std


REPORT_COLUMNS = (
    "layer_id", "kind", "F", "C", "K", "L", "M",
    "gates_std", "gates_bm", "gate_ratio", "latency_std", "latency_bm", "latency_ratio",
)


@dataclass
class CostReport:
    rows: list[LayerCost]
    converted_prefix: int

    @property
    def total_gates(self) -> float:
        return sum(r.gates for r in self.rows)

    @property
    def total_gates_std(self) -> float:
        return sum(r.gates_std for r in self.rows)

    @property
    def total_gates_bm(self) -> float:
        return sum(r.gates_bm for r in self.rows)


def network_gate_report(spec: NetworkSpec, converted_prefix: int,
                        gc: GateConstants | None = None) -> CostReport:
    """Per-layer gate costs with the first `converted_prefix` conv layers
    priced as BM; per-output unit gates scale by the layer's F*L*M output
    volume.  fc layers are listed but stay standard (the sweep models conv
    conversion)."""
    gc = gc or GateConstants()
    convs = conv_geometries(spec)
    if not 0 <= converted_prefix <= len(convs):
        raise ValueError(f"converted prefix {converted_prefix} outside 0..{len(convs)}")
    rows = []
    for i, g in enumerate(convs):
        gs, gb, ls, lb = conv_unit_costs(g.F, g.C, g.K, gc)
        volume = g.F * g.L * g.M
        rows.append(LayerCost(
            layer_id=g.layer_id, kind="conv", F=g.F, C=g.C, K=g.K, L=g.L, M=g.M,
            converted=i < converted_prefix,
            gates_std=gs * volume, gates_bm=gb * volume, gate_ratio=gs / gb,
            latency_std=ls, latency_bm=lb, latency_ratio=ls / lb,
            ops_std=opcount_conv(ConvShape(g.F, g.C, g.K, g.L, g.M), "standard"),
            ops_bm=opcount_conv(ConvShape(g.F, g.C, g.K, g.L, g.M), "bm"),
        ))
    for g in fc_geometries(spec):
        gs, gb, ls, lb = fc_unit_costs(g.P, g.Q, gc)
        rows.append(LayerCost(
            layer_id=g.layer_id, kind="fc", F=g.Q, C=g.P, K=1, L=1, M=1,
            converted=False,
            gates_std=gs * g.Q, gates_bm=gb * g.Q, gate_ratio=gs / gb,
            latency_std=ls, latency_bm=lb, latency_ratio=ls / lb,
            ops_std=opcount_fc(g.P, g.Q, "standard"),
            ops_bm=opcount_fc(g.P, g.Q, "bm"),
        ))
    return CostReport(rows, converted_prefix)


def gate_sweep(spec: NetworkSpec, gc: GateConstants | None = None) -> list[float]:
    """Total gates for every conversion depth k = 0..number of conv layers."""
    n = len(conv_geometries(spec))
    return [network_gate_report(spec, k, gc).total_gates for k in range(n + 1)]


# ---------------------------------------------------------------------------
# emission


def report_to_csv(report: CostReport) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for r in report.rows:
        vals = [getattr(r, c) for c in REPORT_COLUMNS]
        lines.append(",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in vals))
    return "\n".join(lines) + "\n"


def report_to_json(report: CostReport) -> str:
    doc = {
        "converted_prefix": report.converted_prefix,
        "total_gates": report.total_gates,
        "total_gates_std": report.total_gates_std,
        "total_gates_bm": report.total_gates_bm,
        "layers": [
            {**{c: getattr(r, c) for c in REPORT_COLUMNS},
             "converted": r.converted,
             "ops_std": r.ops_std.as_dict(),
             "ops_bm": r.ops_bm.as_dict()}
            for r in report.rows
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def grid_report(rows: list[dict], gc: GateConstants | None = None) -> list[dict]:
    """Ratio table for bare (F, C, K) rows, e.g. the published 24-row grid."""
    gc = gc or GateConstants()
    out = []
    for r in rows:
        gr, lr = ratio_conv(r["F"], r["C"], r["K"], gc)
        out.append({**r, "gate_ratio": gr, "latency_ratio": lr})
    return out


def load_grid(path) -> list[dict]:
    rows = json.loads(Path(path).read_text())
    if not isinstance(rows, list):
        raise ValueError("grid file must be a JSON list of {F, C, K} rows")
    return rows
