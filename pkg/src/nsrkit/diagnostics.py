"""Check records produced by a step, with deterministic JSON, CSV and text renderings."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

HARD_KINDS = ("identity", "support")


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(f"{x:.12g}")


@dataclass
class Check:
    name: str
    measured: float
    bound: float
    passed: bool
    kind: str
    stage: str
    level: int | None = None
    relation: str = "<="
    note: str = ""

    @property
    def hard(self):
        return self.kind in HARD_KINDS

    def to_json(self):
        d = asdict(self)
        d["measured"] = _num(self.measured)
        d["bound"] = _num(self.bound)
        d["passed"] = bool(self.passed)
        return d


@dataclass
class DiagnosticsReport:
    checks: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, name, measured, bound, kind, stage, relation="<=", level=None, note="", passed=None):
        if passed is None:
            m, b = float(measured), float(bound)
            if relation == "<=":
                passed = m <= b
            elif relation == ">=":
                passed = m >= b
            elif relation == "==":
                passed = m == b
            else:
                raise ValueError(relation)
        self.checks.append(Check(name, float(measured), float(bound), bool(passed), kind, stage, level, relation, note))
        return self.checks[-1]

    def get(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def hard_ok(self):
        return all(c.passed for c in self.checks if c.hard)

    def failures(self, hard_only=False):
        return [c for c in self.checks if not c.passed and (c.hard or not hard_only)]

    def to_json(self):
        payload = {
            "meta": self.meta,
            "hard_ok": self.hard_ok,
            "checks": [c.to_json() for c in self.checks],
            "traces": [{k: (_num(v) if isinstance(v, float) else v) for k, v in row.items()} for row in self.traces],
        }
        return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def checks_csv(self):
        lines = ["name,stage,kind,level,relation,measured,bound,passed"]
        for c in self.checks:
            lvl = "" if c.level is None else str(c.level)
            lines.append(f"{c.name},{c.stage},{c.kind},{lvl},{c.relation},{_num(c.measured)!r},{_num(c.bound)!r},{int(c.passed)}")
        return "\n".join(lines) + "\n"

    def traces_csv(self):
        if not self.traces:
            return ""
        keys = list(self.traces[0].keys())
        lines = [",".join(keys)]
        for row in self.traces:
            lines.append(",".join(repr(_num(row[k])) if isinstance(row[k], float) else str(row[k]) for k in keys))
        return "\n".join(lines) + "\n"

    def to_table(self):
        w = max([len(c.name) for c in self.checks] + [4])
        out = [f"{'name':<{w}}  {'kind':<9} {'measured':>13} rel {'bound':>13}  ok"]
        for c in self.checks:
            out.append(f"{c.name:<{w}}  {c.kind:<9} {c.measured:>13.6g} {c.relation:>3} {c.bound:>13.6g}  {'yes' if c.passed else 'NO'}")
        return "\n".join(out) + "\n"
