"""Parameter schedule of the iteration and the inequalities it must satisfy."""

from __future__ import annotations

import configparser
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from fractions import Fraction

import mpmath

mpmath.mp.dps = 40

N_STAR_DEFAULT = 5


class ScheduleOverflow(OverflowError):
    """lambda_q no longer fits in a float."""

    def __init__(self, level, largest):
        self.level = level
        self.largest_representable_level = largest
        super().__init__(f"schedule-overflow at q={level}; largest representable level is {largest}")


class InvalidConstant(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _parse_int(value):
    """Integers may be given as '10', '5e6' or '5*10**1368'."""
    if isinstance(value, int):
        return value
    text = str(value).strip().replace(" ", "")
    if "**" in text or "*" in text:
        prod = 1
        for factor in text.split("*") if "**" not in text else _split_power(text):
            prod *= factor if isinstance(factor, int) else int(factor)
        return prod
    d = Decimal(text)
    if d != d.to_integral_value():
        raise ConfigError(f"expected an integer, got {value!r}")
    return int(d)


def _split_power(text):
    # accepts c*b**e and b**e
    coef = 1
    if text.count("*") == 3:
        c, rest = text.split("*", 1)
        coef = int(c)
        text = rest
    base, exp = text.split("**")
    return [coef * int(base) ** int(exp)]


@dataclass(frozen=True)
class ParameterConfig:
    a: int
    b: float
    beta: float
    alpha: float
    zeta: float
    s: float
    t0: float
    eps: float
    T: float = 1.0
    c0: float = 2.0
    ratio_threshold: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "a", _parse_int(self.a))
        for name in ("b", "beta", "alpha", "zeta", "s", "t0", "eps", "T", "c0", "ratio_threshold"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def from_mapping(cls, m):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(m) - known
        if unknown:
            raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
        missing = [k for k in ("a", "b", "beta", "alpha", "zeta", "s", "t0", "eps") if k not in m]
        if missing:
            raise ConfigError(f"missing parameter keys: {missing}")
        try:
            return cls(**m)
        except (ValueError, ArithmeticError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self):
        d = asdict(self)
        d["a"] = str(self.a)
        return d


@dataclass(frozen=True)
class Interval:
    """Open interval (center - half, center + half) with exact endpoints."""

    center: Fraction
    half: Fraction

    @property
    def lo(self):
        return float(self.center - self.half)

    @property
    def hi(self):
        return float(self.center + self.half)

    def contains(self, other: "Interval"):
        return self.center - self.half <= other.center - other.half and other.center + other.half <= self.center + self.half

    def strictly_contains_time(self, t):
        return self.lo < t < self.hi

    def as_tuple(self):
        return (self.lo, self.hi)


@dataclass(frozen=True)
class LevelSchedule:
    q: int
    lambda_q: float
    lambda_q1: float
    delta_q: float
    delta_q1: float
    delta_q2: float
    delta_1: float
    r_perp: float
    r_par: float
    mu: float
    ell: float
    s_q: float
    S_q: float
    s_q1: float
    I_q: Interval
    Itilde_q: Interval
    I_q1: Interval
    window: Interval
    eps1: float | None
    p_int: float
    zeta: float = 0.0

    def to_json(self):
        out = {}
        for k, v in asdict(self).items():
            if isinstance(getattr(self, k), Interval):
                iv = getattr(self, k)
                out[k] = [iv.lo, iv.hi]
            else:
                out[k] = v
        return out


def _frac(x):
    return Fraction(str(x))


def lam_mp(config: ParameterConfig, q):
    return 2 * mpmath.pi * mpmath.power(mpmath.mpf(config.a), mpmath.power(mpmath.mpf(config.b), q))


def log_lambda(config: ParameterConfig, q):
    """log lambda_q, computed without forming lambda_q."""
    return mpmath.log(2 * mpmath.pi) + mpmath.power(mpmath.mpf(config.b), q) * mpmath.log(mpmath.mpf(config.a))


def interval_half_widths(config: ParameterConfig, q):
    """Exact s_q, S_q, s_{q+1} as fractions."""
    half = _frac(config.s) / 2
    s_list = [half ** (i + 1) for i in range(q + 2)]
    S_q = sum(s_list[: q + 1], Fraction(0))
    return s_list[q], S_q, s_list[q + 1]


def intervals(config: ParameterConfig, q):
    s_q, S_q, s_q1 = interval_half_widths(config, q)
    c = _frac(config.t0)
    I_q = Interval(c, S_q)
    It = Interval(c, S_q + s_q1 / 2)
    I_q1 = Interval(c, S_q + s_q1)
    window = Interval(c, 2 * _frac(config.s))
    return I_q, It, I_q1, window


def epsilon_one(config: ParameterConfig, geometry_constants):
    sup_g = float(geometry_constants["sup_gamma_c0"])
    card = float(geometry_constants["cardinality"])
    c0 = float(geometry_constants.get("c0", config.c0))
    if min(sup_g, card, c0) <= 0:
        raise InvalidConstant("geometry constants must be positive")
    return (config.eps / (sup_g * card * c0 * 4 * (2 * math.pi) ** 3)) ** 2


def _to_float(x):
    v = float(x)
    if math.isinf(v) or v > sys.float_info.max:
        raise OverflowError
    return v


def largest_representable_level(config: ParameterConfig, qmax=64):
    lmax = mpmath.log(sys.float_info.max)
    last = -1
    for q in range(qmax):
        if log_lambda(config, q + 1) < lmax:
            last = q
        else:
            break
    return last


def schedule(config: ParameterConfig, q: int, geometry_constants=None):
    """All derived scalars of level q."""
    if q < 0:
        raise ValueError("q must be >= 0")
    try:
        lq = _to_float(lam_mp(config, q))
        lq1 = _to_float(lam_mp(config, q + 1))
    except OverflowError:
        raise ScheduleOverflow(q, largest_representable_level(config)) from None
    lam1 = float(lam_mp(config, 1))
    lq2 = lam_mp(config, q + 2)
    beta = config.beta
    delta = lambda lam: float(mpmath.power(lam, -2 * beta))  # noqa: E731
    two_pi = 2 * math.pi
    r_perp = lq1 ** (-6 / 7) * two_pi ** (-1 / 7)
    r_par = lq1 ** (-4 / 7)
    mu = lq1 ** (9 / 7) * two_pi ** (1 / 7)
    ell = lq1 ** (-1.5 * config.alpha) * lq ** -2
    s_q, S_q, s_q1 = interval_half_widths(config, q)
    I_q, It, I_q1, window = intervals(config, q)
    if geometry_constants is None:
        from .geometry import build_direction_set, measure_constants

        geometry_constants = measure_constants(build_direction_set())
    eps1 = epsilon_one(config, geometry_constants)
    return LevelSchedule(
        q=q,
        lambda_q=lq,
        lambda_q1=lq1,
        delta_q=delta(mpmath.mpf(lq)),
        delta_q1=delta(mpmath.mpf(lq1)),
        delta_q2=delta(lq2),
        delta_1=delta(mpmath.mpf(lam1)),
        r_perp=r_perp,
        r_par=r_par,
        mu=mu,
        ell=ell,
        s_q=float(s_q),
        S_q=float(S_q),
        s_q1=float(s_q1),
        I_q=I_q,
        Itilde_q=It,
        I_q1=I_q1,
        window=window,
        eps1=eps1,
        p_int=32 / (32 - 7 * config.alpha),
        zeta=config.zeta,
    )


# -- constraints ------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    """Satisfied iff lhs < rhs (or lhs <= rhs when ``strict`` is False)."""

    name: str
    lhs: float
    rhs: float
    satisfied: bool
    margin: float
    kind: str
    level: int | None = None
    strict: bool = True
    note: str = ""


@dataclass
class ConstraintReport:
    records: list = field(default_factory=list)

    @property
    def hard_ok(self):
        return all(r.satisfied for r in self.records if r.kind == "hard")

    @property
    def all_ok(self):
        return all(r.satisfied for r in self.records)

    def failures(self, kind=None):
        return [r for r in self.records if not r.satisfied and (kind is None or r.kind == kind)]

    def by_name(self, name):
        return [r for r in self.records if r.name == name]

    def to_json(self):
        def clean(r):
            d = asdict(r)
            for k in ("lhs", "rhs", "margin"):
                if not math.isfinite(d[k]):
                    d[k] = str(d[k])
            return d

        return {
            "hard_ok": self.hard_ok,
            "all_ok": self.all_ok,
            "records": [clean(r) for r in self.records],
        }

    def to_table(self):
        head = ("name", "level", "kind", "lhs", "rhs", "margin", "ok")
        rows = [head]
        for r in self.records:
            rows.append(
                (
                    r.name,
                    "-" if r.level is None else str(r.level),
                    r.kind,
                    f"{r.lhs:.6g}",
                    f"{r.rhs:.6g}",
                    f"{r.margin:.6g}",
                    "yes" if r.satisfied else "NO",
                )
            )
        widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        return "\n".join(lines) + "\n"


def _safe_float(x):
    try:
        return float(x)
    except OverflowError:
        return math.inf if x > 0 else -math.inf


def _rec(records, name, lhs, rhs, kind, level=None, strict=True, note=""):
    lhs_m, rhs_m = mpmath.mpf(lhs), mpmath.mpf(rhs)
    ok = bool(lhs_m < rhs_m) if strict else bool(lhs_m <= rhs_m)
    records.append(
        Constraint(name, _safe_float(lhs_m), _safe_float(rhs_m), ok, _safe_float(rhs_m - lhs_m), kind, level, strict, note)
    )


def check_constraints(config: ParameterConfig, q_max: int = 2, n_star: int = N_STAR_DEFAULT):
    """Evaluate every parameter inequality; nothing is raised."""
    mp = mpmath.mpf
    al, b, be, ze = mp(config.alpha), mp(config.b), mp(config.beta), mp(config.zeta)
    recs = []
    # structural requirements
    _rec(recs, "a multiple of n_star", config.a % n_star, 1, "hard", note="lhs is a mod n_star")
    _rec(recs, "a > 1", 1, config.a, "hard")
    _rec(recs, "b > 1", 1, b, "hard")
    _rec(recs, "beta > 0", 0, be, "hard")
    _rec(recs, "zeta > 0", 0, ze, "hard")
    _rec(recs, "alpha > 0", 0, al, "hard")
    _rec(recs, "s > 0", 0, config.s, "hard")
    _rec(recs, "eps > 0", 0, config.eps, "hard")
    _rec(recs, "alpha < 1/(7*74)", al, mp(1) / (7 * 74), "hard")
    _rec(recs, "0 < t0 - 2s", 0, mp(config.t0) - 2 * mp(config.s), "hard", strict=False)
    _rec(recs, "t0 + 2s < T", mp(config.t0) + 2 * mp(config.s), config.T, "hard", strict=False)
    p_int = mp(32) / (32 - 7 * al)
    _rec(recs, "p_int > 1", 1, p_int, "hard")
    _rec(recs, "p_int <= 2", p_int, 2, "hard", strict=False)
    # inequalities used in the estimates
    _rec(recs, "alpha*b > 4", 4, al * b, "asymptotic")
    _rec(recs, "alpha < 1/40", al, mp(1) / 40, "asymptotic")
    _rec(recs, "2*beta*b + 3*zeta < 1/14", 2 * be * b + 3 * ze, mp(1) / 14, "asymptotic")
    _rec(recs, "2*beta + zeta/b < alpha", 2 * be + ze / b, al, "asymptotic")
    _rec(recs, "4*zeta + 2*beta*b < alpha", 4 * ze + 2 * be * b, al, "asymptotic")
    _rec(recs, "2*beta*b + 3*zeta < alpha", 2 * be * b + 3 * ze, al, "asymptotic")
    a_pow = mpmath.exp(-be * b * mpmath.log(mp(config.a))) if config.a > 0 else mp(1)
    _rec(recs, "a^(-beta*b) < 1/2", a_pow, mp(1) / 2, "asymptotic")
    # per-level inequalities, in logarithmic form
    for q in range(q_max + 1):
        if config.a <= 1 or b <= 1:
            break
        Lq = log_lambda(config, q)
        Lq1 = log_lambda(config, q + 1)
        log_ell = -mp(3) / 2 * al * Lq1 - 2 * Lq
        _rec(recs, "log ell < -log lambda_q", log_ell, -Lq, "asymptotic", q)
        _rec(recs, "-log lambda_q1 < log ell", -Lq1, log_ell, "asymptotic", q)
        _rec(recs, "log(ell*lambda_q^4) <= -alpha*log lambda_q1", log_ell + 4 * Lq, -al * Lq1, "asymptotic", q, False)
        _rec(recs, "-log ell <= 2*alpha*log lambda_q1", -log_ell, 2 * al * Lq1, "asymptotic", q, False)
        s_q1 = (mp(config.s) / 2) ** (q + 2)
        _rec(
            recs,
            "log(ratio/s_q1) <= log lambda_q",
            mpmath.log(mp(config.ratio_threshold) / s_q1),
            Lq,
            "asymptotic",
            q,
            False,
        )
        I_q, It, I_q1, window = intervals(config, q)
        nested = It.contains(I_q) and I_q1.contains(It) and window.contains(I_q1)
        _rec(recs, "I_q in Itilde_q in I_q1 in B_2s", 0 if nested else 1, 1, "hard", q, note="exact rational endpoints")
    return ConstraintReport(recs)


def series_bound_check(config: ParameterConfig, q_max: int = 10):
    """Partial sums of delta_{q+1}^{1/2} against a^{-beta b}/(1 - a^{-beta b})."""
    mp = mpmath.mpf
    x = mpmath.exp(-mp(config.beta) * mp(config.b) * mpmath.log(mp(config.a)))
    bound = x / (1 - x)
    total = mp(0)
    for q in range(q_max + 1):
        total += mpmath.exp(-mp(config.beta) * log_lambda(config, q + 1))
    return float(total), float(bound)


# -- config files -----------------------------------------------------------------

PRESETS = {
    # small-scale operating point for identity-mode runs; constraints are reported, not met
    "desk": dict(a=5, b=2, beta=0.05, alpha=1e-3, zeta=0.01, s=0.2, t0=0.5, eps=1.5e4),
    # satisfies every scalar and per-level inequality; lambda_q is far beyond floats
    "admissible": dict(a="5*10**1368", b=2200, beta=1e-7, alpha=1.9e-3, zeta=1e-5, s=0.1, t0=0.5, eps=1.0),
}


def load_config_text(text, fmt=None):
    """Parse INI-style text (sections) or JSON into a nested dict of strings."""
    stripped = text.lstrip()
    if fmt == "json" or (fmt is None and stripped.startswith("{")):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return data
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return {sec: dict(cp.items(sec)) for sec in cp.sections()}


def parameter_config_from(section):
    section = dict(section)
    preset = section.pop("preset", None)
    if preset and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    base = dict(PRESETS[preset]) if preset else {}
    base.update(section)
    return ParameterConfig.from_mapping(base)
