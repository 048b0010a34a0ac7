"""Estimators, CHSH experiments and contract checkers over engine tallies."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .engine import Model, SelectionRule, Tally, default_selection, run_experiment
from .errors import FlavorError, InsufficientDataError, ParameterError
from .models import nested_partition, partition_guessing
from .rng import derive_seed
from .target_law import (
    Direction,
    JointLaw,
    SettingsQuad,
    chsh,
    singlet_law,
    tv_continuity_bound,
    variation_distance,
)

MIN_ACCEPTED = 100
MIN_CHSH_TRIALS = 10_000

# Planar pairs with a.b = -1, -1/2, 0, 1/2, 1.
PLANAR_GRID: tuple[tuple[Direction, Direction], ...] = tuple(
    (Direction.planar(0.0), Direction.planar(theta)) for theta in (180.0, 120.0, 90.0, 60.0, 0.0)
)

# The planar pairs plus off-plane pairs, 12 in all.
SETTING_GRID: tuple[tuple[Direction, Direction], ...] = PLANAR_GRID + (
    (Direction(1, 0, 0), Direction(0, 1, 0)),
    (Direction.from_angles(30, 40), Direction.from_angles(70, 200)),
    (Direction.from_angles(60, 10), Direction.from_angles(60, 70)),
    (Direction.from_angles(100, 45), Direction.from_angles(20, 300)),
    (Direction.from_angles(150, 120), Direction.from_angles(35, 120)),
    (Direction.from_angles(80, 260), Direction.from_angles(95, 80)),
    (Direction.from_angles(45, 45), Direction.from_angles(135, 225)),
)


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else math.nan


@dataclass(frozen=True)
class EstimatedLaw:
    p: tuple[float, float, float, float]
    stderr: tuple[float, float, float, float]
    n_accepted: int

    def as_law(self) -> JointLaw:
        return JointLaw(*self.p)

    def correlation(self) -> float:
        return self.p[0] - self.p[1] - self.p[2] + self.p[3]

    def correlation_stderr(self) -> float:
        e = self.correlation()
        return math.sqrt(max(1.0 - e * e, 0.0) / self.n_accepted)

    def distance_to(self, law: JointLaw) -> float:
        return variation_distance(self.as_law(), law)

    def distance_stderr(self) -> float:
        """Conservative standard error of a variation-distance estimate."""
        return 0.5 * sum(self.stderr)


def estimate_joint(tally: Tally, min_accepted: int = MIN_ACCEPTED) -> EstimatedLaw:
    n = tally.n_accepted
    if n < min_accepted:
        raise InsufficientDataError(f"need at least {min_accepted} accepted trials", n)
    p = [c / n for c in tally.counts]
    # Close the last cell so the table sums to 1 exactly in floating point.
    p[3] = 1.0 - math.fsum(p[:3])
    return EstimatedLaw(tuple(p), tuple(_binomial_se(q, n) for q in p), n)


def success_probability(tally: Tally) -> tuple[float, float]:
    if tally.n_total < 1:
        raise ParameterError("tally has no trials")
    p = tally.n_accepted / tally.n_total
    return p, _binomial_se(p, tally.n_total)


# -- CHSH --------------------------------------------------------------------


@dataclass(frozen=True)
class ChshReport:
    model: str
    seed: int
    n_per_pair: int
    selection: dict
    quad: list[list[list[float]]]
    correlations: list[float]
    correlation_stderrs: list[float]
    n_accepted: list[int]
    value: float
    combined_stderr: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ChshReport:
        return cls(**d)


def chsh_experiment(
    model: Model,
    quad: SettingsQuad,
    n_per_pair: int,
    seed: int,
    selection: SelectionRule | None = None,
    workers: int = 1,
) -> ChshReport:
    """Estimate the four conditional correlations and combine them.

    Pair i of ``quad.pairs()`` runs on its own seed derived from ``(seed, i)``.
    """
    if n_per_pair < MIN_CHSH_TRIALS:
        raise ParameterError(f"n_per_pair must be at least {MIN_CHSH_TRIALS}")
    selection = selection or default_selection(model)
    corr, errs, nacc = [], [], []
    for i, (a, b) in enumerate(quad.pairs()):
        tally = run_experiment(model, a, b, n_per_pair, derive_seed(seed, i), selection, workers=workers)
        est = estimate_joint(tally)
        corr.append(est.correlation())
        errs.append(est.correlation_stderr())
        nacc.append(est.n_accepted)
    return ChshReport(
        model=model.name,
        seed=int(seed),
        n_per_pair=int(n_per_pair),
        selection=selection.to_dict(),
        quad=[[a.as_list(), b.as_list()] for a, b in quad.pairs()],
        correlations=corr,
        correlation_stderrs=errs,
        n_accepted=nacc,
        value=chsh(*corr),
        combined_stderr=math.sqrt(sum(e * e for e in errs)),
    )


# -- contract checks ---------------------------------------------------------


@dataclass(frozen=True)
class Clause:
    name: str
    measured: float | None
    target: float | None
    deviation: float
    stderr: float | None
    tolerance: float
    passed: bool
    vacuous: bool = False
    n_condition: int = 0
    note: str = ""


@dataclass(frozen=True)
class ContractReport:
    kind: str
    model: str
    seed: int
    n: int
    tol: float
    settings: list[list[list[float]]]
    clauses: list[Clause]
    eta_a: float | None
    eta_a_err: float | None
    eta_b: float | None
    eta_b_err: float | None
    p_none: float | None = None
    p_none_err: float | None = None
    passed: bool = field(default=False)

    def __post_init__(self):
        object.__setattr__(self, "passed", all(c.passed for c in self.clauses))

    def clause(self, name: str) -> Clause:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [c.name for c in self.clauses if not c.passed]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ContractReport:
        d = dict(d)
        d["clauses"] = [Clause(**c) for c in d["clauses"]]
        d.pop("passed", None)
        return cls(**d)


def contract_settings(model: Model) -> list[tuple[Direction, Direction]]:
    if model.domain is not None:
        sa, sb = model.domain
        return [(a, b) for a in sa for b in sb]
    return list(PLANAR_GRID)


def _worst(name, rows, tol, note="") -> Clause:
    """rows: (measured, target, stderr, n_condition) per setting; None for empty cells."""
    live = [r for r in rows if r is not None]
    if not live:
        return Clause(name, None, None, 0.0, None, tol, True, vacuous=True,
                      note=note or "conditioning event never occurred")
    measured, target, se, m = max(live, key=lambda r: abs(r[0] - r[1]))
    dev = abs(measured - target)
    return Clause(name, measured, target, dev, se, tol, dev <= tol, n_condition=m, note=note)


def _fraction(num: int, den: int):
    if den == 0:
        return None
    p = num / den
    return p, _binomial_se(p, den)


def _common_clauses(tables, settings, tol) -> list[Clause]:
    joint_rows, x_rows, y_rows = [], [], []
    for t, (a, b) in zip(tables, settings):
        n11 = int(t[1, 1].sum())
        if n11:
            est = EstimatedLaw(
                tuple(float(v) / n11 for v in t[1, 1].reshape(4)),
                tuple(_binomial_se(float(v) / n11, n11) for v in t[1, 1].reshape(4)),
                n11,
            )
            joint_rows.append((est.distance_to(singlet_law(a, b)), 0.0, est.distance_stderr(), n11))
        else:
            joint_rows.append(None)
        fx = _fraction(int(t[1, 0, 0, :].sum()), int(t[1, 0].sum()))
        x_rows.append(None if fx is None else (fx[0], 0.5, fx[1], int(t[1, 0].sum())))
        fy = _fraction(int(t[0, 1, :, 0].sum()), int(t[0, 1].sum()))
        y_rows.append(None if fy is None else (fy[0], 0.5, fy[1], int(t[0, 1].sum())))
    return [
        _worst("joint_given_both", joint_rows, tol),
        _worst("x_marginal_given_d1_e0", x_rows, tol),
        _worst("y_marginal_given_d0_e1", y_rows, tol),
    ]


def _binary_tallies(model, n, seed, settings, workers):
    if model.flavor != "binary":
        raise FlavorError("contract checks need a binary-flavor model")
    out = []
    for i, (a, b) in enumerate(settings):
        out.append(run_experiment(model, a, b, n, derive_seed(seed, i), workers=workers))
    return out


def variant2_contract_check(
    model: Model,
    n: int,
    seed: int,
    tol: float,
    settings: Sequence[tuple[Direction, Direction]] | None = None,
    workers: int = 1,
) -> ContractReport:
    """Check the full detection-efficiency contract at each setting pair.

    Clauses: singlet law given D=1=E; X uniform given D=1, E=0; Y uniform
    given D=0, E=1; |P(D,E) - P(D)P(E)| small. Nothing is asserted about X
    when D=0 or Y when E=0. Each clause reports its worst setting pair.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    settings = list(settings) if settings is not None else contract_settings(model)
    tallies = _binary_tallies(model, n, seed, settings, workers)
    tables = [t.cell_table() for t in tallies]
    clauses = _common_clauses(tables, settings, tol)

    gap_rows = []
    for t in tables:
        tot = int(t.sum())
        pd = t[1].sum() / tot
        pe = t[:, 1].sum() / tot
        pde = t[1, 1].sum() / tot
        se = _binomial_se(pde, tot) + pe * _binomial_se(pd, tot) + pd * _binomial_se(pe, tot)
        gap_rows.append((float(abs(pde - pd * pe)), 0.0, float(se), tot))
    clauses.append(_worst("independence_gap", gap_rows, tol))

    pooled = sum(tables[1:], tables[0])
    tot = int(pooled.sum())
    eta_a = float(pooled[1].sum() / tot)
    eta_b = float(pooled[:, 1].sum() / tot)
    return ContractReport(
        kind="variant2",
        model=model.name,
        seed=int(seed),
        n=int(n),
        tol=float(tol),
        settings=[[a.as_list(), b.as_list()] for a, b in settings],
        clauses=clauses,
        eta_a=eta_a,
        eta_a_err=_binomial_se(eta_a, tot),
        eta_b=eta_b,
        eta_b_err=_binomial_se(eta_b, tot),
    )


def modest_variant_check(
    model: Model,
    n: int,
    seed: int,
    tol: float,
    settings: Sequence[tuple[Direction, Direction]] | None = None,
    workers: int = 1,
) -> ContractReport:
    """The same contract, conditioned on D=1 or E=1.

    On that event the verdict pair must look like two independent
    Bernoulli(eta_A), Bernoulli(eta_B) variables conditioned away from (0, 0).
    Any law on the three remaining cells with all cells populated fits that
    form, so the product clause only bites when a cell is empty; the implied
    efficiencies are the informative output. P(D=0=E) is reported, not judged.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    settings = list(settings) if settings is not None else contract_settings(model)
    tallies = _binary_tallies(model, n, seed, settings, workers)
    tables = [t.cell_table() for t in tallies]
    clauses = _common_clauses(tables, settings, tol)

    def implied(t):
        n11, n10, n01 = (int(t[1, 1].sum()), int(t[1, 0].sum()), int(t[0, 1].sum()))
        m = n11 + n10 + n01
        if m == 0:
            return None
        q = np.array([n11, n10, n01]) / m
        ea = n11 / (n11 + n01) if n11 + n01 else 0.0
        eb = n11 / (n11 + n10) if n11 + n10 else 0.0
        z = 1.0 - (1.0 - ea) * (1.0 - eb)
        fit = np.array([ea * eb, ea * (1 - eb), (1 - ea) * eb]) / z if z > 0 else np.zeros(3)
        return q, fit, m

    rows = []
    for t in tables:
        r = implied(t)
        if r is None:
            rows.append(None)
            continue
        q, fit, m = r
        i = int(np.argmax(np.abs(q - fit)))
        rows.append((float(abs(q[i] - fit[i])), 0.0, _binomial_se(float(q[i]), m), m))
    clauses.append(_worst("product_form_gap", rows, tol,
                          note="observed vs best product-form law on {D=1 or E=1}"))

    pooled = sum(tables[1:], tables[0])
    n11, n10, n01, n00 = (int(pooled[1, 1].sum()), int(pooled[1, 0].sum()),
                          int(pooled[0, 1].sum()), int(pooled[0, 0].sum()))
    tot = n11 + n10 + n01 + n00
    eta_a = n11 / (n11 + n01) if n11 + n01 else None
    eta_b = n11 / (n11 + n10) if n11 + n10 else None
    p_none = n00 / tot
    return ContractReport(
        kind="modest",
        model=model.name,
        seed=int(seed),
        n=int(n),
        tol=float(tol),
        settings=[[a.as_list(), b.as_list()] for a, b in settings],
        clauses=clauses,
        eta_a=eta_a,
        eta_a_err=_binomial_se(eta_a, n11 + n01) if n11 + n01 else None,
        eta_b=eta_b,
        eta_b_err=_binomial_se(eta_b, n11 + n10) if n11 + n10 else None,
        p_none=p_none,
        p_none_err=_binomial_se(p_none, tot),
    )


def ch_efficiency_bound() -> float:
    """Largest symmetric efficiency at which a local model can still fake the singlet: 2/(1+sqrt 2)."""
    return 2.0 / (1.0 + math.sqrt(2.0))


def efficiency_margin(eta: float) -> dict:
    bound = ch_efficiency_bound()
    return {"eta": eta, "bound": bound, "below_bound": eta < bound, "margin": bound - eta}


# -- accuracy / success sweep ------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    k: int
    success: float
    success_err: float
    success_min: float
    accuracy_max: float
    accuracy_err: float
    discretization_max: float
    theory: float
    n: int
    settings_sample: int


def sample_setting_pairs(seed: int, count: int) -> list[tuple[Direction, Direction]]:
    rng = np.random.Generator(np.random.Philox(derive_seed(seed, 0x5E771)))
    z = rng.uniform(-1.0, 1.0, (count, 2))
    phi = rng.uniform(0.0, 2 * math.pi, (count, 2))
    r = np.sqrt(1.0 - z * z)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return [(Direction(*pts[i, 0]), Direction(*pts[i, 1])) for i in range(count)]


def accuracy_success_sweep(
    ks: Sequence[int],
    n: int,
    seed: int,
    settings_sample: int,
    at_representatives: bool = False,
    workers: int = 1,
) -> list[SweepPoint]:
    """Partition guessing over the nested partition family.

    Every k sees the same sample of random setting pairs (or, with
    ``at_representatives``, those pairs snapped to the cell representatives).
    ``accuracy_max`` is the largest distance to the target seen on the sample,
    a sampled stand-in for the supremum over all settings.
    """
    if not ks:
        raise ParameterError("sweep needs at least one k")
    if settings_sample < 1:
        raise ParameterError("settings_sample must be at least 1")
    partitions = [nested_partition(int(k)) for k in ks]
    pairs = sample_setting_pairs(seed, settings_sample)
    curve = []
    for part in partitions:
        model = partition_guessing(part)
        acc_total = trials = 0
        worst = (-1.0, 0.0)
        success_min = math.inf
        disc = 0.0
        for j, (a, b) in enumerate(pairs):
            if at_representatives:
                a, b = part.representative(a), part.representative(b)
            tally = run_experiment(model, a, b, n, derive_seed(seed, part.k, j), workers=workers)
            est = estimate_joint(tally)
            tv = est.distance_to(singlet_law(a, b))
            if tv > worst[0]:
                worst = (tv, est.distance_stderr())
            acc_total += tally.n_accepted
            trials += tally.n_total
            success_min = min(success_min, tally.n_accepted / tally.n_total)
            disc = max(disc, tv_continuity_bound(a, part.representative(a), b, part.representative(b)))
        success = acc_total / trials
        curve.append(SweepPoint(part.k, success, _binomial_se(success, trials), success_min,
                                worst[0], worst[1], disc, 1.0 / part.k**2, int(n), int(settings_sample)))
    return curve
