"""Concrete two-station protocols.

All randomness of a model comes from the shared hidden state, which the engine
builds from the per-trial uniform stream. Directions inside stations are plain
length-3 arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import Model, Station
from .errors import DomainError, FlavorError, ParameterError
from .target_law import Direction

TWO_PI = 2.0 * math.pi


def sphere_points(u_z: np.ndarray, u_phi: np.ndarray) -> np.ndarray:
    """Map two uniform columns to uniform points on the unit sphere (n, 3)."""
    z = 2.0 * u_z - 1.0
    phi = TWO_PI * u_phi
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sign(v: np.ndarray) -> np.ndarray:
    # sign(0) = +1; a measure-zero event.
    return np.where(v >= 0, 1, -1).astype(np.int8)


def _accept_all(n: int) -> np.ndarray:
    return np.ones(n, dtype=bool)


def _draw_cells(u: np.ndarray, cum: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Draw (x, y) from per-trial cumulative tables ``cum`` of shape (n, 3)."""
    cell = (u[:, None] >= cum).sum(axis=1)
    x = np.where(cell < 2, 1, -1).astype(np.int8)
    y = np.where(cell % 2 == 0, 1, -1).astype(np.int8)
    return x, y


def _cumulative(dots: np.ndarray) -> np.ndarray:
    """Cumulative singlet tables, last column omitted, for an array of a.b."""
    same = 0.25 * (1.0 - dots)
    diff = 0.25 * (1.0 + dots)
    return np.stack([same, same + diff, same + 2 * diff], axis=-1)


# -- baseline ----------------------------------------------------------------


def deterministic_sign() -> Model:
    """x = sign(a.lam), y = -sign(b.lam); never rejects.

    E[xy] = -(1 - 2*theta/pi), which saturates but cannot exceed CHSH = 2.
    """

    def sample(u):
        return {"lam": sphere_points(u[:, 0], u[:, 1])}

    def alice(z, a):
        lam = z["lam"]
        return sign(lam @ a), _accept_all(lam.shape[0])

    def bob(z, b):
        lam = z["lam"]
        return -sign(lam @ b), _accept_all(lam.shape[0])

    return Model("sign", 2, sample, Station(alice), Station(bob), always_accepts=True,
                 description="deterministic sign model, no rejection")


# -- guessing ----------------------------------------------------------------


@dataclass(frozen=True)
class FiniteGuessParams:
    setting_set_a: tuple[Direction, ...]
    setting_set_b: tuple[Direction, ...]

    def __post_init__(self):
        for name in ("setting_set_a", "setting_set_b"):
            vals = tuple(Direction.coerce(v) for v in getattr(self, name))
            if not vals:
                raise ParameterError(f"{name} must not be empty")
            if len(set(vals)) != len(vals):
                raise ParameterError(f"{name} contains duplicate settings")
            object.__setattr__(self, name, vals)


def _index_in(setting: np.ndarray, pool: np.ndarray, side: str) -> int:
    hits = np.flatnonzero(np.all(pool == setting, axis=1))
    if hits.size == 0:
        raise DomainError(f"setting {setting.tolist()} is not in the declared set for station {side}")
    return int(hits[0])


def finite_guessing(params: FiniteGuessParams) -> Model:
    """Guess both settings uniformly, pre-draw (X, Y) for the guess, accept iff right."""
    set_a = np.array([d.as_list() for d in params.setting_set_a])
    set_b = np.array([d.as_list() for d in params.setting_set_b])
    ka, kb = len(set_a), len(set_b)
    cum = _cumulative(np.clip(set_a @ set_b.T, -1.0, 1.0))

    def sample(u):
        ga = np.minimum((u[:, 0] * ka).astype(np.int64), ka - 1)
        gb = np.minimum((u[:, 1] * kb).astype(np.int64), kb - 1)
        x, y = _draw_cells(u[:, 2], cum[ga, gb])
        return {"guess_a": ga, "guess_b": gb, "x": x, "y": y}

    def alice(z, a):
        return z["x"], z["guess_a"] == _index_in(a, set_a, "A")

    def bob(z, b):
        return z["y"], z["guess_b"] == _index_in(b, set_b, "B")

    return Model(f"guess-finite[{ka}x{kb}]", 3, sample, Station(alice), Station(bob),
                 domain=(params.setting_set_a, params.setting_set_b),
                 description="uniform guesses over finite setting sets", params=params)


@dataclass(frozen=True)
class PartitionParams:
    """A partition of the sphere into ``k`` cells with one representative each.

    ``cell_of`` maps an (n, 3) array of unit vectors to integer cell indices
    and must be total on the sphere.
    """

    k: int
    cell_of: Callable[[np.ndarray], np.ndarray]
    representatives: tuple[Direction, ...]
    label: str = "custom"

    def __post_init__(self):
        if self.k < 1 or len(self.representatives) != self.k:
            raise ParameterError("need exactly one representative per cell")
        reps = np.array([r.as_list() for r in self.representatives])
        cells = np.asarray(self.cell_of(reps))
        if not np.array_equal(cells, np.arange(self.k)):
            raise ParameterError("each representative must lie in its own cell")

    def cell(self, d: Direction | np.ndarray) -> int:
        v = d.as_array() if isinstance(d, Direction) else np.asarray(d, dtype=float)
        return int(self.cell_of(v.reshape(1, 3))[0])

    def representative(self, d: Direction | np.ndarray) -> Direction:
        return self.representatives[self.cell(d)]


def _mean_sqrt_one_minus_z2(z0: float, z1: float) -> float:
    def prim(z):
        return 0.5 * (z * math.sqrt(max(0.0, 1.0 - z * z)) + math.asin(z))

    return (prim(z1) - prim(z0)) / (z1 - z0)


def band_sector_partition(bands: int, sectors: int) -> PartitionParams:
    """Equal-area z-bands times equal azimuth sectors.

    Cells are numbered ``band * sectors + sector`` with bands counted upward
    from z = -1 and sectors counter-clockwise from +x. Boundary points go to
    the upper band / next sector. Representatives are the normalized
    area-centroids of the cells.
    """
    if bands < 1 or sectors < 1 or bands * sectors < 2:
        raise ParameterError("a partition needs at least two cells")

    def cell_of(v):
        v = np.asarray(v, dtype=float).reshape(-1, 3)
        band = np.clip(np.floor((v[:, 2] + 1.0) * 0.5 * bands), 0, bands - 1).astype(np.int64)
        phi = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
        sector = np.clip(np.floor(phi / TWO_PI * sectors), 0, sectors - 1).astype(np.int64)
        return band * sectors + sector

    reps = []
    for i in range(bands):
        z0, z1 = -1.0 + 2.0 * i / bands, -1.0 + 2.0 * (i + 1) / bands
        rho = _mean_sqrt_one_minus_z2(z0, z1)
        zc = 0.5 * (z0 + z1)
        for j in range(sectors):
            if sectors == 1:
                cx = cy = 0.0
            else:
                p0, p1 = TWO_PI * j / sectors, TWO_PI * (j + 1) / sectors
                cx = rho * (math.sin(p1) - math.sin(p0)) / (p1 - p0)
                cy = rho * (math.cos(p0) - math.cos(p1)) / (p1 - p0)
            norm = math.sqrt(cx * cx + cy * cy + zc * zc)
            reps.append(Direction(cx / norm, cy / norm, zc / norm))
    return PartitionParams(bands * sectors, cell_of, tuple(reps), label=f"bands{bands}x{sectors}")


def octant_partition() -> PartitionParams:
    """The eight octants; representatives (+-1, +-1, +-1)/sqrt(3)."""
    p = band_sector_partition(2, 4)
    return PartitionParams(8, p.cell_of, p.representatives, label="octants")


# Each entry refines the previous one, so the family is nested.
NESTED_SHAPES = {
    2: (2, 1), 4: (2, 2), 8: (2, 4), 16: (4, 4), 32: (4, 8),
    64: (8, 8), 128: (8, 16), 256: (16, 16), 512: (16, 32), 1024: (32, 32),
}


def nested_partition(k: int) -> PartitionParams:
    if k not in NESTED_SHAPES:
        raise ParameterError(f"no registered partition with k={k}; choose from {sorted(NESTED_SHAPES)}")
    if k == 8:
        return octant_partition()
    return band_sector_partition(*NESTED_SHAPES[k])


def partition_guessing(params: PartitionParams | None = None) -> Model:
    """Guess a cell per side, pre-draw (X, Y) for the cell representatives."""
    params = params or octant_partition()
    k = params.k
    reps = np.array([r.as_list() for r in params.representatives])
    cum = _cumulative(np.clip(reps @ reps.T, -1.0, 1.0))

    def sample(u):
        ga = np.minimum((u[:, 0] * k).astype(np.int64), k - 1)
        gb = np.minimum((u[:, 1] * k).astype(np.int64), k - 1)
        x, y = _draw_cells(u[:, 2], cum[ga, gb])
        return {"guess_a": ga, "guess_b": gb, "x": x, "y": y}

    def alice(z, a):
        return z["x"], z["guess_a"] == params.cell(a)

    def bob(z, b):
        return z["y"], z["guess_b"] == params.cell(b)

    return Model(f"guess-partition[{params.label}]", 3, sample, Station(alice), Station(bob),
                 description=f"cell guessing over a {k}-cell partition", params=params)


# -- detection models --------------------------------------------------------


def _filtered_state(u):
    return {"lam": sphere_points(u[:, 0], u[:, 1]), "u": u[:, 2]}


def one_sided_detection() -> Model:
    """A always accepts with x = -sign(a.lam); B keeps y = sign(b.lam) with probability |b.lam|.

    Acceptance is 1/2 for every setting pair and the accepted pairs follow the
    singlet law exactly.
    """

    def alice(z, a):
        lam = z["lam"]
        return -sign(lam @ a), _accept_all(lam.shape[0])

    def bob(z, b):
        proj = z["lam"] @ b
        return sign(proj), z["u"] < np.abs(proj)

    return Model("one-sided", 3, _filtered_state, Station(alice), Station(bob),
                 description="B filters with probability |b.lam|")


def asymmetric_variant2() -> Model:
    """The one-sided model, read as a detection-efficiency model with eta_A=1, eta_B=1/2."""
    base = one_sided_detection()
    return Model("variant2-asym", base.n_uniforms, base.sampler, base.station_a, base.station_b,
                 description="one-sided filter; D always 1, E ~ Bernoulli(1/2) independent of D")


def role_mixture_symmetric() -> Model:
    """A shared fair coin picks which station filters.

    Each side accepts with probability 3/4, both with probability 1/2, so D and
    E are positively correlated (1/2 > 9/16). The pair (D, E) never equals
    (0, 0).
    """

    def sample(u):
        state = _filtered_state(u)
        state["a_filters"] = u[:, 3] >= 0.5
        return state

    def alice(z, a):
        proj = z["lam"] @ a
        return -sign(proj), ~z["a_filters"] | (z["u"] < np.abs(proj))

    def bob(z, b):
        proj = z["lam"] @ b
        return sign(proj), z["a_filters"] | (z["u"] < np.abs(proj))

    return Model("role-mixture", 4, sample, Station(alice), Station(bob),
                 description="fair coin chooses the filtering side")


# -- coincidence embedding ---------------------------------------------------


@dataclass(frozen=True)
class CoincidenceParams:
    inner: Model
    c: float = 1.0
    spread: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise ParameterError(f"window c must be positive, got {self.c}")
        if not (math.isfinite(self.spread) and self.spread > 0):
            raise ParameterError(f"spread must be positive, got {self.spread}")


def coincidence_embedding(params: CoincidenceParams) -> Model:
    """Turn accept/reject verdicts into times.

    Accepting stations report time 0. A rejecting A reports a time in
    [2c, 2c + spread], a rejecting B one in [-2c - spread, -2c], so the window
    |S - T| < c keeps exactly the trials the inner model accepted on both sides.
    """
    inner = params.inner
    if inner.flavor != "binary":
        raise FlavorError("only binary-flavor models can be embedded")
    m = inner.n_uniforms
    c, spread = params.c, params.spread

    def sample(u):
        state = {f"inner.{k}": v for k, v in inner.sampler(u[:, :m]).items()}
        state["delay_a"] = u[:, m]
        state["delay_b"] = u[:, m + 1]
        return state

    def _inner(z):
        return {k[6:]: v for k, v in z.items() if k.startswith("inner.")}

    def alice(z, a):
        x, d = inner.station_a.respond(_inner(z), a)
        return x, np.where(d, 0.0, 2.0 * c + spread * z["delay_a"])

    def bob(z, b):
        y, e = inner.station_b.respond(_inner(z), b)
        return y, np.where(e, 0.0, -2.0 * c - spread * z["delay_b"])

    return Model(f"coincidence({inner.name})", m + 2, sample, Station(alice, "time"), Station(bob, "time"),
                 domain=inner.domain, always_accepts=inner.always_accepts,
                 description=f"time embedding of {inner.name} for window c={c}", params=params)


# -- negative controls -------------------------------------------------------


def leaky_control() -> Model:
    """Deliberately broken: station A reads B's setting through shared state.

    The engine evaluates station B first, so A sees the current b.
    """
    channel: dict[str, np.ndarray] = {}

    def alice(z, a):
        lam = z["lam"]
        b = channel.get("b", a)
        return -sign(lam @ (a + b)), _accept_all(lam.shape[0])

    def bob(z, b):
        channel["b"] = np.array(b)
        lam = z["lam"]
        return sign(lam @ b), _accept_all(lam.shape[0])

    return Model("control-leaky", 2, lambda u: {"lam": sphere_points(u[:, 0], u[:, 1])},
                 Station(alice), Station(bob), description="negative control: signalling double")


def biased_marginal_control() -> Model:
    """Deliberately broken: A outputs +1 whenever U >= 3/4.

    Accepted pairs (U < 3/4 |b.lam|) still follow the singlet law, but X on
    {D=1, E=0} has P(+1) = 0.7 instead of 1/2.
    """

    def alice(z, a):
        lam = z["lam"]
        x = np.where(z["u"] >= 0.75, 1, -sign(lam @ a)).astype(np.int8)
        return x, _accept_all(lam.shape[0])

    def bob(z, b):
        proj = z["lam"] @ b
        return sign(proj), z["u"] < 0.75 * np.abs(proj)

    return Model("control-biased", 3, _filtered_state, Station(alice), Station(bob),
                 description="negative control: broken conditional marginal")


# -- registry ----------------------------------------------------------------


def _finite_from_params(p: dict) -> Model:
    if "setting_set_a" in p or "setting_set_b" in p:
        from .config import parse_direction

        sa = [parse_direction(v) for v in p.get("setting_set_a", [])]
        sb = [parse_direction(v) for v in p.get("setting_set_b", [])]
        return finite_guessing(FiniteGuessParams(tuple(sa), tuple(sb)))
    k = int(p.get("k", 2))
    return finite_guessing(planar_setting_sets(k))


def planar_setting_sets(k: int) -> FiniteGuessParams:
    """k planar settings per side, 180/k degrees apart, B offset by half a step.

    For k = 2 this is the standard CHSH quad (0, 90; 45, 135).
    """
    if k < 1:
        raise ParameterError("k must be at least 1")
    step = 180.0 / k
    sa = tuple(Direction.planar(i * step) for i in range(k))
    sb = tuple(Direction.planar(i * step + step / 2) for i in range(k))
    return FiniteGuessParams(sa, sb)


def _partition_from_params(p: dict) -> Model:
    if "bands" in p or "sectors" in p:
        return partition_guessing(band_sector_partition(int(p.get("bands", 1)), int(p.get("sectors", 1))))
    return partition_guessing(nested_partition(int(p.get("k", 8))))


def _coincidence_from_params(p: dict) -> Model:
    inner = p.get("inner")
    if inner is None:
        raise ParameterError("coincidence model needs an 'inner' model")
    inner_model = build_model(inner) if isinstance(inner, (dict, str)) else inner
    return coincidence_embedding(CoincidenceParams(inner_model, float(p.get("c", 1.0)), float(p.get("spread", 1.0))))


REGISTRY: dict[str, Callable[[dict], Model]] = {
    "sign": lambda p: deterministic_sign(),
    "guess-finite": _finite_from_params,
    "guess-partition": _partition_from_params,
    "one-sided": lambda p: one_sided_detection(),
    "role-mixture": lambda p: role_mixture_symmetric(),
    "variant2-asym": lambda p: asymmetric_variant2(),
    "coincidence": _coincidence_from_params,
}

CONTROLS: dict[str, Callable[[dict], Model]] = {
    "control-leaky": lambda p: leaky_control(),
    "control-biased": lambda p: biased_marginal_control(),
}

_CALL = re.compile(r"^\s*([\w-]+)\s*\((.*)\)\s*$")


def build_model(spec: str | dict, params: dict | None = None) -> Model:
    """Build a model from a registry name or ``{"name": ..., "params": {...}}``.

    ``"coincidence(inner=one-sided)"`` style strings are accepted too.
    """
    if isinstance(spec, dict):
        return build_model(spec["name"], {**spec.get("params", {}), **(params or {})})
    params = dict(params or {})
    m = _CALL.match(spec)
    if m:
        spec = m.group(1)
        for item in filter(None, (s.strip() for s in _split_args(m.group(2)))):
            key, _, value = item.partition("=")
            params.setdefault(key.strip(), value.strip())
    factory = REGISTRY.get(spec) or CONTROLS.get(spec)
    if factory is None:
        raise ParameterError(f"unknown model {spec!r}; known: {sorted(REGISTRY) + sorted(CONTROLS)}")
    return factory(params)


def _split_args(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def shipped_models() -> list[Model]:
    """One instance of every registered model family, with default parameters."""
    return [
        deterministic_sign(),
        finite_guessing(planar_setting_sets(2)),
        partition_guessing(octant_partition()),
        one_sided_detection(),
        role_mixture_symmetric(),
        asymmetric_variant2(),
        coincidence_embedding(CoincidenceParams(one_sided_detection(), 1.0, 1.0)),
    ]

