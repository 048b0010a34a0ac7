"""Two-station protocol engine.

A :class:`Model` is a hidden-state sampler plus two stations. The engine draws
the shared state Z for each trial from the counter-based stream at
``(seed, trial_index)``, hands the whole of Z to both stations, and gives each
station only its own setting. Stations are evaluated batch-wise: a call sees
a read-only view of Z for a contiguous block of trials and one setting.

Selection (binary accept/reject or coincidence window) is applied afterwards
to the recorded verdicts, so a stored :class:`TrialBatch` can be re-selected
under any number of rules without re-simulation.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Literal, Mapping, Union

import numpy as np

from .errors import EmptyExperimentError, FlavorError, ParameterError, ProtocolError
from .rng import trial_uniforms
from .target_law import Direction

Flavor = Literal["binary", "time"]
HiddenState = Mapping[str, np.ndarray]
StationFn = Callable[[HiddenState, np.ndarray], "tuple[np.ndarray, np.ndarray]"]

DEFAULT_CHUNK = 1 << 15


@dataclass(frozen=True)
class BinaryVerdict:
    accept: bool


@dataclass(frozen=True)
class TimeVerdict:
    value: float


Verdict = Union[BinaryVerdict, TimeVerdict]


@dataclass(frozen=True)
class Station:
    """One side of the protocol: ``respond(z, setting) -> (outcomes, verdicts)``.

    Outcomes are +/-1 integer arrays; verdicts are booleans (binary flavor) or
    float times (time flavor).
    """

    respond: StationFn
    flavor: Flavor = "binary"


@dataclass(frozen=True)
class Model:
    name: str
    n_uniforms: int
    sampler: Callable[[np.ndarray], dict[str, np.ndarray]]
    station_a: Station
    station_b: Station
    # Finite setting sets the model is defined on, or None for the whole sphere.
    domain: tuple[tuple[Direction, ...], tuple[Direction, ...]] | None = None
    always_accepts: bool = False
    description: str = ""
    params: object = None

    @property
    def flavor(self) -> Flavor:
        if self.station_a.flavor != self.station_b.flavor:
            raise FlavorError(
                f"model {self.name!r} mixes verdict flavors "
                f"{self.station_a.flavor!r} and {self.station_b.flavor!r}"
            )
        return self.station_a.flavor

    def hidden_state(self, seed: int, indices: np.ndarray) -> HiddenState:
        raw = self.sampler(trial_uniforms(seed, indices, self.n_uniforms))
        frozen = {}
        for key, arr in raw.items():
            arr = np.asarray(arr)
            arr.setflags(write=False)
            frozen[key] = arr
        return MappingProxyType(frozen)


# -- selection rules ---------------------------------------------------------


def select_binary(verdict_a: Verdict, verdict_b: Verdict) -> bool:
    if not (isinstance(verdict_a, BinaryVerdict) and isinstance(verdict_b, BinaryVerdict)):
        raise FlavorError("binary selection needs two binary verdicts")
    return verdict_a.accept and verdict_b.accept


def select_coincidence(verdict_a: Verdict, verdict_b: Verdict, c: float) -> bool:
    if not (isinstance(verdict_a, TimeVerdict) and isinstance(verdict_b, TimeVerdict)):
        raise FlavorError("coincidence selection needs two time verdicts")
    if not c > 0:
        raise ParameterError(f"window c must be positive, got {c}")
    return abs(verdict_a.value - verdict_b.value) < c


@dataclass(frozen=True)
class BinarySelection:
    flavor: Flavor = field(default="binary", init=False)

    def accept(self, va: np.ndarray, vb: np.ndarray) -> np.ndarray:
        if va.dtype != np.bool_ or vb.dtype != np.bool_:
            raise FlavorError("binary selection needs binary verdicts")
        return va & vb

    def to_dict(self) -> dict:
        return {"rule": "binary"}


@dataclass(frozen=True)
class CoincidenceWindow:
    c: float
    flavor: Flavor = field(default="time", init=False)

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise ParameterError(f"window c must be positive, got {self.c}")

    def accept(self, va: np.ndarray, vb: np.ndarray) -> np.ndarray:
        if va.dtype == np.bool_ or vb.dtype == np.bool_:
            raise FlavorError("coincidence selection needs time verdicts")
        return np.abs(va - vb) < self.c

    def to_dict(self) -> dict:
        return {"rule": "window", "c": self.c}


SelectionRule = Union[BinarySelection, CoincidenceWindow]


def default_selection(model: Model) -> SelectionRule:
    if model.flavor == "binary":
        return BinarySelection()
    raise ParameterError(f"model {model.name!r} has time verdicts; a window c is required")


# -- records and tallies -----------------------------------------------------


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    a: Direction
    b: Direction
    x: int
    y: int
    verdict_a: Verdict
    verdict_b: Verdict
    accepted: bool


@dataclass
class TrialBatch:
    """Raw per-trial arrays for trial indices ``start .. start+len-1``."""

    start: int
    a: Direction
    b: Direction
    x: np.ndarray
    y: np.ndarray
    verdict_a: np.ndarray
    verdict_b: np.ndarray
    flavor: Flavor

    def __len__(self) -> int:
        return int(self.x.size)

    def record(self, i: int, selection: SelectionRule) -> TrialRecord:
        wrap = BinaryVerdict if self.flavor == "binary" else TimeVerdict
        va = wrap(self.verdict_a[i].item())
        vb = wrap(self.verdict_b[i].item())
        accepted = bool(selection.accept(self.verdict_a[i : i + 1], self.verdict_b[i : i + 1])[0])
        return TrialRecord(self.start + i, self.a, self.b, int(self.x[i]), int(self.y[i]), va, vb, accepted)


@dataclass(frozen=True)
class Tally:
    n_total: int
    n_accepted: int
    counts: tuple[int, int, int, int]
    # Binary flavor only: verdict marginals and the full (d, e, x, y) table,
    # flattened with index 8*d + 4*e + 2*(x<0) + (y<0).
    n_d1: int | None = None
    n_e1: int | None = None
    n_d1e1: int | None = None
    cells: tuple[int, ...] | None = None

    def __post_init__(self):
        if sum(self.counts) != self.n_accepted:
            raise ValueError("accepted counts do not add up")
        if not 0 <= self.n_accepted <= self.n_total:
            raise ValueError("n_accepted out of range")

    def __add__(self, other: Tally) -> Tally:
        def add(u, v):
            return None if u is None or v is None else u + v

        cells = None
        if self.cells is not None and other.cells is not None:
            cells = tuple(p + q for p, q in zip(self.cells, other.cells))
        return Tally(
            self.n_total + other.n_total,
            self.n_accepted + other.n_accepted,
            tuple(p + q for p, q in zip(self.counts, other.counts)),
            add(self.n_d1, other.n_d1),
            add(self.n_e1, other.n_e1),
            add(self.n_d1e1, other.n_d1e1),
            cells,
        )

    def cell_table(self) -> np.ndarray:
        """Counts indexed ``[d, e, x_is_minus, y_is_minus]``."""
        if self.cells is None:
            raise FlavorError("verdict table is only kept for binary-flavor runs")
        return np.array(self.cells, dtype=np.int64).reshape(2, 2, 2, 2)

    def to_dict(self) -> dict:
        out = {"n_total": self.n_total, "n_accepted": self.n_accepted, "counts": list(self.counts)}
        if self.cells is not None:
            out.update(n_d1=self.n_d1, n_e1=self.n_e1, n_d1e1=self.n_d1e1, cells=list(self.cells))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> Tally:
        cells = d.get("cells")
        return cls(
            d["n_total"],
            d["n_accepted"],
            tuple(d["counts"]),
            d.get("n_d1"),
            d.get("n_e1"),
            d.get("n_d1e1"),
            tuple(cells) if cells is not None else None,
        )


def tally_batch(batch: TrialBatch, selection: SelectionRule) -> Tally:
    if selection.flavor != batch.flavor:
        raise FlavorError(f"{selection.flavor} selection applied to {batch.flavor} verdicts")
    acc = selection.accept(batch.verdict_a, batch.verdict_b)
    code = 2 * (batch.x < 0) + (batch.y < 0)
    counts = np.bincount(code[acc], minlength=4)
    n = len(batch)
    if batch.flavor != "binary":
        return Tally(n, int(acc.sum()), tuple(int(c) for c in counts))
    d, e = batch.verdict_a, batch.verdict_b
    full = np.bincount(8 * d + 4 * e + code, minlength=16)
    return Tally(
        n,
        int(acc.sum()),
        tuple(int(c) for c in counts),
        int(d.sum()),
        int(e.sum()),
        int((d & e).sum()),
        tuple(int(c) for c in full),
    )


# -- execution ---------------------------------------------------------------


def _check_outputs(name: str, side: str, out, n: int, flavor: Flavor):
    outcome, verdict = out
    outcome = np.asarray(outcome)
    verdict = np.asarray(verdict)
    if outcome.shape != (n,) or verdict.shape != (n,):
        raise ProtocolError(f"model {name!r} station {side} returned wrong shapes")
    if not np.all((outcome == 1) | (outcome == -1)):
        raise ProtocolError(f"model {name!r} station {side} produced outcomes outside {{-1,+1}}")
    if flavor == "binary":
        if verdict.dtype != np.bool_:
            raise FlavorError(f"model {name!r} station {side} declared binary verdicts")
    else:
        verdict = verdict.astype(np.float64)
    return outcome.astype(np.int8), verdict


def simulate(model: Model, a, b, seed: int, start: int, stop: int) -> TrialBatch:
    """Run trials ``start .. stop-1`` and return their raw records."""
    flavor = model.flavor
    a, b = Direction.coerce(a), Direction.coerce(b)
    indices = np.arange(start, stop, dtype=np.uint64)
    z = model.hidden_state(seed, indices)
    n = indices.size
    y, vb = _check_outputs(model.name, "B", model.station_b.respond(z, b.as_array()), n, flavor)
    x, va = _check_outputs(model.name, "A", model.station_a.respond(z, a.as_array()), n, flavor)
    return TrialBatch(int(start), a, b, x, y, va, vb, flavor)


def run_trial(model: Model, a, b, seed: int, trial_index: int, selection: SelectionRule | None = None) -> TrialRecord:
    selection = selection or default_selection(model)
    batch = simulate(model, a, b, seed, trial_index, trial_index + 1)
    return batch.record(0, selection)


def _chunks(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(s, min(n, s + chunk)) for s in range(0, n, chunk)]


def run_experiment(
    model: Model,
    a,
    b,
    n: int,
    seed: int,
    selection: SelectionRule | None = None,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> Tally:
    """Aggregate trials ``0 .. n-1``. The tally does not depend on ``workers``."""
    if n < 1:
        raise EmptyExperimentError("an experiment needs at least one trial")
    selection = selection or default_selection(model)
    if selection.flavor != model.flavor:
        raise FlavorError(f"{selection.flavor} selection cannot be applied to model {model.name!r}")

    def one(span):
        return tally_batch(simulate(model, a, b, seed, *span), selection)

    spans = _chunks(n, chunk_size)
    if workers <= 1 or len(spans) == 1:
        parts = [one(s) for s in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, spans))
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def locality_audit(
    model: Model,
    n: int,
    seed: int,
    a,
    b1,
    b2,
    *,
    a1=None,
    a2=None,
    b=None,
    chunk_size: int = DEFAULT_CHUNK,
) -> bool:
    """Replay check that each station ignores the other side's setting.

    Station A's outcomes and verdicts under (a, b1) must equal those under
    (a, b2) trial by trial. Station B is checked the same way under (a1, b)
    and (a2, b), which default to (b1, a) and (b2, a).
    """
    a, b1, b2 = Direction.coerce(a), Direction.coerce(b1), Direction.coerce(b2)
    a1 = b1 if a1 is None else Direction.coerce(a1)
    a2 = b2 if a2 is None else Direction.coerce(a2)
    b = a if b is None else Direction.coerce(b)
    if b1 == b2 or a1 == a2:
        raise ParameterError("locality audit needs two different settings")
    for start, stop in _chunks(n, chunk_size):
        r1 = simulate(model, a, b1, seed, start, stop)
        r2 = simulate(model, a, b2, seed, start, stop)
        if not (np.array_equal(r1.x, r2.x) and np.array_equal(r1.verdict_a, r2.verdict_a)):
            return False
        s1 = simulate(model, a1, b, seed, start, stop)
        s2 = simulate(model, a2, b, seed, start, stop)
        if not (np.array_equal(s1.y, s2.y) and np.array_equal(s1.verdict_b, s2.verdict_b)):
            return False
    return True


# -- trial dumps -------------------------------------------------------------

CSV_HEADER = ("trial", "ax", "ay", "az", "bx", "by", "bz", "x", "y", "va", "vb", "accepted")


def _fmt_verdict(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return repr(float(v))


def write_trials_csv(batches, selection: SelectionRule, stream: io.TextIOBase) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for batch in batches:
        acc = selection.accept(batch.verdict_a, batch.verdict_b)
        a = [repr(v) for v in batch.a.as_list()]
        b = [repr(v) for v in batch.b.as_list()]
        for i in range(len(batch)):
            writer.writerow(
                [batch.start + i, *a, *b, int(batch.x[i]), int(batch.y[i]),
                 _fmt_verdict(batch.verdict_a[i]), _fmt_verdict(batch.verdict_b[i]), int(acc[i])]
            )


def iter_batches(model: Model, a, b, n: int, seed: int, chunk_size: int = DEFAULT_CHUNK):
    for start, stop in _chunks(n, chunk_size):
        yield simulate(model, a, b, seed, start, stop)

