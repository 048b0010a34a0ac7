"""Exit criteria, one test per criterion, at the tolerances fixed for release."""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from lhvsim.analysis import (
    PLANAR_GRID,
    accuracy_success_sweep,
    ch_efficiency_bound,
    chsh_experiment,
    efficiency_margin,
    estimate_joint,
    success_probability,
    variant2_contract_check,
)
from lhvsim.engine import BinarySelection, CoincidenceWindow, locality_audit, run_experiment, simulate
from lhvsim.models import (
    CoincidenceParams,
    asymmetric_variant2,
    coincidence_embedding,
    deterministic_sign,
    finite_guessing,
    leaky_control,
    octant_partition,
    one_sided_detection,
    partition_guessing,
    planar_setting_sets,
    role_mixture_symmetric,
)
from lhvsim.target_law import Direction, SettingsQuad, marginal, singlet_correlation, singlet_law

ROOT = Path(__file__).resolve().parents[1]
N = 1_000_000
SQRT8 = 2 * math.sqrt(2)


def test_c01_singlet_law_exact(criterion):
    a, b = Direction.planar(0), Direction.planar(60)
    law = singlet_law(a, b)
    errs = [abs(p - q) for p, q in zip(law.as_tuple(), (0.125, 0.375, 0.375, 0.125))]
    errs += [abs(marginal(law, "A") - 0.5), abs(marginal(law, "B") - 0.5)]
    rng = np.random.default_rng(1)
    for _ in range(200):
        u, v = rng.normal(size=(2, 3))
        u, v = Direction(*(u / np.linalg.norm(u))), Direction(*(v / np.linalg.norm(v)))
        errs.append(abs(singlet_law(u, v).correlation() - singlet_correlation(u, v)))
        errs.append(abs(singlet_correlation(u, v) + float(u.as_array() @ v.as_array())))
    worst = max(errs)
    criterion(1, "singlet law, marginals, correlation", worst <= 1e-12, f"max error {worst:.2e} <= 1e-12")


def test_c02_guessing_k2(criterion):
    params = planar_setting_sets(2)
    a, b = params.setting_set_a[0], params.setting_set_b[0]
    tally = run_experiment(finite_guessing(params), a, b, N, 202)
    p, _ = success_probability(tally)
    tv = estimate_joint(tally).distance_to(singlet_law(a, b))
    ok = abs(p - 0.25) <= 0.002 and tv < 0.01
    criterion(2, "finite guessing k=2", ok, f"acceptance {p:.5f} (0.25 +- 0.002), distance {tv:.5f} < 0.01")


def test_c03_inverse_square_acceptance(criterion):
    params = planar_setting_sets(3)
    t3 = run_experiment(finite_guessing(params), params.setting_set_a[2], params.setting_set_b[1], N, 303)
    p3, _ = success_probability(t3)
    a, b = Direction.from_angles(35, 80), Direction.from_angles(110, 300)
    t8 = run_experiment(partition_guessing(octant_partition()), a, b, 10 * N, 308)
    p8, _ = success_probability(t8)
    ok = abs(p3 - 1 / 9) <= 0.002 and abs(p8 - 1 / 64) <= 5e-4
    criterion(3, "guessing k=3 and octant partition", ok,
              f"k=3 {p3:.5f} (1/9 +- 0.002), k=8 {p8:.6f} (1/64 +- 5e-4)")


def test_c04_one_sided_uniform_half(criterion):
    rows, ok = [], True
    for i, (a, b) in enumerate(PLANAR_GRID):
        tally = run_experiment(one_sided_detection(), a, b, N, 400 + i)
        p, _ = success_probability(tally)
        e = estimate_joint(tally).correlation()
        target = singlet_correlation(a, b)
        ok &= abs(p - 0.5) <= 0.0015 and abs(e - target) <= 0.005
        rows.append(f"a.b={a.dot(b):+.1f}: acc {p:.4f} corr {e:+.4f}")
    criterion(4, "one-sided model at five settings", ok, "; ".join(rows))


def test_c05_chsh(criterion, all_models):
    quad = SettingsQuad.planar()
    det = chsh_experiment(one_sided_detection(), quad, N, 501)
    base = chsh_experiment(deterministic_sign(), quad, N, 502)
    ceiling = []
    for i, m in enumerate(all_models):
        if not m.always_accepts:
            continue
        sel = CoincidenceWindow(m.params.c) if m.flavor == "time" else BinarySelection()
        rep = chsh_experiment(m, quad, N, 510 + i, sel)
        ceiling.append((m.name, rep.value, rep.value <= 2 + 4 * rep.combined_stderr))
    ok = abs(det.value - SQRT8) <= 0.01 and abs(base.value - 2.0) <= 0.01 and all(c[2] for c in ceiling)
    criterion(5, "CHSH reproduction and local ceiling", ok,
              f"one-sided {det.value:.4f} (2.8284 +- 0.01), sign {base.value:.4f} (2 +- 0.01), "
              f"always-accept models {[(n, round(v, 4)) for n, v, _ in ceiling]} <= 2 + 4 sigma")


def test_c06_coincidence_containment(criterion):
    inner = one_sided_detection()
    a, b = Direction.planar(0), Direction.planar(60)
    ok, checked = True, 0
    for seed in (1, 99, 2**40 + 3):
        for c in (1e-9, 0.01, 1.0, 7.5, 1e6):
            outer = coincidence_embedding(CoincidenceParams(inner, c=c, spread=1.0))
            bi = simulate(inner, a, b, seed, 0, 100_000)
            bo = simulate(outer, a, b, seed, 0, 100_000)
            same_set = np.array_equal(BinarySelection().accept(bi.verdict_a, bi.verdict_b),
                                      CoincidenceWindow(c).accept(bo.verdict_a, bo.verdict_b))
            ti = run_experiment(inner, a, b, 200_000, seed)
            to = run_experiment(outer, a, b, 200_000, seed, CoincidenceWindow(c))
            same_stats = ti.counts == to.counts and estimate_joint(ti) == estimate_joint(to)
            ok &= same_set and same_stats
            checked += 1
    criterion(6, "coincidence window contains binary selection", ok,
              f"{checked} (seed, c) combinations: accepted sets and conditional statistics identical")


def test_c07_variant2_contract(criterion):
    asym = variant2_contract_check(asymmetric_variant2(), N, 701, 0.01)
    mix = variant2_contract_check(role_mixture_symmetric(), N, 702, 0.01)
    gap = mix.clause("independence_gap").measured
    ok = (asym.passed and asym.eta_a == 1.0 and abs(asym.eta_b - 0.5) <= 0.0015
          and mix.failed() == ["independence_gap"] and abs(gap - 0.0625) <= 0.002)
    criterion(7, "variant-2 contract checker", ok,
              f"asym passed={asym.passed} eta_A={asym.eta_a} eta_B={asym.eta_b:.5f}; "
              f"role-mixture failed={mix.failed()} gap={gap:.5f} (0.0625 +- 0.002)")


def test_c08_efficiency_bound(criterion):
    bound = ch_efficiency_bound()
    m = efficiency_margin(2 / 3)
    ok = abs(bound - 0.8284271) <= 1e-6 and m["below_bound"]
    criterion(8, "Clauser-Horne efficiency bound", ok,
              f"bound {bound:.7f}, 2/3 below bound with margin {m['margin']:.4f}")


def _cli(args, out):
    proc = subprocess.run([sys.executable, "-m", "lhvsim", *args, "--out", str(out)],
                          capture_output=True, text=True, cwd=ROOT)
    return proc.returncode, out.read_bytes() if out.exists() else b""


def test_c09_locality_and_replay(criterion, all_models, tmp_path):
    audits = []
    for m in all_models:
        if m.domain is not None:
            (a1, a2), (b1, b2) = m.domain[0][:2], m.domain[1][:2]
            audits.append(locality_audit(m, 10_000, 9, a1, b1, b2, a1=a1, a2=a2, b=b1))
        else:
            audits.append(locality_audit(m, 10_000, 9, Direction.planar(0), Direction.planar(45),
                                         Direction.planar(225)))
    leak = locality_audit(leaky_control(), 10_000, 9, Direction.planar(0), Direction.planar(45),
                          Direction.planar(225))

    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps({"schema": "lhvsim/scenario-v1", "model": "guess-partition",
                                 "sweep": {"ks": [2, 8], "sample": 3}, "trials": 50_000, "seed": 3}))
    commands = [
        ("simulate", ROOT / "scenarios/simulate_one_sided.json"),
        ("chsh", ROOT / "scenarios/chsh_coincidence.json"),
        ("contract", ROOT / "scenarios/contract_role_mixture.json"),
        ("sweep", sweep),
        ("audit-locality", ROOT / "scenarios/audit_one_sided.json"),
    ]
    replay = []
    for cmd, cfg in commands:
        trials = [] if cmd in ("sweep", "audit-locality") else ["--trials", "60000"]
        runs = [_cli([cmd, "--config", str(cfg), *trials, "--workers", w], tmp_path / f"{cmd}-{i}.json")
                for i, w in enumerate(("1", "1", "8"))]
        replay.append(len({r for r in runs}) == 1 and runs[0][1] != b"")
    ok = all(audits) and not leak and all(replay)
    criterion(9, "locality audit and byte-identical replay", ok,
              f"audits {sum(audits)}/{len(audits)} pass, leaky double caught={not leak}, "
              f"replay identical for {[c for (c, _), r in zip(commands, replay) if r]}")


def test_c10_accuracy_success_sweep(criterion):
    curve = accuracy_success_sweep([2, 4, 8, 16, 32], 500_000, 1010, 12)
    success_ok = all(abs(p.success - p.theory) <= 3 * p.success_err for p in curve)
    mono_ok = all(
        q.accuracy_max <= p.accuracy_max + 3 * math.hypot(p.accuracy_err, q.accuracy_err)
        for p, q in zip(curve, curve[1:])
    )
    rows = ", ".join(f"k={p.k}: succ {p.success:.5f} (1/k^2 {p.theory:.5f}) acc {p.accuracy_max:.3f}" for p in curve)
    criterion(10, "accuracy/success sweep over nested partitions", success_ok and mono_ok, rows)
