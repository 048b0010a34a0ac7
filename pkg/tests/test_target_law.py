import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lhvsim.errors import InvalidDirectionError, RangeError
from lhvsim.target_law import (
    Direction,
    JointLaw,
    SettingsQuad,
    chsh,
    law_from_dot,
    marginal,
    random_directions,
    singlet_correlation,
    singlet_law,
    tv_continuity_bound,
    variation_distance,
)

Z = Direction(0, 0, 1)


def with_dot(d):
    """Direction whose inner product with +z is d."""
    return Direction(math.sqrt(max(0.0, 1 - d * d)), 0.0, d)


unit_vectors = st.tuples(
    st.floats(-1, 1), st.floats(0, 2 * math.pi)
).map(lambda t: Direction(math.sqrt(1 - t[0] ** 2) * math.cos(t[1]), math.sqrt(1 - t[0] ** 2) * math.sin(t[1]), t[0]))


class TestDirection:
    def test_unit_accepted(self):
        assert Direction(1, 0, 0).x == 1.0

    def test_small_error_renormalized(self):
        d = Direction(1 + 5e-7, 0, 0)
        assert abs(math.hypot(d.x, d.y, d.z) - 1) < 1e-12

    def test_far_from_unit_rejected(self):
        with pytest.raises(InvalidDirectionError):
            Direction(1.1, 0, 0)
        with pytest.raises(InvalidDirectionError):
            Direction(0, 0, 0)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidDirectionError):
            Direction(float("nan"), 0, 1)

    @given(unit_vectors)
    def test_invariant(self, d):
        assert abs(d.x**2 + d.y**2 + d.z**2 - 1) < 1e-9


class TestSingletLaw:
    def test_parallel(self):
        assert singlet_law(Z, Z).as_tuple() == (0.0, 0.5, 0.5, 0.0)

    def test_orthogonal(self):
        assert singlet_law(Z, Direction(1, 0, 0)).as_tuple() == (0.25, 0.25, 0.25, 0.25)

    def test_half(self):
        law = singlet_law(Z, with_dot(0.5))
        assert law.as_tuple() == pytest.approx((0.125, 0.375, 0.375, 0.125), abs=1e-12)

    def test_non_unit_input(self):
        with pytest.raises(InvalidDirectionError):
            singlet_law([0, 0, 2], Z)

    def test_entry_formula(self):
        a, b = Direction.from_angles(40, 10), Direction.from_angles(110, 250)
        law = singlet_law(a, b)
        for x, y in itertools.product((1, -1), repeat=2):
            assert law.prob(x, y) == pytest.approx(0.25 * (1 - x * y * a.dot(b)), abs=1e-15)

    @settings(max_examples=200)
    @given(unit_vectors, unit_vectors)
    def test_valid_table_and_correlation(self, a, b):
        law = singlet_law(a, b)
        assert all(0 <= p <= 1 for p in law.as_tuple())
        assert abs(sum(law.as_tuple()) - 1) < 1e-12
        assert abs(law.correlation() + a.dot(b)) < 1e-12


class TestCorrelationAndMarginal:
    def test_examples(self):
        assert singlet_correlation(Z, Z) == -1
        assert singlet_correlation(Z, Direction(0, 1, 0)) == 0
        assert singlet_correlation(Direction.planar(0), Direction.planar(60)) == pytest.approx(-0.5, abs=1e-12)

    def test_marginal_examples(self):
        assert marginal(singlet_law(Z, with_dot(0.3)), "A") == 0.5
        assert marginal(JointLaw(1, 0, 0, 0), "B") == 1
        assert marginal(JointLaw(0.25, 0.25, 0.25, 0.25), "B") == 0.5

    def test_bad_party(self):
        with pytest.raises(ValueError):
            marginal(JointLaw(1, 0, 0, 0), "C")

    def test_no_signalling_grid(self):
        dirs = random_directions(np.random.default_rng(11), 20)
        for a in dirs[:10]:
            for b in dirs[10:]:
                law = singlet_law(a, b)
                assert marginal(law, "A") == pytest.approx(0.5, abs=1e-15)
                assert marginal(law, "B") == pytest.approx(0.5, abs=1e-15)


class TestJointLaw:
    def test_rejects_bad_tables(self):
        with pytest.raises(RangeError):
            JointLaw(0.5, 0.5, 0.5, -0.5)
        with pytest.raises(RangeError):
            JointLaw(0.3, 0.3, 0.3, 0.3)


class TestVariationDistance:
    def test_examples(self):
        p = law_from_dot(1)
        assert variation_distance(p, p) == 0
        assert variation_distance(law_from_dot(1), law_from_dot(-1)) == 1
        # (0, 1/2, 1/2, 0) vs (1/4,)*4: half of 4 * 1/4.
        assert variation_distance(law_from_dot(1), law_from_dot(0)) == 0.5

    def test_metric_on_grid(self):
        base = [law_from_dot(d) for d in (-1, -0.5, 0, 0.5, 1)]
        extra = [JointLaw(1, 0, 0, 0), JointLaw(0, 0, 0, 1), JointLaw(0.1, 0.2, 0.3, 0.4),
                 JointLaw(0.4, 0.3, 0.2, 0.1), JointLaw(0.5, 0, 0, 0.5), JointLaw(0, 0.5, 0.5, 0),
                 JointLaw(0.7, 0.1, 0.1, 0.1), JointLaw(0.25, 0, 0.75, 0), JointLaw(0, 0, 0.5, 0.5),
                 JointLaw(0.2, 0.2, 0.2, 0.4), JointLaw(0.6, 0.4, 0, 0)]
        laws = base + extra
        assert len(laws) == 16
        for p in laws:
            for q in laws:
                d = variation_distance(p, q)
                assert 0 <= d <= 1
                assert abs(d - variation_distance(q, p)) < 1e-12
                assert (d < 1e-12) == (p == q)
                for r in laws:
                    assert d <= variation_distance(p, r) + variation_distance(r, q) + 1e-12


class TestChsh:
    def test_examples(self):
        assert chsh(1, 1, 1, -1) == 4
        assert chsh(-1, -1, -1, -1) == 2

    def test_planar_quad(self):
        # -cos(45), -cos(45), -cos(45), -cos(135)
        quad = SettingsQuad.planar()
        value = chsh(*(singlet_correlation(a, b) for a, b in quad.pairs()))
        assert value == pytest.approx(2 * math.sqrt(2), abs=1e-12)

    def test_range_error(self):
        with pytest.raises(RangeError):
            chsh(1.5, 0, 0, 0)

    def test_tsirelson_ceiling_random_planar_quads(self):
        rng = np.random.default_rng(5)
        angles = rng.uniform(0, 360, (10_000, 4))
        worst = 0.0
        for row in angles:
            quad = SettingsQuad.planar(*row)
            worst = max(worst, chsh(*(singlet_correlation(a, b) for a, b in quad.pairs())))
        assert worst <= 2 * math.sqrt(2) + 1e-9
        assert worst > 2.8


class TestContinuityBound:
    def test_examples(self):
        a, b = Direction.from_angles(20, 30), Direction.from_angles(70, 100)
        assert tv_continuity_bound(a, a, b, b) == 0
        assert tv_continuity_bound(Z, Z, Z, Direction(0, 0, -1)) == 1
        b_rep = with_dot(0.9)
        assert tv_continuity_bound(Z, Z, Z, b_rep) == pytest.approx(0.05, abs=1e-12)
        assert variation_distance(singlet_law(Z, Z), singlet_law(Z, b_rep)) == pytest.approx(0.05, abs=1e-12)

    def test_equals_distance_random(self):
        dirs = random_directions(np.random.default_rng(3), 400)
        for i in range(100):
            a, ar, b, br = dirs[4 * i : 4 * i + 4]
            lhs = tv_continuity_bound(a, ar, b, br)
            rhs = variation_distance(singlet_law(a, b), singlet_law(ar, br))
            assert abs(lhs - rhs) < 1e-12
