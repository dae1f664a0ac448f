"""
Tests for solution counting, regimes and the domination lemma.
"""
import math

import numpy as np

import pytest

from frustra.counting import (
    Regime,
    characteristic_roots,
    classify_regime,
    closed_form_count,
    count_report,
    first_nonpositive_index,
    frustration_angle,
    frustration_onset_bound,
    power_solution_base,
    sequence_from_slack,
    solution_count_sequence,
    verify_dominated_sequence,
)

# (d, r) pairs with 4r > d² where pi/theta is not an integer
FRUSTRATED_PAIRS = [(4, 5), (4, 6), (4, 7), (3, 4), (3, 5), (3, 6), (3, 7), (3, 8), (5, 7), (6, 10), (6, 11), (8, 17)]


def test_qubit_rank_one_counts_grow_linearly():
    assert solution_count_sequence(2, 1, 6) == [1, 2, 3, 4, 5, 6, 7]


def test_critical_closed_form():
    counts = solution_count_sequence(4, 4, 20)
    assert counts[20] == 2**20 * 21 == 22020096
    assert closed_form_count(4, 4, 20) == 22020096


def test_full_rank_counts_vanish_at_two_sites():
    assert solution_count_sequence(3, 9, 3)[:3] == [1, 3, 0]


def test_recursion_matches_closed_form():
    for d in range(2, 9):
        for r in range(1, d * d + 1):
            counts = solution_count_sequence(d, r, 60)
            for n, exact in enumerate(counts):
                closed = closed_form_count(d, r, n)
                if isinstance(closed, int):
                    assert closed == exact, (d, r, n)
                else:
                    scale = max(abs(exact), r ** (n / 2))
                    assert abs(closed - exact) <= 1e-9 * scale, (d, r, n)


@pytest.mark.parametrize("d,r", [(4, 3), (5, 6), (6, 8), (9, 20)])
def test_integer_roots_give_exact_integers(d, r):
    assert isinstance(closed_form_count(d, r, 40), int)


def test_characteristic_roots():
    assert characteristic_roots(4, 4) == (2, 2)
    f, g = characteristic_roots(5, 6)
    assert (f, g) == (3, 2)
    f, g = characteristic_roots(2, 2)
    assert f.imag > 0 and g == f.conjugate()


def test_frustration_angle():
    assert frustration_angle(4, 4) is None
    assert frustration_angle(2, 1) is None
    assert frustration_angle(2, 2) == pytest.approx(math.pi / 4)


@pytest.mark.parametrize(
    "d,r,regime",
    [
        (2, 1, Regime.PRODUCT_SOLUBLE),
        (4, 4, Regime.CRITICAL),
        (6, 9, Regime.CRITICAL),
        (4, 3, Regime.PRODUCT_SOLUBLE),
        (5, 6, Regime.ENTANGLED_UNFRUSTRATED),
        (4, 5, Regime.FRUSTRATED),
        (6, 11, Regime.FRUSTRATED),
        (2, 4, Regime.FRUSTRATED),
    ],
)
def test_classify_regime(d, r, regime):
    assert classify_regime(d, r) is regime


def test_classify_regime_covers_grid():
    for d in range(2, 9):
        for r in range(1, d * d + 1):
            assert (classify_regime(d, r) is Regime.FRUSTRATED) == (4 * r > d * d)


@pytest.mark.parametrize("d,r", FRUSTRATED_PAIRS)
def test_first_frustrated_length_law(d, r):
    theta = math.acos(d / (2 * math.sqrt(r)))
    expected = math.floor(math.pi / theta)
    assert expected + 1 > math.pi / theta > expected

    report = count_report(d, r, 2)
    assert report.first_frustrated_length == expected
    assert frustration_onset_bound(d, r) == expected


def test_first_frustrated_length_on_exact_angle():
    # theta = pi/4: D_3 = 2·2 - 2·2 = 0
    assert solution_count_sequence(2, 2, 3) == [1, 2, 2, 0]
    assert count_report(2, 2, 1).first_frustrated_length == 3
    assert frustration_onset_bound(2, 2) == 3


def test_first_nonpositive_index():
    assert first_nonpositive_index([1, 2, 3]) is None
    assert first_nonpositive_index([1, 4, 11, -2, 5]) == 3


def test_count_report_unfrustrated_has_no_length():
    report = count_report(5, 6, 10)
    assert report.regime is Regime.ENTANGLED_UNFRUSTRATED
    assert report.first_frustrated_length is None
    assert report.theta is None


def test_count_report_serializes_big_integers_as_strings():
    data = count_report(4, 4, 20).model_dump(mode="json")
    assert data["d_sequence"][20] == "22020096"
    assert data["roots"] == [[2.0, 0.0], [2.0, 0.0]]
    assert data["regime"] == "Critical"


def test_dominated_sequence_of_counts_has_zero_slack():
    counts = solution_count_sequence(5, 6, 12)
    result = verify_dominated_sequence(counts, 5, 6)
    assert result.ok
    assert result.slack == [0] * 12


def test_power_family_is_dominated():
    h = power_solution_base(4, 3)
    assert h == 1
    s = [h**n for n in range(15)]
    result = verify_dominated_sequence(s, 4, 3)
    assert result.ok
    assert sequence_from_slack(result.slack, 4, 3) == s


def _random_admissible_slack(rng, d, r, length):
    """Slack u_1..u_n drawn so that every reconstructed s_n stays nonnegative."""
    s, u = [1], []
    for n in range(1, length + 1):
        bound = d * s[-1] - (r * s[-2] if n >= 2 else 0)
        if bound < 0:
            break
        slack = int(rng.integers(0, bound + 1))
        u.append(slack)
        s.append(bound - slack)
    return u, s


def test_random_slack_sequences_are_dominated():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        d = int(rng.integers(2, 7))
        r = int(rng.integers(1, d * d // 4 + 1))
        u, s = _random_admissible_slack(rng, d, r, int(rng.integers(1, 16)))

        assert sequence_from_slack(u, d, r) == s
        result = verify_dominated_sequence(s, d, r)
        assert result.ok
        assert result.slack == u
        counts = solution_count_sequence(d, r, len(s) - 1)
        assert all(0 <= s_n <= d_n for s_n, d_n in zip(s, counts))


def test_domination_reports_first_violation():
    result = verify_dominated_sequence([1, 5], 4, 5)
    assert not result.ok
    assert result.violation_index == 1


def test_domination_requires_unit_start():
    with pytest.raises(ValueError):
        verify_dominated_sequence([2, 1], 4, 4)


@pytest.mark.parametrize("d,r,h", [(6, 9, 3), (5, 6, 2), (4, 5, None), (2, 1, 1)])
def test_power_solution_base(d, r, h):
    assert power_solution_base(d, r) == h


def test_sequence_rejects_bad_arguments():
    with pytest.raises(ValueError):
        solution_count_sequence(2, 1, 0)
    with pytest.raises(ValueError):
        solution_count_sequence(2, 5, 4)
    with pytest.raises(ValueError):
        closed_form_count(2, 1, -1)
