from fractions import Fraction

import pytest

from etmpc.costmodel import (
    BITS_PER_REAL,
    Dims,
    INV_MAT_RATIO_BOUND,
    check_ratio_bound,
    compare_encodings,
    cost_report,
    inv_mat_ratio,
    inverse_flops,
    op_flops,
    predicted_bits,
    predicted_flops,
    split_flops,
    sweep_reports,
)

FOUR_MASS = Dims.box(8, 3, 10)


def test_dims_box_count():
    assert FOUR_MASS.q == 236
    assert Dims.box(1, 1, 2).q == 10


def test_dims_rejects_excess_active():
    with pytest.raises(ValueError):
        Dims.box(8, 3, 10, q_active=31)
    with pytest.raises(ValueError):
        Dims(1, 1, 2, q=3, q_active=3)  # above mN = 2


# -- operation costs -----------------------------------------------------------------

def test_matmul_cost():
    assert op_flops("matmul", 2, 3, 4) == 2 * 4 * 5 == 40


def test_inverse_cost():
    assert op_flops("inverse", 1) == 10
    assert op_flops("inverse", 2) == 36
    assert op_flops("inverse", 3) == 82


def test_add_cost():
    assert op_flops("add", 1, 1) == 1
    assert op_flops("scale", 3, 4) == 12


def test_inverse_cost_division_split():
    # s(s+1)/2 divisions at ten flops plus s(s-1)(2s+5)/3 multiply/adds
    for s in range(0, 40):
        divisions = s * (s + 1) // 2
        muladds = s * (s - 1) * (2 * s + 5) // 3
        assert inverse_flops(s) == 10 * divisions + muladds


# -- bits ---------------------------------------------------------------------------

def test_predicted_bits_four_mass():
    assert predicted_bits("A1", FOUR_MASS) == 236
    assert predicted_bits("A3", FOUR_MASS) == 480
    assert predicted_bits("A4", FOUR_MASS) == 34_416


def test_a2_bits_reduce_to_indicator_when_empty():
    assert predicted_bits("A2", FOUR_MASS.with_active(0)) == 236


def test_a3_bits_independent_of_active_count():
    assert (predicted_bits("A3", FOUR_MASS.with_active(0))
            == predicted_bits("A3", FOUR_MASS.with_active(30)) == 480)


# -- flops ---------------------------------------------------------------------------

def test_a4_flops_zero():
    for qa in (0, 5, 30):
        assert predicted_flops("A4", FOUR_MASS.with_active(qa)) == 0


def test_a1_minus_a2_difference_polynomial():
    for n, m, N in ((1, 1, 2), (2, 3, 4), (8, 3, 10), (6, 6, 12)):
        base = Dims.box(n, m, N)
        mN = m * N
        for qa in range(mN + 1):
            d = base.with_active(qa)
            diff = predicted_flops("A1", d) - predicted_flops("A2", d)
            expect = Fraction(2, 3) * qa**3 + qa**2 * (2 * mN + 5) + Fraction(10, 3) * qa
            assert diff == expect


def test_split_sums_to_a1_row():
    for n, m, N in ((1, 1, 2), (3, 2, 5), (8, 3, 10)):
        base = Dims.box(n, m, N)
        for qa in range(m * N + 1):
            d = base.with_active(qa)
            inv, mat = split_flops(d)
            assert inv + mat == predicted_flops("A1", d)
            assert inv == inverse_flops(qa)


def test_split_examples():
    assert split_flops(Dims.box(8, 3, 10, q_active=1))[0] == 10
    inv, mat = split_flops(Dims.box(8, 3, 10, q_active=0))
    assert inv == 0 and mat > 0
    assert inv_mat_ratio(Dims.box(8, 3, 10, q_active=0)) == 0


def test_four_mass_ratio_within_bound():
    r = inv_mat_ratio(FOUR_MASS.with_active(30))
    assert r <= INV_MAT_RATIO_BOUND


# -- ratio bound ----------------------------------------------------------------------

def test_bound_tight_at_minimal_dims():
    report = check_ratio_bound([Dims.box(1, 1, 2)])
    assert report.holds and report.monotone
    assert report.max_ratio == INV_MAT_RATIO_BOUND
    assert report.argmax.q_active == 2


def test_minimal_case_polynomial_reverification():
    # for N=2, n=1 the bound at q_active = mN has the same sign as
    # 1328 m^2 - 1368 m + 40, which vanishes exactly at m = 1
    for m in range(1, 8):
        d = Dims.box(1, m, 2, q_active=2 * m)
        inv, mat = split_flops(d)
        margin = 18 * mat - 79 * inv
        poly = 1328 * m * m - 1368 * m + 40
        assert (margin == 0) == (poly == 0)
        assert (margin > 0) == (poly > 0)
    assert 1328 - 1368 + 40 == 0


def test_bound_holds_on_four_mass_sweep():
    report = check_ratio_bound([Dims.box(8, 3, 10)])
    assert report.holds and report.monotone
    assert report.max_ratio <= INV_MAT_RATIO_BOUND


def test_bound_holds_on_grid():
    dims = [Dims.box(n, m, N)
            for n in range(1, 7) for m in range(1, 7) for N in range(2, 13)]
    report = check_ratio_bound(dims)
    assert report.holds
    assert report.monotone
    assert report.max_ratio == INV_MAT_RATIO_BOUND  # attained at (1,1,2)


# -- encoding comparison ----------------------------------------------------------------

def test_four_mass_threshold_prediction():
    cmp = compare_encodings(FOUR_MASS.with_active(0))
    assert Fraction(BITS_PER_REAL - 2, 3) == Fraction(14, 3)
    assert cmp.a3_gt_a1_threshold is True
    assert cmp.bits["A3"] == 480 > 236 == cmp.bits["A1"]
    assert cmp.a3_gt_a1_agrees is True


def test_threshold_boundary_makes_no_prediction():
    cmp = compare_encodings(Dims.box(14, 3, 4))
    assert cmp.a3_gt_a1_threshold is None
    assert cmp.a3_gt_a1_agrees is None


def test_large_active_count_defeats_a2_threshold():
    cmp = compare_encodings(FOUR_MASS.with_active(30))
    assert cmp.a3_gt_a2_threshold is False
    assert cmp.bits["A3"] == 480 <= 7676 == cmp.bits["A2"]
    assert cmp.a3_gt_a2_direct is False


def test_a1_never_exceeds_a2():
    for qa in range(31):
        cmp = compare_encodings(FOUR_MASS.with_active(qa))
        assert cmp.a1_le_a2


def test_known_a2_a4_violation_is_reported_truthfully():
    # the A2 payload outgrows A4 at large active counts; the comparison
    # must report that honestly rather than assuming a universal order
    cmp = compare_encodings(Dims.box(1, 2, 6, q_active=12))
    assert cmp.bits["A2"] == 1286 > 1280 == cmp.bits["A4"]
    assert cmp.a4_dominates["A2"] is False
    assert cmp.a4_dominates["A1"] is True
    assert cmp.a4_dominates["A3"] is True


# -- reports -----------------------------------------------------------------------------

def test_cost_report_invariants():
    rep = cost_report("A1", FOUR_MASS.with_active(12))
    assert rep.flops == rep.flops_inv + rep.flops_mat
    rep4 = cost_report("A4", FOUR_MASS.with_active(12))
    assert rep4.flops == 0 and rep4.ratio == 0


def test_sweep_reports_cover_grid():
    reports = sweep_reports(FOUR_MASS)
    assert len(reports) == 31 * 4
    ratios = [r.ratio for r in reports if r.variant == "A1"]
    assert ratios == sorted(ratios)  # nondecreasing in q_active
    assert max(ratios) <= INV_MAT_RATIO_BOUND
