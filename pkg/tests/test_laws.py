import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fsl.assembly import assemble
from fsl.domain import make_domain, rasterize
from fsl.eigen import eigendecompose
from fsl.laws import (
    LawError,
    LawReport,
    alpha_sweep,
    bessel_j0_series,
    check_domain_monotonicity,
    check_faber_krahn,
    check_power_monotonicity,
    check_sandwich,
    check_upper_bound,
    continuity_profile,
    convex_lower_bound,
    exact_laplacian_eigs,
    read_sweep_csv,
    subordination_spectrum,
    synthetic_sweep,
    verify_sweep,
    weyl_fit,
    write_sweep_csv,
)

J01 = 2.404825557695773


def _bisect(f, a, b, iters=200):
    fa = f(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        if (f(m) > 0) == (fa > 0):
            a, fa = m, f(m)
        else:
            b = m
    return 0.5 * (a + b)


def test_exact_laplacian_interval_and_square():
    np.testing.assert_allclose(exact_laplacian_eigs(make_domain("interval", -1, 1), 3), np.array([1, 4, 9]) * math.pi**2 / 4)
    np.testing.assert_allclose(exact_laplacian_eigs(make_domain("box", 0, 0, math.pi, math.pi), 6), [2, 5, 5, 8, 10, 10])


def test_exact_laplacian_disc_against_series_root():
    # independent oracle: bisect the ascending J0 series on [2, 3]
    j01 = _bisect(bessel_j0_series, 2.0, 3.0)
    assert j01 == pytest.approx(J01, rel=1e-14)
    mu = exact_laplacian_eigs(make_domain("ball", 0, 0, 1), 3)
    assert mu[0] == pytest.approx(j01**2, rel=1e-13)
    assert mu[0] == pytest.approx(5.7832, abs=1e-4)
    # J1 zero 3.8317 with multiplicity two
    assert mu[1] == pytest.approx(mu[2], rel=1e-15)
    assert mu[1] == pytest.approx(3.831705970207512**2, rel=1e-12)
    radius2 = exact_laplacian_eigs(make_domain("ball", 1, 1, 2), 1)
    assert radius2[0] == pytest.approx(mu[0] / 4, rel=1e-14)


def test_exact_laplacian_unknown_shape(tmp_path):
    from fsl.domain import parse_domain, write_pgm

    img = np.full((4, 4), 255, dtype=np.uint8)
    write_pgm(tmp_path / "s.pgm", img)
    with pytest.raises(LawError):
        exact_laplacian_eigs(parse_domain(f"raster:{tmp_path / 's.pgm'},0.5"), 1)


def test_convex_lower_bound_examples():
    assert convex_lower_bound(1.0, 1.0) == pytest.approx(1.0, rel=1e-15)
    assert convex_lower_bound(1.0, 2.0) == pytest.approx(0.5, rel=1e-15)
    # at α = 2 the bound is 2/R², i.e. 8/π² of the interval's Laplacian value
    assert convex_lower_bound(2.0, 1.0) / (math.pi**2 / 4) == pytest.approx(8 / math.pi**2, rel=1e-15)
    with pytest.raises(LawError):
        convex_lower_bound(1.0, 0.0)


def test_subordination_examples():
    np.testing.assert_allclose(subordination_spectrum([4.0, 9.0], 1.0, 2.0), [2.0, 3.0])
    np.testing.assert_allclose(subordination_spectrum([5.0], 1.5, 1.5), [5.0])
    for alpha, beta in ((1.0, 0.5), (0.0, 1.0), (1.0, 2.5)):
        with pytest.raises(LawError):
            subordination_spectrum([1.0], alpha, beta)
    with pytest.raises(LawError):
        subordination_spectrum([0.0], 1.0, 2.0)


@given(st.lists(st.floats(0.01, 1e3), min_size=1, max_size=8), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_subordinated_spectrum_satisfies_power_monotonicity(mu, a, b):
    # H_β^{α/β} gives λ^{1/α} = μ^{1/β} exactly
    alpha, beta = sorted((a, b))
    lam = subordination_spectrum(mu, alpha, beta)
    np.testing.assert_allclose(lam ** (1 / alpha), np.asarray(mu) ** (1 / beta), rtol=1e-9)


def test_law_report():
    rep = LawReport("demo", 1e-3)
    rep.add(0.1, i=1)
    rep.add(-5e-4, i=2)
    assert rep.passed and rep.worst_margin == -5e-4
    rep.add(-2e-3, i=3)
    assert not rep.passed
    rows = [json.loads(line) for line in rep.jsonl()]
    assert [r["pass"] for r in rows] == [True, True, False]
    assert set(rows[0]) == {"law", "instance", "margin", "pass"}
    assert rep.summary().startswith("FAIL demo: 3 instances")


INTERVAL = make_domain("interval", -1, 1)


def test_power_monotonicity_synthetic_violation():
    good = synthetic_sweep(INTERVAL, [0.5, 1.0], [[1.0], [1.2]])
    assert check_power_monotonicity(good).passed
    # λ^{1/α}: 1.0 at α=0.5 against 0.9 at α=1
    bad = synthetic_sweep(INTERVAL, [0.5, 1.0], [[1.0], [0.9]])
    rep = check_power_monotonicity(bad)
    assert not rep.passed
    assert rep.worst_margin == pytest.approx(1 - 1 / 0.9)
    # appending the Laplacian row as the β = 2 endpoint
    assert not check_power_monotonicity(good, mu=[1.0]).passed


def test_upper_bound_and_sandwich_synthetic():
    mu = exact_laplacian_eigs(INTERVAL, 1)
    ok = synthetic_sweep(INTERVAL, [1.0], [[1.2]])
    assert check_upper_bound(ok, mu).passed
    assert check_sandwich(ok, mu).passed
    high = synthetic_sweep(INTERVAL, [1.0], [[1.6]])
    assert not check_upper_bound(high, mu).passed
    low = synthetic_sweep(INTERVAL, [1.0], [[0.9]])
    assert not check_sandwich(low, mu).passed
    with pytest.raises(LawError):
        check_upper_bound(synthetic_sweep(INTERVAL, [1.0], [[1.0, 2.0]]), mu)


def test_continuity_profile_flags_jump():
    alphas = np.arange(0.6, 1.01, 0.1)
    smooth = synthetic_sweep(INTERVAL, alphas, (1 + alphas)[:, None])
    prof = continuity_profile(smooth)
    assert not prof.flagged and prof.increasing.all()
    assert continuity_profile(smooth).report().passed
    jump = (1 + alphas)[:, None].copy()
    jump[3:] += 2.0
    prof = continuity_profile(synthetic_sweep(INTERVAL, alphas, jump))
    assert prof.flagged
    assert not prof.report().passed
    flat = synthetic_sweep(INTERVAL, alphas, np.ones((len(alphas), 1)))
    assert not continuity_profile(flat).increasing[0]
    with pytest.raises(LawError):
        continuity_profile(synthetic_sweep(INTERVAL, [0.5, 0.6, 0.9], [[1], [2], [3]]))


def test_weyl_exponent_analytic():
    mu = exact_laplacian_eigs(INTERVAL, 300)
    assert weyl_fit(mu).exponent == pytest.approx(0.5, abs=0.01)
    with pytest.raises(LawError):
        weyl_fit(mu[:10])


@pytest.mark.parametrize("alpha", [0.6, 1.0, 1.6])
def test_weyl_exponent_interval(alpha):
    op = assemble(rasterize(INTERVAL, 2 / 400), alpha)
    # the resolved tenth of the spectrum
    assert weyl_fit(eigendecompose(op, op.n // 10)).exponent == pytest.approx(1 / alpha, abs=0.15)


@pytest.mark.parametrize("alpha", [1.0, 1.5])
def test_weyl_exponent_square(alpha):
    op = assemble(rasterize(make_domain("box", 0, 0, 1, 1), 1 / 30), alpha)
    assert weyl_fit(eigendecompose(op, op.n // 10)).exponent == pytest.approx(2 / alpha, abs=0.3)


def test_full_lattice_spectrum_is_not_weyl():
    # the top of the spectrum saturates with the lattice symbol
    op = assemble(rasterize(INTERVAL, 2 / 400), 1.0)
    assert weyl_fit(np.linalg.eigvalsh(op.matrix)).exponent > 1.2


def test_domain_monotonicity_examples():
    rep = check_domain_monotonicity(INTERVAL, make_domain("interval", -2, 2), 1.0, 1 / 32)
    assert rep.passed and len(rep.instances) == 10
    first = rep.instances[0]
    assert first["inner_value"] / first["outer_value"] == pytest.approx(2.0, rel=2e-2)
    rep = check_domain_monotonicity(make_domain("box", 0, 0, 1, 1), make_domain("box", -0.5, 0, 1.5, 2), 0.7, 1 / 8)
    assert rep.passed
    with pytest.raises(LawError):
        check_domain_monotonicity(make_domain("interval", -2, 2), INTERVAL, 1.0, 1 / 8)


def test_faber_krahn_trivial_cases():
    hs = (2 / 16, 2 / 32, 2 / 64)
    rep = check_faber_krahn(make_domain("interval", 0, 2), 1.0, hs)
    assert rep.passed and rep.instances[0]["margin"] == pytest.approx(0, abs=1e-12)


def test_sweep_roundtrip_and_verify(tmp_path):
    sweep = alpha_sweep(INTERVAL, [0.6, 1.0, 1.4], 2, (2 / 16, 2 / 32, 2 / 64))
    assert sweep.values.shape == (3, 2)
    assert np.all(np.diff(sweep.values[:, 0]) > 0)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, sweep)
    back = read_sweep_csv(path)
    np.testing.assert_array_equal(back.values, sweep.values)
    np.testing.assert_array_equal(back.raw, sweep.raw)
    np.testing.assert_array_equal(back.alphas, sweep.alphas)
    assert back.h_schedule == sweep.h_schedule
    assert str(back.domain) == str(sweep.domain)
    reports = verify_sweep(back)
    assert {r.law for r in reports} == {"power_monotonicity", "upper_bound", "sandwich", "continuity"}
    assert all(r.passed for r in reports)
    with pytest.raises(LawError):
        verify_sweep(back, laws=("weyl",))


def test_sweep_needs_three_grids():
    with pytest.raises(LawError):
        alpha_sweep(INTERVAL, [1.0], 1, (0.1, 0.05))


def test_subordinated_laplacian_bounds_computed_spectrum():
    mu = exact_laplacian_eigs(make_domain("interval", 0, math.pi), 3)
    np.testing.assert_allclose(mu, [1, 4, 9], rtol=1e-15)
    np.testing.assert_allclose(subordination_spectrum(mu, 1.0, 2.0), [1, 2, 3], rtol=1e-15)
    np.testing.assert_allclose(subordination_spectrum([1, 1, 1], 0.7, 1.3), [1, 1, 1])
    sweep = alpha_sweep(make_domain("interval", 0, math.pi), [1.0], 3, (math.pi / 32, math.pi / 64, math.pi / 128))
    assert check_power_monotonicity(sweep, mu=mu).passed
