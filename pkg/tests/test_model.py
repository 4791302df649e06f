import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from bftperf.errors import ConfigError
from bftperf.model import (
    ModelDomainError, ModelParams, crossover_switch_rate, exceed_prob, expected_time_clique,
    expected_time_hotstuff_topology, expected_time_ibft_topology, fc_over_df_ratio,
    g_max_gaussian, ibft_topology_moments, m_hotstuff, m_ibft, m_ibft_topology,
    multichain_effective_rate, n_ibft_topology_faults, normal_cdf, normal_pdf, predict,
    predict_improved, q_hotstuff_clique, q_ibft_clique, t3_clique, t3_hotstuff_topology,
    t3_hotstuff_topology_improved, t3_ibft_topology, tau0_star,
)
from bftperf.topology import average_hop_distance, build_topology, place_validators

SIG6 = dict(rel=5e-7)


def hs(**kw):
    return ModelParams(protocol="hotstuff", **kw)


def ib(**kw):
    return ModelParams(protocol="ibft", **kw)


# -- normal distribution

def test_phi_symmetry():
    assert normal_cdf(0.0) == 0.5


def test_phi_three_against_table():
    # four-place table value 0.99865
    assert normal_cdf(3.0) == pytest.approx(0.998650102, abs=1e-9)


def test_phi_minus_196():
    assert normal_cdf(-1.96) == pytest.approx(0.0249979, abs=1e-7)


def test_phi_matches_mpmath_oracle():
    mpmath = pytest.importorskip("mpmath")
    for x in (-6.0, -2.5, -0.3, 0.7, 1.5, 4.0):
        assert normal_cdf(x) == pytest.approx(float(mpmath.ncdf(x)), rel=1e-13)


def test_pdf_at_zero():
    assert normal_pdf(0.0) == pytest.approx(0.3989422804014327, rel=1e-15)


@given(st.floats(-30, 30))
def test_phi_is_a_cdf(x):
    assert 0.0 <= normal_cdf(x) <= 1.0
    assert normal_cdf(x) + normal_cdf(-x) == pytest.approx(1.0, abs=1e-15)


# -- clique baselines

def test_hotstuff_clique_no_faults():
    assert t3_clique(hs(n=16)) == pytest.approx(189.0, **SIG6)


def test_hotstuff_clique_two_faults():
    p = hs(n=16, n_f=2)
    assert m_hotstuff(p) == 57
    assert t3_clique(p) == pytest.approx(171.0, **SIG6)


def test_ibft_clique_two_faults():
    assert t3_clique(ib(n=16, n_f=2)) == pytest.approx(87.0, **SIG6)


def test_ibft_clique_no_faults_is_2n_plus_1():
    for n in (16, 32):
        assert t3_clique(ib(n=n)) == pytest.approx((2 * n + 1) * 3, **SIG6)


def test_m_ibft_substitution():
    assert m_ibft(ib(n=16, n_f=2)) == 25


# -- q

def test_q_half_at_mean():
    assert q_hotstuff_clique(hs(n=16, n_f=2, tau0=171.0)) == pytest.approx(0.5, **SIG6)
    assert q_ibft_clique(ib(n=16, n_f=2, tau0=75.0)) == pytest.approx(0.5, **SIG6)


def test_q_vanishes_for_huge_timer():
    assert q_hotstuff_clique(hs(n=16, n_f=2, tau0=1e9)) == 0.0
    assert exceed_prob(math.inf, 10.0, 1.0) == 0.0


def test_q_hotstuff_three_sigma():
    p = hs(n=16, n_f=2, sigma_v=3.0, tau0=171 + 9 * math.sqrt(57))
    assert q_hotstuff_clique(p) == pytest.approx(0.00134990, rel=1e-5)


def test_q_ibft_three_sigma():
    tau = 75 + 9 * math.sqrt(25 * (2 + 1 / 14))
    assert tau == pytest.approx(139.766, rel=1e-5)
    assert q_ibft_clique(ib(n=16, n_f=2, sigma_v=3.0, tau0=tau)) == pytest.approx(0.00134990, rel=1e-5)


# -- expected time on the clique

def test_hotstuff_tail_substitution():
    pr = expected_time_clique(hs(n=16, n_f=2, tau0=300.0), q=0.0)
    assert pr.expected_time == pytest.approx(221.0, **SIG6)


def test_ibft_tail_substitution():
    pr = expected_time_clique(ib(n=16, n_f=2, tau0=300.0), q=0.0)
    assert pr.expected_time == pytest.approx(142.25, **SIG6)


def test_no_faults_no_tail():
    for p in (hs(n=16, tau0=500.0), ib(n=16, tau0=500.0)):
        pr = expected_time_clique(p, q=0.0)
        assert pr.expected_time == pr.t3


def test_recommended_timer_hotstuff():
    assert tau0_star(hs(n=16, n_f=2)) == pytest.approx(171 + 9 * math.sqrt(57), **SIG6)
    assert tau0_star(hs(n=16, n_f=2)) == pytest.approx(238.9485, rel=1e-6)


def test_recommended_timer_ibft():
    assert tau0_star(ib(n=16, n_f=2)) == pytest.approx(139.766, rel=1e-5)


def test_sensitivity_coefficients():
    # message counts grow by 4 per validator for HotStuff, 2 for IBFT
    assert m_hotstuff(hs(n=20)) - m_hotstuff(hs(n=19)) == 4
    assert m_ibft(ib(n=20)) - m_ibft(ib(n=19)) == 2


def test_domain_error_r_half():
    with pytest.raises(ModelDomainError):
        hs(n=4, n_f=2)


# -- HotStuff on a topology

def test_hotstuff_topology_substitution():
    p = hs(n=31, rs=9.0, topology="fc", topo_params=(8, 4), h_T=3.4)
    assert t3_hotstuff_topology(p) == pytest.approx(240 + 108 + 2 * (3 + 3.4 / 9), **SIG6)
    assert t3_hotstuff_topology(p) == pytest.approx(354.7556, rel=1e-6)


def test_hotstuff_topology_switch_bound():
    p = hs(n=31, rs=0.4, topology="fc", topo_params=(8, 4), h_T=3.4)
    assert p.rs < 1.5 * p.rv
    expect = 4 * (31 - 2) / 0.4 + 3 * 31 / 0.4 + 2 * (3 + 3.4 / 0.4)
    assert t3_hotstuff_topology(p) == pytest.approx(expect, **SIG6)


def test_hotstuff_topology_fast_switch_limit():
    p = hs(n=16, rs=1e12, topology="fc", topo_params=(8, 4))
    assert t3_hotstuff_topology(p) == pytest.approx(189.0, rel=1e-9)


def test_hotstuff_faults_substitution():
    p = hs(n=40, n_f=2, rs=9.0, topology="df", topo_params=(4,), h_T=2.2, tau0=400.0)
    pr = expected_time_hotstuff_topology(p, q=0.0)
    assert pr.t3 == pytest.approx(4 * 78 + 3 * 39 + 2 * (3 + 2.2 / 9), **SIG6)
    assert pr.t3 == pytest.approx(435.4889, rel=1e-6)
    assert pr.expected_time == pytest.approx(457.7111, rel=1e-6)


def test_hotstuff_faults_reduce_to_no_fault_form():
    p = hs(n=31, rs=2.0, topology="fc", topo_params=(8, 4), tau0=1e4)
    assert expected_time_hotstuff_topology(p, q=0.0).expected_time == pytest.approx(
        t3_hotstuff_topology(p), **SIG6)


def test_hotstuff_faults_threshold():
    # the switch term takes the first max exactly when rs/rv < (n-n_f-2)/(n-f-1)
    n, nf, f, rv = 40, 2, 13, 1 / 3
    thr = (n - nf - 2) / (n - f - 1) * rv
    for rs, switch in ((thr * 0.99, True), (thr * 1.01, False)):
        assert ((n - nf - 2) / rs > (n - f - 1) / rv) == switch


# -- IBFT on a topology

def test_ibft_folded_clos_substitution():
    p = ib(n=31, rs=9.0, topology="fc", topo_params=(8, 4))
    assert p.k == pytest.approx(3.875)
    assert m_ibft_topology(p) == pytest.approx(472.71875, **SIG6)
    assert t3_ibft_topology(p) == pytest.approx(189.0, **SIG6)


def test_ibft_folded_clos_switch_bound():
    p = ib(n=31, rs=1.0, topology="fc", topo_params=(8, 4))
    assert t3_ibft_topology(p) == pytest.approx(472.71875, **SIG6)


def test_ibft_fixed_k_linear_in_n():
    # nu_e = n/k so m_T = 2(2k(n-1) - k(k-1)) + n - 1 is affine in n
    k = 4
    vals = [m_ibft_topology(ib(n=n, topology="fc", topo_params=(n // k, 2))) for n in (16, 24, 32, 40)]
    diffs = [b - a for a, b in zip(vals, vals[1:])]
    assert diffs == pytest.approx([diffs[0]] * 3)


def test_ibft_dragonfly_faults_substitution():
    p = ib(n=40, n_f=2, topology="df", topo_params=(4,), rs=1.0, tau0=400.0)
    assert p.k == 2 and p.n_w == 38 and p.r == pytest.approx(0.05)
    assert n_ibft_topology_faults(p) == pytest.approx(241.2, **SIG6)
    pr = expected_time_ibft_topology(p, q=0.0)
    assert pr.expected_time == pytest.approx(482.4 + 39 + 400 / 18 + 0.05 * 241.2 * 3, **SIG6)
    assert pr.expected_time == pytest.approx(579.8022, rel=1e-6)


def test_ibft_faults_reduce_to_switch_branch():
    for topo, params in (("fc", (8, 4)), ("df", (4,))):
        p = ib(n=40, topology=topo, topo_params=params, rs=1.0, tau0=1e4)
        pr = expected_time_ibft_topology(p, q=0.0)
        assert pr.round_change == 0.0
        assert pr.t3 == pytest.approx(m_ibft_topology(p) / p.rs, **SIG6)


def test_ibft_timer_uses_validator_count():
    p = ib(n=40, n_f=2, topology="df", topo_params=(4,), rs=9.0)
    mean, _ = ibft_topology_moments(p)
    assert mean == pytest.approx((2 * 40 + 1 - 13 + 2 - 1) * 3, **SIG6)
    lit, _ = ibft_topology_moments(p, literal=True)
    assert lit > 5 * mean


# -- crossover and ratio

def test_crossover_folded_clos():
    p = ib(n=31, topology="fc", topo_params=(8, 4))
    assert crossover_switch_rate(p) == pytest.approx(472.71875 / (118 * 3), **SIG6)
    assert crossover_switch_rate(p) == pytest.approx(1.33536, rel=1e-5)


def test_crossover_dragonfly_matches_t3_oracle():
    p = ib(n=31, topology="df", topo_params=(5,))
    m = t3_ibft_topology(p.with_(rs=1.0))   # switch branch at rs=1 is m_D itself
    assert crossover_switch_rate(p) == pytest.approx(m / 3 / 118, **SIG6)


def test_generalised_crossover_reduces():
    p = ib(n=31, topology="fc", topo_params=(8, 4))
    n_T = n_ibft_topology_faults(p)
    assert ((2 * n_T + 30) / 3 / 118) == pytest.approx(crossover_switch_rate(p), **SIG6)


def test_ratio_approximation():
    assert fc_over_df_ratio(2, 6, 84)[1] == pytest.approx(1.41176, rel=1e-5)
    assert fc_over_df_ratio(10 ** 7, 3, 10 ** 9)[1] == pytest.approx(1.5, rel=1e-6)


def test_ratio_exact_frozen_oracle():
    # exact middle expression, evaluated independently below
    kF, kD, nd, n = 6, 2, 6, 84
    num = 2 * kF * (2 * (n - 1) - (kF - 1)) + (n - 1)
    den = 2 * kD * (2 * (n - 1) - (kD - 1) + 2 * kD * nd * (nd - 1)) + (n - 1)
    assert num / den == pytest.approx(1.6475879, rel=1e-6)
    exact, approx = fc_over_df_ratio(2, 6, 84)
    assert exact == pytest.approx(1.6475879, rel=1e-6)
    # the approximation drops terms that are not small at this size
    assert abs(exact / approx - 1) == pytest.approx(0.16704, rel=1e-4)


# -- improved HotStuff model

def test_g_equal_means():
    assert g_max_gaussian(5.0, 1.0, 5.0, 3.0) == pytest.approx(5 + 2 * 0.3989422804, rel=1e-9)


def test_g_degenerate():
    assert g_max_gaussian(10.0, 1e-30, 3.0, 1e-30) == pytest.approx(10.0)
    assert g_max_gaussian(10.0, 0.0, 3.0, 0.0) == 10.0


def test_g_standard_pair_monte_carlo():
    rng = random.Random(7)
    N = 200_000
    mc = sum(max(rng.gauss(0, 1), rng.gauss(0, 1)) for _ in range(N)) / N
    g = g_max_gaussian(0.0, 1.0, 0.0, 1.0)
    assert g == pytest.approx(0.5641896, rel=1e-6)
    assert mc == pytest.approx(g, abs=0.01)


def test_improved_degenerates_to_simple():
    p = hs(n=31, rs=2.0, topology="fc", topo_params=(8, 4), sigma_v=0.0, sigma_s=0.0)
    assert t3_hotstuff_topology_improved(p) == pytest.approx(t3_hotstuff_topology(p), **SIG6)


@given(st.floats(-50, 50), st.floats(0, 40), st.floats(-50, 50), st.floats(0, 40))
def test_g_at_least_max(u1, v1, u2, v2):
    assert g_max_gaussian(u1, v1, u2, v2) >= max(u1, u2) - 1e-9


@given(st.integers(8, 64), st.floats(0.2, 20))
def test_improved_not_below_simple(n, rs):
    p = hs(n=n, rs=rs, topology="fc", topo_params=(8, 4))
    assert t3_hotstuff_topology_improved(p) >= t3_hotstuff_topology(p) - 1e-9
    assert predict_improved(p).expected_time >= predict(p).expected_time - 1e-9


# -- multichain

def test_multichain_rate():
    assert multichain_effective_rate(9, 3) == 3
    assert multichain_effective_rate(9, 1) == 9
    with pytest.raises(ConfigError):
        multichain_effective_rate(9, 0)


# -- model-wide properties

@settings(max_examples=60)
@given(st.sampled_from(["hotstuff", "ibft"]), st.integers(7, 64), st.data())
def test_q_monotone_in_tau0(proto, n, data):
    nf = data.draw(st.integers(0, (n - 1) // 3))
    a, b = sorted(data.draw(st.lists(st.floats(1, 5000), min_size=2, max_size=2)))
    p = ModelParams(n=n, n_f=nf, protocol=proto)
    qa = predict(p.with_(tau0=a)).q
    qb = predict(p.with_(tau0=b)).q
    assert 0.0 <= qb <= qa <= 1.0


@settings(max_examples=60)
@given(st.sampled_from(["hotstuff", "ibft"]), st.integers(7, 64), st.data())
def test_tail_slope_is_r_over_1_minus_2r(proto, n, data):
    nf = data.draw(st.integers(0, (n - 1) // 3))
    p = ModelParams(n=n, n_f=nf, protocol=proto)
    t1, t2 = 1e6, 2e6
    slope = (predict(p.with_(tau0=t2), q=0).expected_time
             - predict(p.with_(tau0=t1), q=0).expected_time) / (t2 - t1)
    assert slope == pytest.approx(p.r / (1 - 2 * p.r), rel=1e-9, abs=1e-12)


def test_placement_k_matches_default_when_even():
    g = build_topology("df", (4,))
    assert place_validators(g, 40).k_max == ib(n=40, topology="df", topo_params=(4,)).k


def test_hop_distance_property_is_placement_average():
    g = build_topology("fc", (8, 4))
    p = hs(n=31, topology="fc", topo_params=(8, 4))
    assert p.h == pytest.approx(average_hop_distance(g, place_validators(g, 31)))
