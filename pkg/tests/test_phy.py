"""Link-budget, SINR decomposition and link-adaptation tests."""

import math

import numpy as np
import pytest

from ncrsim.ncr import NcrState
from ncrsim.phy import (COMPONENT_FLOOR_DBM, SINR_FLOOR_DB, BeamMap, McsTable,
                        ServedEntry, SinrEvaluator, compose_sample, dbm_to_mw,
                        mw_to_dbm, noise_dbm, outage_sample, rsrp_direct_dbm,
                        rsrp_forwarded_dbm, select_mcs, tb_bits)
from ncrsim.rng import substream

N_RB = 66
RB_BW = 720e3
NF = 9.0


class FlatGains:
    """Beam-agnostic flat gain provider for synthetic budget tests."""

    def __init__(self, n_rb, du=None, au=None, hn=None):
        self.n_rb = n_rb
        self.du = du or {}
        self.au = au or {}
        self.hn = hn or {}

    def _full(self, lin):
        return np.full(self.n_rb, lin)

    def gnb_ue_rbs(self, g, u, beam_map):
        active = beam_map.expand(self.n_rb) >= 0
        return np.where(active, self.du.get((g, u), 0.0), 0.0)

    def gnb_ue_beams(self, g, u, beams):
        return np.tile(self._full(self.du.get((g, u), 0.0)), (len(beams), 1))

    def ncr_ue(self, n, u, beam):
        return self._full(self.au.get((n, u), 0.0))

    def gnb_ncr_rbs(self, g, n, beam_map):
        active = beam_map.expand(self.n_rb) >= 0
        return np.where(active, self.hn.get((g, n), 0.0), 0.0)

    def gnb_ncr_beams(self, g, n, beams):
        return np.tile(self._full(self.hn.get((g, n), 0.0)), (len(beams), 1))


def _evaluator(gains, gnb_dbm=35.0, ue_dbm=24.0):
    return SinrEvaluator(N_RB, RB_BW, NF, gnb_dbm, ue_dbm, gains)


def _full_map():
    return np.zeros(N_RB, dtype=int)


def test_noise_dbm():
    assert noise_dbm(720e3, 9.0) == pytest.approx(-174 + 10 * math.log10(720e3) + 9)
    assert noise_dbm(1.0) == pytest.approx(-174.0)


def test_rsrp_per_re_power_split():
    p_re = 35.0 - 10 * math.log10(66 * 12)
    assert p_re == pytest.approx(6.01, abs=0.005)
    assert rsrp_direct_dbm(p_re, -100.0) == pytest.approx(p_re - 100.0)
    assert rsrp_forwarded_dbm(p_re, -66.0, 90.0, -105.0) == pytest.approx(
        p_re - 66.0 + 90.0 - 105.0)


def test_rsrp_forwarded_zero_gain_is_pure_cascade():
    p_re = 6.0
    assert rsrp_forwarded_dbm(p_re, -70.0, 0.0, -80.0) == pytest.approx(
        p_re - 70.0 - 80.0)


def test_compose_sample_roundtrip():
    rng = substream(1, "roundtrip")
    for _ in range(500):
        comps_mw = 10.0 ** rng.uniform(-15, -5, 6)
        s = compose_sample(0, "DL", 0, "direct", 0, None, 0, 66, *comps_mw)
        parts = [s.components.ncr_noise, s.components.rx_noise,
                 s.components.direct_interf, s.components.fwd_interf,
                 s.components.fwd_noise_interf]
        denom = sum(dbm_to_mw(p) for p in parts)
        rebuilt = 10 * math.log10(dbm_to_mw(s.components.signal) / denom)
        assert abs(rebuilt - s.sinr_db) < 1e-9


def test_outage_sample_floor():
    s = outage_sample(5, "UL", 3)
    assert s.sinr_db == SINR_FLOOR_DB
    assert s.link_type == "outage"
    assert s.components.signal == COMPONENT_FLOOR_DBM


def test_mcs_table_default_valid():
    t = McsTable.default()
    assert t.n_entries == 16
    assert t.efficiency[0] == pytest.approx(0.1523)
    assert t.efficiency[15] == pytest.approx(5.5547)
    assert np.all(np.diff(t.thresholds_db) > 0)
    assert np.all(np.diff(t.efficiency) > 0)


def test_mcs_table_rejects_nonmonotone():
    with pytest.raises(ValueError):
        McsTable(np.array([0.0, 1.0, 1.0]), np.array([1.0, 2.0, 3.0]))


def test_select_mcs_boundaries():
    t = McsTable.default()
    assert select_mcs(t, t.thresholds_db[15] + 10.0) == 15
    assert select_mcs(t, float(t.thresholds_db[7])) == 7  # inclusive lower bound
    assert select_mcs(t, t.thresholds_db[0] - 0.01) is None


def test_select_mcs_monotone():
    t = McsTable.default()
    prev = -1
    for sinr in np.linspace(-20, 40, 400):
        m = select_mcs(t, float(sinr))
        cur = -1 if m is None else m
        assert cur >= prev
        prev = cur


def test_tb_bits_values():
    # floor(5.5547 * 66 * 12 * 14); the adopted efficiency table is authoritative
    assert tb_bits(15, 66) == 61590
    assert tb_bits(15, 0) == 0
    assert tb_bits(0, 1) == int(0.1523 * 12 * 14)


def test_throughput_saturates_at_top_mcs():
    t = McsTable.default()
    assert select_mcs(t, 40.0) == select_mcs(t, 50.0) == 15


def test_dl_isolated_link_is_snr():
    # single gNB, no repeaters, no interferers: SINR = S/N, iv-vi exactly zero
    g_lin = 10 ** (-9.0)
    gains = FlatGains(N_RB, du={(0, 0): g_lin})
    ev = _evaluator(gains)
    served = [ServedEntry(0, 0, None, 0, N_RB, 4)]
    samples, fwd = ev.evaluate_dl(0, served, {0: _full_map()}, {})
    assert fwd == {}
    s = samples[0]
    expected = (ev.gnb_rb_mw * g_lin * N_RB) / (ev.rb_noise_mw * N_RB)
    assert s.sinr_db == pytest.approx(10 * math.log10(expected), abs=1e-9)
    assert s.components.direct_interf == COMPONENT_FLOOR_DBM
    assert s.components.fwd_interf == COMPONENT_FLOOR_DBM
    assert s.components.fwd_noise_interf == COMPONENT_FLOOR_DBM
    assert s.components.ncr_noise == COMPONENT_FLOOR_DBM


def _af_oracle(p_rb_dbm, g_bh_db, g_ac_db, amp_db, cap_dbm, n_rb):
    """Brute-force two-hop budget in plain dB arithmetic."""
    n_rb_noise = -174.0 + 10 * math.log10(RB_BW) + NF
    carrier_noise = -174.0 + 10 * math.log10(RB_BW * n_rb) + NF
    input_total = 10 * math.log10(
        10 ** ((p_rb_dbm + g_bh_db) / 10.0) * n_rb + 10 ** (carrier_noise / 10.0))
    gain = min(amp_db, cap_dbm - input_total)
    sig = p_rb_dbm + g_bh_db + gain + g_ac_db
    ncr_noise = n_rb_noise + gain + g_ac_db
    denom = 10 ** (ncr_noise / 10.0) + 10 ** (n_rb_noise / 10.0)
    gamma = 10 ** (sig / 10.0) / denom
    gamma_bh = 10 ** ((p_rb_dbm + g_bh_db) / 10.0) / 10 ** (n_rb_noise / 10.0)
    gamma_ac = 10 ** (sig / 10.0) / 10 ** (n_rb_noise / 10.0)
    return 10 * math.log10(gamma), gamma_bh, gamma_ac


def test_forwarded_af_budget_matches_oracle():
    rng = substream(7, "af")
    p_rb_dbm = 35.0 - 10 * math.log10(N_RB)
    for _ in range(300):
        g_bh_db = rng.uniform(-110.0, -40.0)
        g_ac_db = rng.uniform(-120.0, -60.0)
        gains = FlatGains(N_RB, hn={(0, 0): 10 ** (g_bh_db / 10)},
                          au={(0, 0): 10 ** (g_ac_db / 10)})
        ev = _evaluator(gains)
        served = [ServedEntry(0, 0, 0, 0, N_RB, 2)]
        access = {0: (NcrState(), 5)}
        samples, fwd = ev.evaluate_dl(0, served, {0: _full_map()}, access)
        got = samples[0].sinr_db
        want, gamma_bh, gamma_ac = _af_oracle(p_rb_dbm, g_bh_db, g_ac_db,
                                              90.0, 33.0, N_RB)
        assert abs(got - want) < 1e-6
        # end-to-end never beats either hop
        assert 10 ** (got / 10.0) <= min(gamma_bh, gamma_ac) * (1 + 1e-12)
        # fixed-gain relay lower bound
        lo = gamma_bh * gamma_ac / (gamma_bh + gamma_ac + 1.0)
        assert 10 ** (got / 10.0) >= lo * (1 - 1e-9)


def test_forwarded_path_below_both_hops():
    gains = FlatGains(N_RB, hn={(0, 0): 10 ** (-7.0)}, au={(0, 0): 10 ** (-9.0)})
    ev = _evaluator(gains)
    served = [ServedEntry(0, 0, 0, 0, N_RB, 2)]
    samples, _ = ev.evaluate_dl(0, served, {0: _full_map()}, {0: (NcrState(), 5)})
    got_lin = 10 ** (samples[0].sinr_db / 10.0)
    _, gamma_bh, gamma_ac = _af_oracle(35.0 - 10 * math.log10(N_RB), -70.0, -90.0,
                                       90.0, 33.0, N_RB)
    assert got_lin < gamma_bh
    assert got_lin < gamma_ac


def test_interference_never_helps():
    # adding an interfering gNB can only lower the victim's SINR
    rng = substream(9, "mono")
    for _ in range(100):
        du = {(0, 0): 10 ** rng.uniform(-11, -8)}
        gains1 = FlatGains(N_RB, du=dict(du))
        ev1 = _evaluator(gains1)
        served = [ServedEntry(0, 0, None, 0, N_RB, 1)]
        base = ev1.evaluate_dl(0, served, {0: _full_map()}, {})[0][0].sinr_db
        du[(1, 0)] = 10 ** rng.uniform(-13, -9)
        gains2 = FlatGains(N_RB, du=du)
        ev2 = _evaluator(gains2)
        maps = {0: _full_map(), 1: _full_map()}
        both = ev2.evaluate_dl(0, served, maps, {})[0][0].sinr_db
        assert both <= base + 1e-12


def test_ul_mirrors_dl_minus_power_delta():
    # symmetric reciprocal toy link, UE allocated the full carrier
    g_lin = 10 ** (-9.5)
    gains = FlatGains(N_RB, du={(0, 0): g_lin})
    ev = _evaluator(gains)
    served_dl = [ServedEntry(0, 0, None, 0, N_RB, 3)]
    dl = ev.evaluate_dl(0, served_dl, {0: _full_map()}, {})[0][0].sinr_db
    ul = ev.evaluate_ul(1, served_dl, {0: 0}, {})[0][0].sinr_db
    assert ul == pytest.approx(dl - (35.0 - 24.0), abs=1e-9)


def test_ul_zero_power_floor():
    gains = FlatGains(N_RB, du={(0, 0): 1e-9})
    ev = SinrEvaluator(N_RB, RB_BW, NF, 35.0, -math.inf, gains)
    served = [ServedEntry(0, 0, None, 0, N_RB, 3)]
    s = ev.evaluate_ul(1, served, {0: 0}, {})[0][0]
    assert s.sinr_db == SINR_FLOOR_DB


def test_all_ncrs_off_equals_macro_only():
    du = {(0, 0): 1e-9, (1, 0): 2e-11}
    gains_with = FlatGains(N_RB, du=dict(du), au={(0, 0): 1e-8}, hn={(0, 0): 1e-6})
    gains_without = FlatGains(N_RB, du=dict(du))
    served = [ServedEntry(0, 0, None, 0, N_RB, 1)]
    maps = {0: _full_map(), 1: _full_map()}
    with_off = _evaluator(gains_with).evaluate_dl(0, served, maps, {})[0][0]
    without = _evaluator(gains_without).evaluate_dl(0, served, maps, {})[0][0]
    assert with_off.sinr_db == without.sinr_db  # bit-identical


def test_ncr_cap_compresses_totals():
    # strong backhaul drives the repeater input above the cap
    gains = FlatGains(N_RB, hn={(0, 0): 10 ** (-4.0)}, au={(0, 0): 1e-10})
    ev = _evaluator(gains)
    served = [ServedEntry(0, 0, 0, 0, N_RB, 2)]
    _, fwd = ev.evaluate_dl(0, served, {0: _full_map()}, {0: (NcrState(), 5)})
    input_dbm = mw_to_dbm(ev.gnb_rb_mw * 10 ** (-4.0) * N_RB + ev.carrier_noise_mw)
    assert fwd[0] == pytest.approx(33.0 - input_dbm, abs=1e-12)
    assert fwd[0] < 90.0


def test_beam_map_roundtrip():
    arr = np.array([-1, -1, 3, 3, 7, -1])
    bm = BeamMap.from_per_rb(arr)
    assert np.array_equal(bm.expand(6), arr)
    assert set(bm.beams.tolist()) == {3, 7}
