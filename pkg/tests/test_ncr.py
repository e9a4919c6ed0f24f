"""Repeater state machine and forward-stage tests."""

import math

import numpy as np
import pytest

from ncrsim.ncr import (BeamIndication, NcrOffError, NcrState, SciEntry, SciError,
                        SideControlInfo, amplified_noise_dbm, apply_sci,
                        clear_schedule, forward_gain_db, mt_beam_indication)


def test_default_state_is_off():
    st = NcrState()
    for slot in range(200):
        assert not st.is_on(slot)
        assert mt_beam_indication(st, slot) is None


def test_periodic_sci_full_coverage():
    sci = SideControlInfo("periodic", 80, (SciEntry(0, 80, 7),))
    st = apply_sci(NcrState(), sci)
    for slot in (0, 1, 79, 80, 12345):
        assert st.access_beam(slot) == 7


def test_periodic_sci_partial_coverage():
    sci = SideControlInfo("periodic", 10, (SciEntry(2, 3, 5),))
    st = apply_sci(NcrState(), sci)
    on_slots = {s % 10 for s in range(100) if st.is_on(s)}
    assert on_slots == {2, 3, 4}
    # periodicity property
    for s in range(100):
        assert st.access_beam(s) == st.access_beam(s + 10)


def test_empty_sci_stays_off():
    st = apply_sci(NcrState(), SideControlInfo("periodic", 40, ()))
    assert not any(st.is_on(s) for s in range(200))


def test_overlapping_entries_rejected():
    with pytest.raises(SciError, match="overlap"):
        SideControlInfo("periodic", 40, (SciEntry(10, 5, 1), SciEntry(12, 3, 2)))


def test_dynamic_sci_applies_once():
    sci = SideControlInfo("dynamic", entries=(SciEntry(12, 1, 3),))
    st = apply_sci(NcrState(), sci)
    assert st.access_beam(12) == 3
    assert st.access_beam(13) is None
    # collision with an existing dynamic entry leaves the state unchanged
    with pytest.raises(SciError):
        apply_sci(st, SideControlInfo("dynamic", entries=(SciEntry(12, 1, 9),)))
    assert st.access_beam(12) == 3


def test_dynamic_over_periodic_precedence():
    st = apply_sci(NcrState(), SideControlInfo("periodic", 4, (SciEntry(0, 4, 1),)))
    st = apply_sci(st, SideControlInfo("dynamic", entries=(SciEntry(8, 1, 2),)))
    assert st.access_beam(8) == 2
    assert st.access_beam(9) == 1


def test_semi_persistent_behaves_like_periodic():
    sci = SideControlInfo("semi_persistent", 20, (SciEntry(5, 2, 4),))
    st = apply_sci(NcrState(), sci)
    assert st.access_beam(25) == 4
    assert st.access_beam(28) is None


def test_clear_schedule():
    st = apply_sci(NcrState(), SideControlInfo("periodic", 4, (SciEntry(0, 4, 1),)))
    st = clear_schedule(st)
    assert not st.is_on(0)


def test_sci_validation():
    with pytest.raises(SciError):
        SideControlInfo("sporadic", 10, ())
    with pytest.raises(SciError):
        SideControlInfo("periodic", 0, ())
    with pytest.raises(SciError):
        SideControlInfo("periodic", 10, (SciEntry(0, 0, 1),))
    with pytest.raises(SciError):
        SideControlInfo("periodic", 10, (SciEntry(8, 5, 1),))


def test_forward_gain_below_cap():
    gain, out = forward_gain_db(NcrState(), -70.0)
    assert (gain, out) == (90.0, 20.0)


def test_forward_gain_compressed():
    gain, out = forward_gain_db(NcrState(), -50.0)
    assert (gain, out) == (83.0, 33.0)


def test_forward_gain_cap_boundary():
    gain, out = forward_gain_db(NcrState(), -57.0)
    assert (gain, out) == (90.0, 33.0)


def test_forward_gain_exact_min_identity():
    st = NcrState()
    for inp in np.linspace(-120.0, 10.0, 1301):
        gain, out = forward_gain_db(st, float(inp))
        assert gain == min(90.0, 33.0 - float(inp))
        assert out <= 33.0
        assert gain <= 90.0


def test_forward_gain_off_errors():
    with pytest.raises(NcrOffError):
        forward_gain_db(NcrState(), -70.0, on=False)


def test_amplified_noise_examples():
    st = NcrState()
    # one RB (720 kHz), NF 9 dB, full gain
    v = amplified_noise_dbm(st, 9.0, 720e3)
    assert v == pytest.approx(-174.0 + 10 * math.log10(720e3) + 9.0 + 90.0, abs=1e-12)
    assert v == pytest.approx(-16.43, abs=0.01)
    # compressed gain via the per-slot effective gain
    st83 = NcrState(current_gain_db=83.0)
    assert amplified_noise_dbm(st83, 9.0, 720e3) == pytest.approx(-23.43, abs=0.01)
    # bare thermal floor
    st0 = NcrState(amp_gain_db=0.0)
    assert amplified_noise_dbm(st0, 0.0, 1.0) == pytest.approx(-174.0, abs=1e-12)


def test_amplified_noise_off_errors():
    with pytest.raises(NcrOffError):
        amplified_noise_dbm(NcrState(), 9.0, 720e3, on=False)


def test_mt_beam_indication():
    st = apply_sci(NcrState(backhaul_beam=11),
                   SideControlInfo("periodic", 4, (SciEntry(0, 2, 6),)))
    ind = mt_beam_indication(st, 0)
    assert ind == BeamIndication(6, 11, "DL")
    ind_ul = mt_beam_indication(st, 1)
    assert ind_ul == BeamIndication(6, 11, "UL")
    assert mt_beam_indication(st, 2) is None
    assert mt_beam_indication(st, 3) is None


def test_tdd_pattern_static():
    st = NcrState()
    for slot in range(0, 50, 2):
        assert st.tdd_direction(slot) == "DL"
        assert st.tdd_direction(slot + 1) == "UL"


def test_backhaul_beam_persists():
    st = apply_sci(NcrState(backhaul_beam=4),
                   SideControlInfo("periodic", 8, (SciEntry(0, 8, 1),)))
    assert st.backhaul_beam == 4
    st = apply_sci(st, SideControlInfo("dynamic", entries=(SciEntry(100, 1, 2),)))
    assert st.backhaul_beam == 4
