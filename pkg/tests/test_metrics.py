import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import all_states, make_instance
from resqlab.ising import IsingModel, energy
from resqlab.linear import detect_mmse
from resqlab.metrics import (QUAMAX_SCHEDULE, XRESQ_SCHEDULE, AnnealSchedule, BerRecord, ber,
                             compute_budget, effective_noise_check, hdelta_bound, ml_occurrence,
                             naive_split_noise, optimum_probability, packet_counts,
                             packet_success_rate, records_from_json, records_to_csv,
                             records_to_json, split_delta_stats, tts)
from resqlab.model import ChannelSpec, generate_instance
from resqlab.pt import SampleSet


def test_ber_examples():
    a = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    assert ber(a, a) == (0, 8, 0.0)
    assert ber(a, 1 - a) == (8, 8, 1.0)
    b = a.copy()
    b[3] ^= 1
    assert ber(a, b) == (1, 8, 0.125)
    with pytest.raises(ValueError):
        ber(a, a[:4])


def test_tts_examples():
    assert tts(0.99, 2.2) == 2.2
    assert tts(1.0, 2.2) == 2.2
    assert tts(0.01, 2.2) == pytest.approx(1008.1, abs=0.05)
    assert tts(0.0, 2.2) == math.inf
    # clamped at one run
    assert tts(0.999, 2.0) == 2.0


@given(p=st.floats(0.001, 0.98), t=st.floats(0.1, 10))
def test_tts_monotone(p, t):
    assert tts(p, t) >= tts(min(1.0, p + 0.01), t) - 1e-9
    assert tts(p, t) >= t


def test_optimum_probability_examples():
    assert optimum_probability(0.5, 2) == 0.75
    assert optimum_probability(0.3, 0) == 0
    assert optimum_probability(1.0, 5) == 1.0
    with pytest.raises(ValueError):
        optimum_probability(1.5, 1)


@given(p=st.floats(0, 1), n=st.integers(0, 50))
def test_optimum_probability_bounds(p, n):
    v = optimum_probability(p, n)
    assert 0 <= v <= 1
    assert optimum_probability(p, n + 1) >= v


def test_ml_occurrence():
    ss = SampleSet([np.ones(2, np.int8)] * 3, np.array([1.5, 1.5, 1.5]))
    assert ml_occurrence(ss, 1.5) == (3, 3)
    assert ml_occurrence([], 1.0) == (0, 0)
    m = IsingModel([0.5, -1.0, 0.25, 0.0], np.triu(np.full((4, 4), 0.3), 1), 2.0)
    states = all_states(4)
    e = energy(m, states) + m.offset
    pool = [(s, v) for s, v in zip(states, e)]
    assert ml_occurrence(pool, e.min()) == (int(np.sum(np.isclose(e, e.min(), atol=1e-6, rtol=0))), 16)


def test_packet_examples():
    assert packet_success_rate(np.zeros(24000, bool)) == 1.0
    e = np.zeros(24000, bool)
    e[[5, 12005]] = True
    assert packet_success_rate(e) == 0.0
    e = np.zeros(24000, bool)
    e[100] = True
    assert packet_success_rate(e) == 0.5
    with pytest.raises(ValueError):
        packet_success_rate(np.zeros(100, bool))


def test_packets_are_per_user():
    e = np.zeros((2, 20), bool)
    e[1, 3] = True
    assert packet_counts(e, 10) == (3, 4)
    # trailing partial window dropped
    assert packet_counts(np.zeros((1, 25), bool), 10) == (2, 2)


def test_compute_budget_values():
    assert compute_budget(XRESQ_SCHEDULE, 100) == 220.0
    assert compute_budget(QUAMAX_SCHEDULE, 100) == 200.0
    assert compute_budget(XRESQ_SCHEDULE, 50) == 110.0
    assert compute_budget(XRESQ_SCHEDULE, 1) == 2.2
    with pytest.raises(ValueError):
        compute_budget(XRESQ_SCHEDULE, 0)


def test_schedule_shape():
    assert XRESQ_SCHEDULE.reverse and not QUAMAX_SCHEDULE.reverse
    assert XRESQ_SCHEDULE.switching_point == 0.4
    with pytest.raises(ValueError):
        AnnealSchedule(((0, 0), (1, 1.5)))


def _rec(**kw):
    base = dict(n_t=4, n_r=4, modulation="QPSK", snr_db=10.0, detector="mmse", l_p=1,
                instances=2, bits_tested=16, bit_errors=2, packets=0, ml_known=2, ml_hits=1)
    base.update(kw)
    return BerRecord(**base)


def test_record_merge_and_serialization():
    a, b = _rec(), _rec(bit_errors=4, energy_gap_sum=1.5)
    m = a.merge(b)
    assert m.bits_tested == 32 and m.ber == 6 / 32
    with pytest.raises(ValueError):
        a.merge(_rec(detector="zf"))
    text = records_to_csv([a, b])
    assert text.splitlines()[0].startswith("n_t,n_r,modulation")
    back = records_from_json(records_to_json([a, _rec(snr_db=12.0)]))
    assert sorted(r.snr_db for r in back) == [10.0, 12.0]
    assert math.isnan(_rec().packet_rate)


def test_split_delta_noise_free_is_zero():
    insts = [generate_instance(ChannelSpec.iid(), 2, 2, "QAM16", math.inf, s) for s in range(5)]
    stats = split_delta_stats(insts, [detect_mmse(i).v_hard for i in insts])
    (s,) = stats.values()
    assert s.p_quadrant == s.p_position == s.p_both == 0


def test_split_delta_forced_position_error():
    inst = make_instance([[1]], [3 + 3j], "QAM16")
    stats = split_delta_stats([inst], [np.array([1 + 1j])], [inst.v_true])
    (s,) = stats.values()
    assert s.p_position == 1 and s.p_quadrant == 0 and s.p_both == 0


def test_split_delta_rejects_qpsk():
    inst = generate_instance(ChannelSpec.iid(), 2, 2, "QPSK", 10.0, 0)
    with pytest.raises(ValueError):
        split_delta_stats([inst], [inst.v_true])


def test_naive_noise():
    assert naive_split_noise(0.0, 2)[0] == 2.0
    assert naive_split_noise(0.0, 2)[1] == 32.0
    assert naive_split_noise(1.0, 1) == (0.75, 9.0)
    assert hdelta_bound(0.0, 4) == 0.0


def test_effective_noise_bound_and_trend():
    snrs = [8.0, 16.0, 24.0, 32.0]
    insts = [generate_instance(ChannelSpec.iid(), 4, 4, "QAM16", snr, s) for snr in snrs for s in range(150)]
    reports = effective_noise_check(insts, [detect_mmse(i).v_hard for i in insts])
    for r in reports.values():
        assert r.effective_noise <= r.bound * (1 + 1e-12)
        assert r.bound_holds
    eff = [reports[s].effective_noise for s in snrs]
    assert eff[-1] < eff[0] / 10
