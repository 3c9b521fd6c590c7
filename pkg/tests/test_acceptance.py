"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Sweeps go through ``run_experiment`` so that every instance also feeds the
anti-regression tally checked by criterion 4.
"""

import math
import time

import numpy as np
import pytest

from conftest import all_states
from resqlab.experiment import ExperimentConfig, load_config, run_experiment
from resqlab.ising import build_ml_ising, energy
from resqlab.linear import detect_mmse
from resqlab.metrics import (QUAMAX_SCHEDULE, XRESQ_SCHEDULE, compute_budget,
                             effective_noise_check, naive_split_noise, optimum_probability,
                             split_delta_stats, tts)
from resqlab.model import ChannelSpec, Constellation, generate_instance
from resqlab.oracle import brute_force_ml

pytestmark = pytest.mark.acceptance

# anti-regression violations seen by every sweep in this module
_VIOLATIONS = {"instances": 0, "violations": 0}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def _sweep(tmp_path, name, **kw):
    kw.setdefault("output_dir", str(tmp_path / name))
    summary = run_experiment(ExperimentConfig(**kw))
    assert not summary.failures, summary.failures
    for r in summary.records:
        if r.detector in ("xresq", "xresq-split") or r.detector.startswith("iotresq"):
            _VIOLATIONS["instances"] += r.instances
            _VIOLATIONS["violations"] += r.anti_regression_violations
    return summary


def _by(records, **match):
    return [r for r in records if all(getattr(r, k) == v for k, v in match.items())]


def _diff_sigma(a, b):
    """Binomial standard error of ``ber(a) - ber(b)`` under the pooled rate."""
    p = (a.bit_errors + b.bit_errors) / (a.bits_tested + b.bits_tested)
    return math.sqrt(p * (1 - p) * (1 / a.bits_tested + 1 / b.bits_tested))


def test_criterion_01_ising_exhaustive(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mods = ["BPSK", "QPSK", "QAM16"]
    worst_rel, gs_bad = 0.0, 0
    for k in range(500):
        c = Constellation.from_name(mods[k % 3])
        n_t = int(rng.integers(1, 16 // c.bits_per_symbol + 1))
        n_r = n_t + int(rng.integers(0, 3))
        inst = generate_instance(ChannelSpec.iid(), n_t, n_r, c, float(rng.uniform(0, 30)),
                                 int(rng.integers(2**63)))
        model = build_ml_ising(inst)
        states = all_states(model.n_v)
        e = energy(model, states) + model.offset
        r = inst.y[None, :] - model.mapping.to_symbols(states) @ inst.H.T
        resid = np.einsum("ij,ij->i", r.real, r.real) + np.einsum("ij,ij->i", r.imag, r.imag)
        worst_rel = max(worst_rel, float(np.max(np.abs(e - resid) / np.maximum(resid, 1e-300))))
        v_ml, obj = brute_force_ml(inst)
        gs = int(np.argmin(e))
        minimizers = np.flatnonzero(e <= e[gs] * (1 + 1e-12) + 1e-12)
        decoded_ok = any(np.array_equal(model.mapping.to_symbols(states[i]), v_ml) for i in minimizers)
        if abs(e[gs] - obj) > 1e-9 * max(obj, 1.0) or not decoded_ok:
            gs_bad += 1
    dt = time.perf_counter() - t0
    ok = worst_rel <= 1e-9 and gs_bad == 0 and dt < 60
    assert report(1, ok, f"500 instances, max rel err {worst_rel:.2e} (tol 1e-9), "
                         f"ground-state mismatches {gs_bad}, {dt:.1f}s (<60s)")


def test_criterion_02_tts_formulas(report):
    rng = np.random.default_rng(7)
    trials = 100_000
    lines, ok = [], tts(0.99, 2.2) == 2.2 and tts(0.99, 2.0) == 2.0
    for p in (0.01, 0.1, 0.5):
        first = rng.geometric(p, size=trials)  # run index of the first success
        for count in (1, 2, 4, 6):
            emp = float(np.mean(first <= count))
            ref = optimum_probability(p, count)
            sig = math.sqrt(ref * (1 - ref) / trials)
            ok &= abs(emp - ref) <= 3 * sig + 1e-12
        runs = tts(p, 1.0)
        # the 0.99 quantile of the first-success index brackets tts / T_a
        lo, hi = float(np.mean(first <= math.floor(runs))), float(np.mean(first <= math.ceil(runs)))
        sig = math.sqrt(0.99 * 0.01 / trials)
        ok &= lo <= 0.99 + 3 * sig and hi >= 0.99 - 3 * sig
        lines.append(f"p={p}: R={runs:.2f}, P(K<=R) in [{lo:.4f}, {hi:.4f}]")
    assert report(2, ok, "; ".join(lines) + "; tts(0.99,T)=T exact")


def test_criterion_03_compute_budget(report):
    x, q = compute_budget(XRESQ_SCHEDULE, 100), compute_budget(QUAMAX_SCHEDULE, 100)
    assert report(3, x == 220.0 and q == 200.0, f"X-ResQ {x} us (220), QuAMax {q} us (200)")


def test_criterion_05_oracle_hits(tmp_path, report):
    t0 = time.perf_counter()
    s = _sweep(tmp_path, "c5", n_t=[4], n_r=[4], modulation=["QPSK"], snr_db=[20.0],
               detectors=["xresq"], l_p=[4], instances_per_point=200, n_sweeps=50, n_replicas=8,
               master_seed=5)
    dt = time.perf_counter() - t0
    (rec,) = s.records
    ok = rec.ml_known == 200 and rec.ml_hit_rate >= 0.95 and dt < 120
    assert report(5, ok, f"ML hits {rec.ml_hits}/{rec.ml_known} ({rec.ml_hit_rate:.3f} >= 0.95), {dt:.1f}s (<120s)")


def test_criterion_06_lp_trend(tmp_path, report):
    t0 = time.perf_counter()
    s = _sweep(tmp_path, "c6", n_t=[4], n_r=[6], modulation=["QAM16"], snr_db=[20.0],
               detectors=["xresq", "bruteforce"], l_p=[1, 2, 4, 6], instances_per_point=6250,
               master_seed=6)
    dt = time.perf_counter() - t0
    xr = {r.l_p: r for r in _by(s.records, detector="xresq")}
    ml = _by(s.records, detector="ml", l_p=1)[0]
    bits = min(r.bits_tested for r in xr.values())
    mono = all(xr[b].ber <= xr[a].ber + 3 * _diff_sigma(xr[a], xr[b])
               for a, b in zip((1, 2, 4), (2, 4, 6)))
    near_ml = xr[6].ber <= 2 * ml.ber
    ok = bits >= 100_000 and mono and near_ml and dt < 600
    bers = ", ".join(f"l_p={k}: {xr[k].ber:.2e}" for k in sorted(xr))
    assert report(6, ok, f"{bits} bits/point; {bers}; ML {ml.ber:.2e}; non-increasing(3sigma)={mono}, "
                         f"l_p=6 within 2x ML={near_ml}; {dt:.0f}s (<600s)")


def test_criterion_07_large_mimo(tmp_path, report):
    t0 = time.perf_counter()
    s = _sweep(tmp_path, "c7", n_t=[64], n_r=[64], modulation=["QPSK"], snr_db=[14.0],
               detectors=["mmse", "xresq", "paramax"], l_p=[4], instances_per_point=782,
               ml_budget=1, master_seed=7)
    dt = time.perf_counter() - t0
    b = {r.detector: r for r in s.records}
    x, m, p = b["xresq"].ber, b["mmse"].ber, b["paramax"].ber
    vs_mmse = x < m and 5 * x <= m
    vs_paramax = x < p and 5 * x <= p
    ok = b["xresq"].bits_tested >= 100_000 and vs_mmse and vs_paramax and dt < 900
    assert report(7, ok, f"{b['xresq'].bits_tested} bits; BER X-ResQ {x:.2e}, MMSE {m:.2e}, "
                         f"ParaMax {p:.2e}; 5x below MMSE={vs_mmse}, 5x below ParaMax={vs_paramax}; "
                         f"{dt:.0f}s (<900s)")


def test_criterion_08_split_packets(tmp_path, report):
    s = _sweep(tmp_path, "c8", n_t=[4], n_r=[4], modulation=["QAM16"], snr_db=[28.0],
               detectors=["xresq", "xresq-split"], l_p=[4], instances_per_point=75_000,
               packet_bits=12_000, ml_budget=1, master_seed=8)
    b = {r.detector: r for r in s.records}
    base, split = b["xresq"], b["xresq-split"]
    paired = base.instance_digest == split.instance_digest
    ok = paired and min(base.packets, split.packets) >= 100 and split.packet_rate >= base.packet_rate
    assert report(8, ok, f"{split.packets} packets each (paired={paired}); packet success XResQSplit "
                         f"{split.packet_rate:.3f} vs XResQ {base.packet_rate:.3f}; bit errors "
                         f"{split.bit_errors} vs {base.bit_errors}")


def test_criterion_04_anti_regression(tmp_path, report):
    for mod, lps in (("QPSK", [1, 2, 4, 6]), ("QAM16", [1, 2, 4, 16])):
        _sweep(tmp_path, f"c4-{mod}", n_t=[4], n_r=[4, 6], modulation=[mod], snr_db=[6.0, 14.0, 22.0, 30.0],
               detectors=["xresq", "xresq-split", "iotresq", "iotresq:2"], l_p=lps,
               instances_per_point=60, n_sweeps=5, ml_budget=1, master_seed=4)
    n, v = _VIOLATIONS["instances"], _VIOLATIONS["violations"]
    assert report(4, v == 0 and n > 0, f"{v} violations over {n} detector-instance pairs in all sweeps")


def test_criterion_09_split_diagnostics(report):
    snrs = [8.0, 12.0, 16.0, 20.0, 24.0]
    insts = [generate_instance(ChannelSpec.iid(), 4, 4, "QAM16", snr, 10_000 * int(snr) + i)
             for snr in snrs for i in range(300)]
    mmse = [detect_mmse(i).v_hard for i in insts]
    stats = split_delta_stats(insts, mmse)
    mono = True
    for attr in ("quadrant_wrong", "position_wrong", "both_wrong"):
        for a, b in zip(snrs, snrs[1:]):
            sa, sb = stats[a], stats[b]
            pa, pb = getattr(sa, attr) / sa.symbols, getattr(sb, attr) / sb.symbols
            pool = (getattr(sa, attr) + getattr(sb, attr)) / (sa.symbols + sb.symbols)
            sig = math.sqrt(pool * (1 - pool) * (1 / sa.symbols + 1 / sb.symbols))
            mono &= pb <= pa + 3 * sig
    noise = effective_noise_check(insts, mmse)
    bound_ok = all(r.effective_noise <= r.bound * (1 + 1e-12) for r in noise.values())
    naive = naive_split_noise(0.0, 2)[0]
    ok = mono and bound_ok and naive == 2.0
    pos = ", ".join(f"{s:g}dB {stats[s].p_position:.3f}" for s in snrs)
    assert report(9, ok, f"monotone(3sigma)={mono} [P(position wrong): {pos}]; bound held at all SNRs="
                         f"{bound_ok}; naive noise(0, N=2)={naive}")


def test_criterion_10_determinism(tmp_path, report):
    common = dict(n_t=[4], n_r=[4, 5], modulation=["QPSK", "QAM16"], snr_db=[12.0],
                  detectors=["mmse", "xresq", "xresq-split", "paramax", "iotresq", "bruteforce"],
                  l_p=[2, 4, 16], instances_per_point=12, n_sweeps=10, master_seed=10)
    outputs = []
    for workers in (1, 2, 3):
        cfg = ExperimentConfig(output_dir=str(tmp_path / f"w{workers}"), **common)
        s = run_experiment(cfg, workers=workers)
        outputs.append((open(s.paths["csv"], "rb").read(), open(s.paths["json"], "rb").read()))
    again = load_config(tmp_path / "w1" / "manifest.json", [f"output_dir=\"{tmp_path / 'rerun'}\""])
    s = run_experiment(again, workers=2)
    outputs.append((open(s.paths["csv"], "rb").read(), open(s.paths["json"], "rb").read()))
    ok = all(o == outputs[0] for o in outputs)
    assert report(10, ok, f"results.csv/json byte-identical across workers 1/2/3 and a manifest re-run: {ok}")
