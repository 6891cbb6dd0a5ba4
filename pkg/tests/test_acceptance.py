"""Acceptance suite. Each test carries its criterion tag; the terminal summary
prints one PASS/FAIL line per criterion with the measured values."""

import dataclasses
import math
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import DESK_SPREADING
from ofcdm import metrics, phy
from ofcdm.cli import main
from ofcdm.config import SystemConfig
from ofcdm.protocol import BASELINE, PROBING
from ofcdm.trace import check_trace, simulate_trace
from ofcdm.validation import (
    GroupLink,
    analytic_powers,
    binomial_interval,
    conditional_ber,
    empirical_powers,
    q_reference,
)

OUTAGE_CASES = [(M_y, s) for M_y in (8, 16) for s in (0.5, 1.0)]
SIGMA = 1 / math.sqrt(2)


# -- 1: closed-form outage vs sum-of-Rayleigh oracle ---------------------------

@pytest.fixture(scope="module")
def outage_tables():
    t0 = time.perf_counter()
    out = {}
    for M_y, sigma in OUTAGE_CASES:
        grid = np.linspace(0.0, 4 * M_y * sigma, 401)
        approx = metrics.outage_cdf_approx(grid, metrics.OutageParams.for_group(M_y, sigma))
        oracle = metrics.outage_cdf_oracle(grid, M_y, sigma, samples=10**6, seed=M_y)
        out[M_y, sigma] = grid, approx, oracle
    return out, time.perf_counter() - t0


@pytest.mark.criterion("1", "outage approximation sup gap <= 0.02, F(0) = 0, monotone oracle, < 30 s")
def test_outage_sup_gap(outage_tables, record_property):
    tables, elapsed = outage_tables
    gaps = {k: float(np.max(np.abs(a - o))) for k, (_, a, o) in tables.items()}
    record_property("detail", "sup gap " + ", ".join(f"M_y={m} sigma={s:g}: {g:.4f}" for (m, s), g in gaps.items())
                    + f"; {elapsed:.1f} s")
    assert elapsed < 30
    assert max(gaps.values()) <= 0.02


@pytest.mark.criterion("1", "outage approximation sup gap <= 0.02, F(0) = 0, monotone oracle, < 30 s")
def test_outage_origin_and_monotone(outage_tables):
    tables, _ = outage_tables
    for grid, approx, oracle in tables.values():
        assert grid[0] == 0.0 and approx[0] == 0.0
        assert np.all(np.diff(oracle) >= 0)


# -- 2: larger groups lower the outage at low normalized thresholds ------------

@pytest.mark.criterion("2", "M_y 8 -> 16 strictly lowers oracle outage over the lower half of the normalized grid")
def test_group_size_lowers_outage(record_property):
    norm = np.round(np.arange(0.5, 1.5001, 0.05), 10)
    lower = norm[: len(norm) // 2]
    margins = []
    for sigma in (0.5, 1.0):
        cdf = {M_y: metrics.outage_cdf_oracle(lower * metrics.rayleigh_sum_mean(M_y, sigma), M_y, sigma,
                                              samples=10**6, seed=7) for M_y in (8, 16)}
        margins.append(float(np.min(cdf[8] - cdf[16])))
        assert np.all(cdf[16] < cdf[8]), sigma
    record_property("detail", f"thresholds {lower[0]:g}..{lower[-1]:g}; min P8-P16 {min(margins):.2e}")


# -- 3: conditional BER ------------------------------------------------------------

@pytest.mark.criterion("3", "single-user chip-level BER within 99% binomial CI of Q(sqrt(2 P_d/P_n)), 1e5 frames, < 60 s")
@pytest.mark.parametrize("seed,M_y,N", [(101, 8, 4), (202, 16, 4)])
def test_conditional_ber(seed, M_y, N, record_property):
    t0 = time.perf_counter()
    link = GroupLink.draw(1, M_y, N, SIGMA, seed)
    g = link.gains[0]
    # noise level that puts the expected BER near 1e-2
    link.N_o = phy.desired_power(g, N, 1.0) / (2.33**2 / 2 * phy.noise_power(g, N, 1.0))
    errors, n, p0 = conditional_ber(link, 100_000, seed + 1)
    lo, hi = binomial_interval(p0, n)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{M_y}x{N}: {errors} errors in [{lo}, {hi}] ({elapsed:.1f} s)")
    assert lo <= errors <= hi
    assert elapsed < 60


# -- 4: analytic powers ------------------------------------------------------------

@pytest.mark.criterion("4", "despread desired/noise/MAI powers within 1%/2%/15% of the analytic forms (K_y = 8)")
def test_power_formulas(record_property):
    seed = SystemConfig().master_seed
    link = GroupLink.draw(8, 8, 4, SIGMA, seed, N_o=1.0)
    emp, ana = empirical_powers(link, 100_000, seed + 1), analytic_powers(link)
    rel = {k: abs(emp[k] / ana[k] - 1) for k in ("desired", "noise", "mai")}
    record_property("detail", ", ".join(f"{k} {v:.2%}" for k, v in rel.items()))
    assert rel["desired"] <= 0.01
    assert rel["noise"] <= 0.02
    assert rel["mai"] <= 0.15


# -- 5: BER curves at desk scale -------------------------------------------------

@pytest.mark.criterion("5a", "probing BER <= baseline BER at every Eb/N0 >= 4 dB")
def test_probing_not_worse(desk_curves, record_property):
    curves, _ = desk_curves
    worst = []
    for key in DESK_SPREADING:
        p, b = curves[key][PROBING], curves[key][BASELINE]
        for pp, bb in zip(p.points, b.points):
            if pp.ebn0_db >= 4:
                worst.append((pp.ber - bb.ber, key, pp.ebn0_db))
    record_property("detail", "max(probing - baseline) = {:.2e} at {}x{} {:g} dB".format(
        max(worst)[0], *max(worst)[1], max(worst)[2]))
    assert all(d <= 0 for d, _, _ in worst)


@pytest.mark.criterion("5b", "horizontal gain at BER 1e-2 in [1.0, 4.0] dB")
def test_horizontal_gain(desk_curves, record_property):
    curves, _ = desk_curves
    gains = {key: metrics.horizontal_gain_db(curves[key][BASELINE], curves[key][PROBING], 1e-2)
             for key in DESK_SPREADING}
    record_property("detail", ", ".join(f"{m}x{n}: {g:.2f} dB" for (m, n), g in gains.items()))
    assert all(1.0 <= g <= 4.0 for g in gains.values())


@pytest.mark.criterion("5c", "four desk-scale curves computed in < 5 min")
def test_curves_runtime(desk_curves, record_property):
    curves, elapsed = desk_curves
    record_property("detail", f"{elapsed:.0f} s for {2 * len(curves)} curves")
    assert elapsed < 300
    assert all(len(c.points) == len(metrics.DEFAULT_EBN0_GRID) for m in curves.values() for c in m.values())


# -- 6: protocol invariants over random scenarios --------------------------------

_scenario_count = [0]


@st.composite
def scenarios(draw):
    M_y = draw(st.sampled_from([1, 2, 4, 8, 16]))
    Y = draw(st.sampled_from([1, 2, 4, 8]))
    N = draw(st.sampled_from([1, 2, 4, 8]))
    return SystemConfig(total_subcarriers=M_y * Y, group_size=M_y, time_spread=N,
                        max_users=draw(st.integers(1, Y * N)), burst_bits=draw(st.integers(1, 8)),
                        arrival_rate=draw(st.floats(0.0, 4.0)), noise_density=draw(st.floats(0.0, 4.0)),
                        rayleigh_scale=draw(st.floats(0.1, 2.0)), master_seed=draw(st.integers(0, 2**64 - 1)),
                        frames_per_trial=draw(st.integers(5, 50)), warmup_frames=0)


@settings(max_examples=1000, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])
@given(scenarios(), st.sampled_from([PROBING, BASELINE]))
def _replay(cfg, mode):
    _scenario_count[0] += 1
    rep = check_trace(simulate_trace(cfg, mode), cfg, mode)
    assert not rep.collisions
    assert not rep.argmax_violations
    assert not rep.bad_bursts
    assert rep.ok, rep.summary()
    overhead = 2 if mode == PROBING else 0
    assert all(b.data_frames == cfg.burst_bits and b.overhead == overhead for b in rep.bursts)


@pytest.mark.criterion("6", "no tone collisions, argmax grants, xi data + 2 (probing) / 0 (baseline) overhead frames")
def test_protocol_invariants(record_property):
    _scenario_count[0] = 0
    _replay()
    record_property("detail", f"{_scenario_count[0]} randomized scenarios")
    assert _scenario_count[0] >= 1000


# -- 7: numerical kernels ----------------------------------------------------------

@pytest.mark.criterion("7", "Q error <= 1e-7, (15)!! exact, psi(8,1) = 0.76780 +- 1e-4, tabulated constants verbatim")
def test_numerical_kernels(record_property):
    xs = np.linspace(-8, 8, 100)
    err = max(abs(float(metrics.q_function(x)) - q_reference(x)) for x in xs)
    p = metrics.psi(8, 1.0)
    record_property("detail", f"Q err {err:.1e}, psi(8,1) {p:.5f}")
    assert err <= 1e-7
    assert metrics.double_factorial_odd(8) == 2_027_025
    assert abs(p - 0.76780) <= 1e-4
    assert metrics.outage_constants(8) == (0.0257, 0.1172, 0.9491)
    assert metrics.outage_constants(16) == (0.0291, 0.0133, 0.9338)


# -- 8: determinism ------------------------------------------------------------------

DET_CFG = """\
burst_bits = 30
arrival_rate = 0.1
frames_per_trial = 150
warmup_frames = 20
"""


def _tree(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


@pytest.mark.criterion("8", "byte-identical outputs on rerun and across worker counts")
@pytest.mark.parametrize("argv", [
    ["ber", "--grid", "0,8", "--trials", "2"],
    ["outage", "--samples", "100000"],
    ["trace"],
    ["trace", "--mode", "baseline"],
    ["validate", "--quick"],
], ids=["ber", "outage", "trace", "trace-baseline", "validate"])
def test_determinism(argv, tmp_path, record_property):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(DET_CFG)
    runs = []
    for i, workers in enumerate((1, 1, 2)):
        out = tmp_path / f"run{i}"
        main(argv + ["--config", str(cfg), "--out", str(out), "--workers", str(workers)])
        runs.append(_tree(out))
    assert runs[0] and runs[0] == runs[1] == runs[2]
    record_property("detail", f"{' '.join(argv)}: {len(runs[0])} files identical x3")
