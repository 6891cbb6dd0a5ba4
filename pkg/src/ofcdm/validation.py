"""Empirical checks of the simulator against its analytic model.

The helpers here run the real chip-level kernels on a single subcarrier
group and split the despread statistic of the reference user (index 0)
into desired, interference and noise parts by linearity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import metrics, phy
from .channel import draw_noise
from .config import ProbeIdentifier, SystemConfig
from .protocol import BASELINE, PROBING, ProtocolError
from .trace import check_trace, simulate_trace


@dataclass
class GroupLink:
    """K users sharing one group of M_y subcarriers with a fixed channel."""

    phasors: np.ndarray  # (K, M_y)
    N: int
    chip_energy: float = 1.0
    N_o: float = 0.0

    @property
    def K(self) -> int:
        return self.phasors.shape[0]

    @property
    def M_y(self) -> int:
        return self.phasors.shape[1]

    @property
    def gains(self) -> np.ndarray:
        return np.abs(self.phasors)

    @classmethod
    def draw(cls, K: int, M_y: int, N: int, sigma: float, seed: int, **kw) -> "GroupLink":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((K, M_y, 2))
        return cls(sigma * (w[..., 0] + 1j * w[..., 1]), N, **kw)


def despread_components(link: GroupLink, frames: int, seed: int) -> dict:
    """Complex despread components of user 0 over ``frames`` independent frames.

    Codes and bits are fresh each frame; the channel is held fixed.
    """
    rng = np.random.default_rng(seed)
    K, M_y, N = link.K, link.M_y, link.N
    grp = np.zeros(K, dtype=np.intp)
    out = {k: np.empty(frames, dtype=complex) for k in ("desired", "mai", "noise")}
    bits_out = np.empty(frames, dtype=int)
    for f in range(frames):
        chips = 1.0 - 2.0 * rng.integers(0, 2, size=(K, M_y + N))
        cf, ct = chips[:, :M_y], chips[:, M_y:]
        bits = 1 - 2 * rng.integers(0, 2, size=K)
        noise = draw_noise((M_y, N), link.N_o, rng)
        own = phy.superpose(M_y, N, 1, link.chip_energy, grp[:1], bits[:1], cf[:1], ct[:1], link.phasors[:1])
        others = phy.superpose(M_y, N, 1, link.chip_energy, grp[1:], bits[1:], cf[1:], ct[1:], link.phasors[1:])
        for name, grid in (("desired", own), ("mai", others), ("noise", noise)):
            out[name][f] = phy.despread_many(grid, 1, grp[:1], cf[:1], ct[:1], link.phasors[:1])[0]
        bits_out[f] = bits[0]
    out["bits"] = bits_out
    return out


def empirical_powers(link: GroupLink, frames: int, seed: int) -> dict:
    comp = despread_components(link, frames, seed)
    return {k: float(np.mean(np.abs(comp[k]) ** 2)) for k in ("desired", "mai", "noise")}


def analytic_powers(link: GroupLink) -> dict:
    g1 = link.gains[0]
    mean_sq = float(np.mean(link.gains**2))
    return {
        "desired": phy.desired_power(g1, link.N, link.chip_energy),
        "mai": phy.interference_power(g1, link.N, link.chip_energy, link.K, 0, mean_sq),
        "noise": phy.noise_power(g1, link.N, link.N_o),
    }


def exact_mai_power(link: GroupLink) -> float:
    """E|MAI|^2 of user 0 averaged over codes only, channel held fixed.

    Equals eps * N * sum_k sum_m a_0m^2 a_km^2; the analytic form replaces the
    per-subcarrier products by sum(a_0^2) times the group mean square.
    """
    a = link.gains**2
    return link.chip_energy * link.N * float(np.sum(a[0] * a[1:].sum(axis=0)))


def conditional_ber(link: GroupLink, frames: int, seed: int) -> tuple[int, int, float]:
    """Single-user chip-level errors, frames, and Q(sqrt(2 P_d / P_n))."""
    if link.K != 1:
        raise ValueError("conditional BER oracle is single-user")
    rng = np.random.default_rng(seed)
    M_y, N = link.M_y, link.N
    grp = np.zeros(1, dtype=np.intp)
    errors = 0
    for _ in range(frames):
        chips = 1.0 - 2.0 * rng.integers(0, 2, size=(1, M_y + N))
        cf, ct = chips[:, :M_y], chips[:, M_y:]
        b = 1 - 2 * rng.integers(0, 2, size=1)
        noise = draw_noise((M_y, N), link.N_o, rng)
        r = phy.superpose(M_y, N, 1, link.chip_energy, grp, b, cf, ct, link.phasors, noise=noise)
        stat = phy.despread_many(r, 1, grp, cf, ct, link.phasors)[0].real
        errors += int((1 if stat >= 0 else -1) != b[0])
    g = link.gains[0]
    p0 = float(metrics.q_function(math.sqrt(2.0 * phy.desired_power(g, N, link.chip_energy)
                                            / phy.noise_power(g, N, link.N_o))))
    return errors, frames, p0


def binomial_interval(p0: float, n: int, level: float = 0.99) -> tuple[int, int]:
    return tuple(int(x) for x in stats.binom.interval(level, n, p0))


def q_reference(x: float) -> float:
    import mpmath

    mpmath.mp.dps = 40
    return float(mpmath.erfc(mpmath.mpf(x) / mpmath.sqrt(2)) / 2)


# -- validate suite ------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _run(name, fn) -> Check:
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        return Check(name, False, f"{type(exc).__name__}: {exc}")
    return Check(name, bool(ok), detail)


def _check_q():
    xs = np.linspace(-8, 8, 100)
    err = max(abs(float(metrics.q_function(x)) - q_reference(x)) for x in xs)
    return err <= 1e-7, f"max abs error {err:.3e} (limit 1e-7)"


def _check_kernels():
    df = metrics.double_factorial_odd(8)
    p = metrics.psi(8, 1.0)
    ok = df == 2027025 and abs(p - 0.76780) <= 1e-4 and metrics.outage_constants(8) == (0.0257, 0.1172, 0.9491) \
        and metrics.outage_constants(16) == (0.0291, 0.0133, 0.9338)
    return ok, f"(15)!!={df} psi(8,1)={p:.5f}"


def _check_roundtrip(seed):
    link = GroupLink.draw(1, 8, 4, 1 / math.sqrt(2), seed)
    comp = despread_components(link, 100, seed)
    decided = np.where(comp["desired"].real >= 0, 1, -1)
    wrong = int(np.sum(decided != comp["bits"]))
    return wrong == 0, f"{wrong} errors in 100 noiseless frames"


def _check_powers(seed, frames):
    link = GroupLink.draw(8, 8, 4, 1 / math.sqrt(2), seed, N_o=1.0)
    emp, ana = empirical_powers(link, frames, seed), analytic_powers(link)
    tol = {"desired": 0.01, "noise": 0.02, "mai": 0.15}
    rel = {k: abs(emp[k] / ana[k] - 1) for k in tol}
    return all(rel[k] <= tol[k] for k in tol), " ".join(f"{k}:{rel[k]:.3%}" for k in tol)


def _check_conditional_ber(seed, frames):
    link = GroupLink.draw(1, 8, 4, 1 / math.sqrt(2), seed, N_o=1.0)
    # pick N_o so the expected BER is near 1e-2
    target = 2.33**2 / 2
    g = link.gains[0]
    link.N_o = phy.desired_power(g, link.N, 1.0) / (target * phy.noise_power(g, link.N, 1.0))
    errors, n, p0 = conditional_ber(link, frames, seed)
    lo, hi = binomial_interval(p0, n)
    return lo <= errors <= hi, f"{errors}/{n} errors, 99% interval [{lo}, {hi}] around p={p0:.4g}"


def _check_protocol(cfg, fault):
    records = []
    if fault == "probe-collision":
        from .protocol import Simulator, Streams, advance_frame

        sim = Simulator(cfg, PROBING)
        # user 2 is told to probe on user 1's cell
        sim.identifiers[2] = ProbeIdentifier(2, *sim.identifiers[1].cell)
        streams = Streams.for_trial(cfg.master_seed, 0)
        state = sim.initial_state()
        try:
            for _ in range(cfg.frames_per_trial):
                records.append(advance_frame(state, sim, streams).to_dict())
        except ProtocolError as exc:
            return False, str(exc)
    else:
        records = simulate_trace(cfg, PROBING)
    rep = check_trace(records, cfg, PROBING)
    return rep.ok, rep.summary()


def _check_baseline(cfg):
    records = simulate_trace(cfg, BASELINE)
    rep = check_trace(records, cfg, BASELINE)
    probes = sum(len(r["probes"]) + len(r["grants"]) for r in records)
    return rep.ok and probes == 0, rep.summary() + f" tones={probes}"


def _check_outage_accuracy(samples):
    worst = 0.0
    for M_y in (8, 16):
        for sigma in (0.5, 1.0):
            grid = np.linspace(0, 4 * M_y * sigma, 401)
            approx = metrics.outage_cdf_approx(grid, metrics.OutageParams.for_group(M_y, sigma))
            oracle = metrics.outage_cdf_oracle(grid, M_y, sigma, samples=samples, seed=M_y)
            worst = max(worst, float(np.max(np.abs(approx - oracle))))
    return worst <= 0.02, f"sup gap {worst:.4f} (limit 0.02)"


def _check_outage_shape(samples):
    ok = True
    for M_y in (8, 16):
        params = metrics.OutageParams.for_group(M_y, 1.0)
        grid = np.linspace(0, 4 * M_y, 401)
        ok &= float(metrics.outage_cdf_approx(0.0, params)) == 0.0
        oracle = metrics.outage_cdf_oracle(grid, M_y, 1.0, samples=samples)
        ok &= bool(np.all(np.diff(oracle) >= 0))
    return ok, "F(0)=0 and oracle monotone" if ok else "F(0)!=0 or oracle not monotone"


def run_checks(cfg: SystemConfig, fault: str | None = None, quick: bool = False) -> list[Check]:
    """Run every check; never stops at the first failure."""
    seed = cfg.master_seed
    frames = 20_000 if quick else 100_000
    samples = 10**5 if quick else 10**6
    proto_cfg = SystemConfig(total_subcarriers=32, group_size=8, time_spread=4, max_users=16, burst_bits=5,
                             arrival_rate=0.3, master_seed=seed, frames_per_trial=400, warmup_frames=0)
    return [
        _run("q_function_accuracy", _check_q),
        _run("numerical_kernels", _check_kernels),
        _run("roundtrip", lambda: _check_roundtrip(seed)),
        _run("power_formulas", lambda: _check_powers(seed, frames)),
        _run("conditional_ber", lambda: _check_conditional_ber(seed, frames)),
        _run("protocol_invariants", lambda: _check_protocol(proto_cfg, fault)),
        _run("baseline_invariants", lambda: _check_baseline(proto_cfg)),
        _run("outage_cdf_shape", lambda: _check_outage_shape(samples)),
        _run("outage_cdf_accuracy", lambda: _check_outage_accuracy(samples)),
    ]
