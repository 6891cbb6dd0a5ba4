"""BER estimation and the closed-form outage approximation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .config import SystemConfig, validate_config
from .protocol import MODES, Simulator, Streams, advance_frame

log = logging.getLogger(__name__)

DEFAULT_EBN0_GRID = tuple(range(0, 17, 2))

OUTAGE_CONSTANTS = {
    8: (0.0257, 0.1172, 0.9491),
    16: (0.0291, 0.0133, 0.9338),
}


def q_function(x):
    """Gaussian tail probability Q(x) = P(Z > x)."""
    return special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0)) / 2.0


def ber_semi_analytic(mean_sinr):
    g = np.asarray(mean_sinr, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be non-negative")
    return q_function(np.sqrt(2.0 * g))


def mean_sinr(series) -> tuple[float, int]:
    """Arithmetic mean of the finite entries and the number of infinite ones dropped."""
    a = np.asarray(list(series), dtype=float)
    if a.size == 0:
        raise ValueError("empty SINR series")
    finite = np.isfinite(a)
    dropped = int(a.size - finite.sum())
    if dropped:
        log.warning("excluded %d infinite-SINR samples from the mean", dropped)
    if not finite.any():
        return math.inf, dropped
    return float(a[finite].mean()), dropped


# -- outage ------------------------------------------------------------------

def double_factorial_odd(M_y: int) -> int:
    """(2 M_y - 1)!! as an exact integer."""
    if M_y < 1:
        raise ValueError(f"group size must be >= 1, got {M_y}")
    return math.prod(range(1, 2 * M_y, 2))


def psi(M_y: int, sigma: float) -> float:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    # via logs: (2M_y-1)!! overflows float for M_y > 150
    return sigma / M_y * math.exp(math.log(double_factorial_odd(M_y)) / M_y)


def outage_constants(M_y: int) -> tuple[float, float, float]:
    try:
        return OUTAGE_CONSTANTS[M_y]
    except KeyError:
        raise ValueError(
            f"no approximation constants for group size {M_y}; supported sizes are {sorted(OUTAGE_CONSTANTS)}"
        ) from None


@dataclass(frozen=True)
class OutageParams:
    M_y: int
    sigma: float
    a0: float
    a1: float
    a2: float

    @classmethod
    def for_group(cls, M_y: int, sigma: float, constants=None) -> "OutageParams":
        a0, a1, a2 = outage_constants(M_y) if constants is None else constants
        psi(M_y, sigma)
        return cls(M_y, sigma, a0, a1, a2)

    @property
    def psi(self) -> float:
        return psi(self.M_y, self.sigma)


def outage_cdf_approx(gamma_th, params: OutageParams, raw: bool = False):
    """Closed-form CDF of a sum of M_y Rayleigh amplitudes at ``gamma_th``.

    The leading term 1 - exp(-u) sum_{m<M_y} u^m/m! with u = g^2/(2 psi) is
    evaluated as the regularized lower incomplete gamma P(M_y, u). The value
    is clamped to [0, 1] unless ``raw`` is set.
    """
    g = np.asarray(gamma_th, dtype=float)
    if np.any(g < 0):
        raise ValueError("threshold must be non-negative")
    L, p = params.M_y, params.psi
    lead = special.gammainc(L, g**2 / (2.0 * p))
    d = g - params.a2
    log_den = (L - 1) * math.log(2.0) + L * math.log(p / params.a1) + math.lgamma(L)
    corr = g * params.a0 * d ** (2 * L - 1) * np.exp(-params.a1 * d**2 / (2.0 * p) - log_den)
    value = lead - corr
    if raw:
        return value
    return np.clip(value, 0.0, 1.0)


def outage_cdf_series(gamma_th, params: OutageParams):
    """Leading term as the literal finite sum; cross-check for outage_cdf_approx."""
    g = np.asarray(gamma_th, dtype=float)
    u = g**2 / (2.0 * params.psi)
    acc = np.zeros_like(u)
    term = np.ones_like(u)
    for m in range(params.M_y):
        if m:
            term = term * u / m
        acc = acc + term
    return 1.0 - np.exp(-u) * acc


def rayleigh_sum_mean(M_y: int, sigma: float) -> float:
    return M_y * sigma * math.sqrt(math.pi / 2.0)


def outage_cdf_oracle(gamma_grid, M_y: int, sigma: float, samples: int = 10**6, seed: int = 0,
                      chunk: int = 100_000) -> np.ndarray:
    """Empirical P(S <= g) for S = sum of M_y i.i.d. Rayleigh(sigma) amplitudes."""
    if samples < 10**4:
        raise ValueError("oracle needs at least 1e4 samples")
    grid = np.asarray(gamma_grid, dtype=float)
    rng = np.random.default_rng([seed, M_y])
    counts = np.zeros(grid.shape, dtype=np.int64)
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        s = np.sort(rng.rayleigh(sigma, size=(n, M_y)).sum(axis=1))
        counts += np.searchsorted(s, grid, side="right")
        done += n
    return counts / samples


# -- BER ---------------------------------------------------------------------

@dataclass(frozen=True)
class BerPoint:
    ebn0_db: float
    ber: float
    trials: int
    ci99: float
    bits: int
    errors: int
    ber_semi_analytic: float


@dataclass(frozen=True)
class BerCurve:
    mode: str
    spreading: tuple[int, int]
    points: tuple

    @property
    def ebn0_db(self) -> np.ndarray:
        return np.array([p.ebn0_db for p in self.points])

    @property
    def ber(self) -> np.ndarray:
        return np.array([p.ber for p in self.points])


def ci99_halfwidth(errors: int, bits: int) -> float:
    if bits == 0:
        return math.nan
    ci = stats.binomtest(errors, bits).proportion_ci(0.99, method="wilson")
    return float(ci.high - ci.low) / 2.0


@dataclass
class TrialResult:
    bits: int = 0
    errors: int = 0
    # per-user (sum of finite SINR, count, infinite count, bits)
    per_user: dict = None


def run_ber_trial(cfg: SystemConfig, mode: str, trial: int) -> TrialResult:
    sim = Simulator(cfg, mode)
    streams = Streams.for_trial(cfg.master_seed, trial)
    state = sim.initial_state()
    res = TrialResult(per_user={})
    for t in range(cfg.frames_per_trial):
        rec = advance_frame(state, sim, streams)
        if t < cfg.warmup_frames:
            continue
        for u, e in rec.errors.items():
            res.bits += 1
            res.errors += e
            acc = res.per_user.setdefault(u, [0.0, 0, 0])
            g = rec.sinr[u]
            if math.isinf(g):
                acc[2] += 1
            else:
                acc[0] += g
                acc[1] += 1
    return res


def _trial_task(args):
    cfg, mode, trial = args
    return run_ber_trial(cfg, mode, trial)


def _overlay(results) -> float:
    """Bit-weighted mean of Q(sqrt(2*gamma_bar)) over (trial, user) pairs."""
    num, den = 0.0, 0
    for res in results:
        for u in sorted(res.per_user):
            s, n, n_inf = res.per_user[u]
            if n:
                num += n * float(ber_semi_analytic(s / n))
            den += n + n_inf
    return num / den if den else math.nan


def ber_monte_carlo(cfg: SystemConfig, mode: str, ebn0_grid=DEFAULT_EBN0_GRID, trials: int = 1,
                    workers: int = 1) -> BerCurve:
    """Chip-level BER of the full protocol at each Eb/N0 (dB).

    Trial ``i`` uses streams derived from (master_seed, i) at every grid
    point, so results do not depend on ``workers``.
    """
    validate_config(cfg)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if trials < 1:
        raise ValueError("need at least one trial")
    grid = [float(x) for x in ebn0_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("Eb/N0 grid must be strictly increasing")
    tasks = [(cfg.with_ebn0_db(x), mode, i) for x in grid for i in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_task, tasks))
    else:
        results = [_trial_task(t) for t in tasks]
    points = []
    for j, x in enumerate(grid):
        chunk = results[j * trials:(j + 1) * trials]
        bits = sum(r.bits for r in chunk)
        errors = sum(r.errors for r in chunk)
        ber = errors / bits if bits else math.nan
        points.append(BerPoint(x, ber, trials, ci99_halfwidth(errors, bits), bits, errors, _overlay(chunk)))
    return BerCurve(mode, (cfg.group_size, cfg.time_spread), tuple(points))


def crossing_db(ebn0_db, ber, target: float) -> float:
    """First Eb/N0 where the curve falls to ``target`` (log-linear interpolation)."""
    x = np.asarray(ebn0_db, dtype=float)
    y = np.asarray(ber, dtype=float)
    for i in range(len(x) - 1):
        if y[i] >= target >= y[i + 1] and y[i + 1] > 0:
            if y[i] == y[i + 1]:
                return float(x[i])
            ly0, ly1, lt = np.log10(y[i]), np.log10(y[i + 1]), np.log10(target)
            return float(x[i] + (x[i + 1] - x[i]) * (ly0 - lt) / (ly0 - ly1))
        if y[i + 1] == 0 and y[i] >= target:
            return float(x[i + 1])
    return math.nan


def horizontal_gain_db(reference: BerCurve, improved: BerCurve, target: float = 1e-2) -> float:
    return crossing_db(reference.ebn0_db, reference.ber, target) - crossing_db(improved.ebn0_db, improved.ber, target)
