"""2D spreading, frame composition, despreading and the analytic SINR chain.

The frame is a discrete complex-baseband grid with one sample per
(subcarrier, chip). Subcarrier carriers and the pulse shape are folded into
complex phasors ``alpha * exp(j*phi)``; after derotating by the reference
user's phase, cross-user terms carry ``exp(j*dphi)``.

Powers are complex second moments of the despread statistic. With noise of
E|n|^2 = N_o per cell this gives BER = Q(sqrt(2*P_d/(P_i+P_n))) for BPSK.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

from .channel import UserChannel
from .config import ProbeIdentifier, SubcarrierGroup

PN_STREAM_TAG = 0x504E  # "PN"

INFINITE_SINR = math.inf


@dataclass(frozen=True)
class SpreadingCode:
    freq_chips: np.ndarray
    time_chips: np.ndarray

    def tile(self) -> np.ndarray:
        """The M_y x N chip matrix c^F_m * c^T_n."""
        return np.outer(self.freq_chips, self.time_chips)


@dataclass
class FrameGrid:
    samples: np.ndarray
    probe_map: set = field(default_factory=set)

    @property
    def shape(self):
        return self.samples.shape

    def __add__(self, other: "FrameGrid") -> "FrameGrid":
        if self.samples.shape != other.samples.shape:
            raise ValueError(f"dimension mismatch {self.samples.shape} vs {other.samples.shape}")
        return FrameGrid(self.samples + other.samples, self.probe_map | other.probe_map)


@dataclass(frozen=True)
class PowerBreakdown:
    desired: float
    interference: float
    noise: float

    @property
    def sinr(self) -> float:
        den = self.interference + self.noise
        return self.desired / den if den > 0 else INFINITE_SINR


def frame_codes(seed: int, frame_index: int, n_users: int, M_y: int, N: int):
    """All users' chips for one frame: arrays (n_users, M_y) and (n_users, N)."""
    rng = np.random.default_rng([seed, PN_STREAM_TAG, frame_index])
    chips = 1 - 2 * rng.integers(0, 2, size=(n_users, M_y + N), dtype=np.int8)
    chips = chips.astype(float)
    return chips[:, :M_y], chips[:, M_y:]


def generate_pn_code(user: int, frame_index: int, M_y: int, N: int, master_seed: int,
                     n_users: int | None = None) -> SpreadingCode:
    """User ``user``'s code for ``frame_index``.

    Codes for a frame are drawn as one block keyed by (seed, frame), so
    ``n_users`` must match the block size used by the simulator when
    reproducing its codes; it defaults to ``user``.
    """
    n_users = user if n_users is None else n_users
    if not 1 <= user <= n_users:
        raise ValueError(f"user {user} outside 1..{n_users}")
    cf, ct = frame_codes(master_seed, frame_index, n_users, M_y, N)
    return SpreadingCode(cf[user - 1].copy(), ct[user - 1].copy())


def orthogonal_time_codes(n_users: int, N: int) -> np.ndarray:
    """Walsh rows for the orthogonal time-code test mode (N a power of two)."""
    if n_users > N:
        raise ValueError(f"only {N} orthogonal length-{N} codes exist")
    return hadamard(N).astype(float)[:n_users]


def _empty(M: int, N: int) -> FrameGrid:
    return FrameGrid(np.zeros((M, N), dtype=complex))


def spread_bit(bit: int, code: SpreadingCode, user_channel: UserChannel, group: SubcarrierGroup,
               chip_energy: float, M: int, groups=None) -> FrameGrid:
    if bit not in (-1, 1):
        raise ValueError(f"bit must be +-1, got {bit}")
    if groups is not None and group not in groups:
        raise ValueError(f"group {group.index} is not part of the subcarrier plan")
    N = code.time_chips.size
    rows = group.offsets
    grid = _empty(M, N)
    h = user_channel.phasors[rows]
    grid.samples[rows, :] = math.sqrt(chip_energy) * bit * code.tile() * h[:, None]
    return grid


def place_probe(user: int, identifier: ProbeIdentifier, user_channel: UserChannel,
                chip_energy: float, groups, N: int) -> FrameGrid:
    """Signalling tone: all-ones chips over the identifier's group row, one chip column."""
    if identifier.user != user:
        raise ValueError(f"identifier belongs to user {identifier.user}, not {user}")
    group = groups[identifier.group_row - 1]
    M = sum(len(g) for g in groups)
    grid = _empty(M, N)
    rows = group.offsets
    grid.samples[rows, identifier.chip_column - 1] = math.sqrt(chip_energy) * user_channel.phasors[rows]
    grid.probe_map.add((identifier.group_row, identifier.chip_column, user))
    return grid


def compose_frame(data_transmissions, probe_transmissions, noise_grid: np.ndarray) -> FrameGrid:
    """Cellwise superposition of all contributions plus noise."""
    out = FrameGrid(np.array(noise_grid, dtype=complex))
    cells = {}
    for part in list(data_transmissions) + list(probe_transmissions):
        if part.samples.shape != out.samples.shape:
            raise ValueError(f"dimension mismatch {part.samples.shape} vs {out.samples.shape}")
        for y, n, u in part.probe_map:
            if (y, n) in cells:
                raise RuntimeError(f"probe collision at cell {(y, n)}: users {cells[(y, n)]} and {u}")
            cells[(y, n)] = u
        out.samples += part.samples
        out.probe_map |= part.probe_map
    return out


def despread_complex(frame: FrameGrid, code: SpreadingCode, user_channel: UserChannel,
                     group: SubcarrierGroup) -> complex:
    """Sum_m Sum_n alpha_m c^F_m c^T_n exp(-j phi_m) r[m][n] (before taking the real part)."""
    rows = group.offsets
    weights = np.conj(user_channel.phasors[rows]) * code.freq_chips
    return complex(weights @ frame.samples[rows, :] @ code.time_chips)


def despread(frame: FrameGrid, code: SpreadingCode, user_channel: UserChannel,
             group: SubcarrierGroup) -> tuple[float, int]:
    stat = despread_complex(frame, code, user_channel, group).real
    return stat, (1 if stat >= 0 else -1)


def desired_power(gains, N: int, chip_energy: float) -> float:
    a = float(np.sum(np.square(gains)))
    return N**2 * chip_energy * a**2


def noise_power(gains, N: int, N_o: float) -> float:
    return N * N_o * float(np.sum(np.square(gains)))


def interference_power(gains, N: int, chip_energy: float, K_y: int, probe_count: int,
                       mean_sq: float) -> float:
    if K_y < 1:
        raise ValueError("K_y counts the reference user and must be >= 1")
    a = float(np.sum(np.square(gains)))
    return a * (N * chip_energy * (K_y - 1) * mean_sq + probe_count * chip_energy * mean_sq)


def _sinr(sum_sq: float, N: int, chip_energy: float, interferers: float, probes: int,
          mean_sq: float, N_o: float) -> float:
    den = N * chip_energy * interferers * mean_sq + probes * chip_energy * mean_sq + N * N_o
    if den <= 0:
        return INFINITE_SINR
    return N**2 * chip_energy * sum_sq / den


def sinr_data_user(gains, N: int, chip_energy: float, K_y: int, probe_tally: int,
                   mean_sq: float, N_o: float) -> float:
    """SINR of a data-phase user sharing its group with K_y - 1 others."""
    if K_y < 1:
        raise ValueError("K_y counts the reference user and must be >= 1")
    return _sinr(float(np.sum(np.square(gains))), N, chip_energy, K_y - 1, probe_tally, mean_sq, N_o)


def sinr_probe_user(gains, N: int, chip_energy: float, K_y: int, other_probes: int,
                    mean_sq: float, N_o: float) -> float:
    """Prospective SINR of a probing user joining a group holding K_y data users.

    ``other_probes`` must already exclude the candidate's own tone.
    """
    return _sinr(float(np.sum(np.square(gains))), N, chip_energy, K_y, other_probes, mean_sq, N_o)


def power_breakdown(gains, N: int, chip_energy: float, K_y: int, probe_tally: int,
                    mean_sq: float, N_o: float) -> PowerBreakdown:
    return PowerBreakdown(
        desired_power(gains, N, chip_energy),
        interference_power(gains, N, chip_energy, K_y, probe_tally, mean_sq),
        noise_power(gains, N, N_o),
    )


# Batched kernels used by the frame simulator. The frame is viewed as
# (M_y, Y, N): subcarrier row i*Y + y is member i of 0-based group y.

def group_view(samples: np.ndarray, Y: int) -> np.ndarray:
    M, N = samples.shape
    return samples.reshape(M // Y, Y, N)


def group_phasors(phasors: np.ndarray, group_idx: np.ndarray, Y: int) -> np.ndarray:
    """Per-user channel on its own group: (K, M) -> (K, M_y)."""
    K, M = phasors.shape
    return phasors.reshape(K, M // Y, Y)[np.arange(K), :, group_idx]


def superpose(M: int, N: int, Y: int, chip_energy: float, group_idx, bits, freq_chips, time_chips,
              h_group, probe_rows=(), probe_cols=(), probe_h=None, noise=None) -> np.ndarray:
    """Received M x N grid for data users (one bit each) plus probe tones and noise."""
    grid = np.zeros((M, N), dtype=complex) if noise is None else np.array(noise, dtype=complex)
    view = group_view(grid, Y)
    amp = math.sqrt(chip_energy)
    if len(group_idx):
        contrib = (amp * np.asarray(bits)[:, None] * freq_chips * h_group)[:, :, None] * time_chips[:, None, :]
        np.add.at(view.transpose(1, 0, 2), np.asarray(group_idx), contrib)
    if len(probe_rows):
        np.add.at(view.transpose(1, 2, 0), (np.asarray(probe_rows), np.asarray(probe_cols)), amp * probe_h)
    return grid


def despread_many(samples: np.ndarray, Y: int, group_idx, freq_chips, time_chips, h_group) -> np.ndarray:
    """Complex decision statistics for K users at once."""
    view = group_view(samples, Y)
    R = view[:, np.asarray(group_idx), :].transpose(1, 0, 2)
    return np.einsum("km,kmn,kn->k", np.conj(h_group) * freq_chips, R, time_chips)
