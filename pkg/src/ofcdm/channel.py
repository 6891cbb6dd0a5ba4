"""Per-frame Rayleigh fading, AWGN, and the group mean-square fading statistic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SubcarrierGroup


class ChannelRealization:
    """Fading of every user on every subcarrier for one frame.

    Arrays have shape (users, M); row ``u - 1`` belongs to user ``u``.
    Built either from gains and phases or from complex phasors.
    """

    def __init__(self, gains=None, phases=None, phasors=None):
        if phasors is None:
            phasors = np.asarray(gains) * np.exp(1j * np.asarray(phases))
        self.phasors = phasors
        self._gains = None if gains is None else np.asarray(gains, dtype=float)
        self._phases = None if phases is None else np.asarray(phases, dtype=float)

    @property
    def gains(self) -> np.ndarray:
        if self._gains is None:
            self._gains = np.abs(self.phasors)
        return self._gains

    @property
    def phases(self) -> np.ndarray:
        if self._phases is None:
            self._phases = np.mod(np.angle(self.phasors), 2.0 * np.pi)
        return self._phases

    def user(self, u: int) -> "UserChannel":
        return UserChannel(self.gains[u - 1], self.phases[u - 1])


@dataclass(frozen=True)
class UserChannel:
    gains: np.ndarray
    phases: np.ndarray

    @property
    def phasors(self) -> np.ndarray:
        return self.gains * np.exp(1j * self.phases)


def draw_frame_channel(n_users: int, M: int, sigma: float, rng: np.random.Generator) -> ChannelRealization:
    if sigma <= 0:
        raise ValueError(f"Rayleigh scale must be positive, got {sigma}")
    # sigma*(X + jY): modulus ~ Rayleigh(sigma), argument ~ U[0, 2pi), independent
    w = rng.standard_normal((n_users, M, 2))
    return ChannelRealization(phasors=sigma * (w[..., 0] + 1j * w[..., 1]))


def group_mean_square_fading(occupants, realization: ChannelRealization, group: SubcarrierGroup,
                             sigma: float | None = None, probing=None) -> float:
    """Average alpha^2 over the users ``occupants`` and the subcarriers of ``group``.

    When ``probing`` is given, ``occupants`` is taken as the data-phase set and
    the two must be disjoint. An empty population yields 2*sigma^2.
    """
    users = set(occupants)
    if probing is not None:
        probing = set(probing)
        if users & probing:
            raise ValueError(f"data and probing sets overlap: {sorted(users & probing)}")
        users |= probing
    if not users:
        if sigma is None:
            raise ValueError("empty occupant set and no sigma for the a-priori mean")
        return 2.0 * sigma**2
    rows = np.asarray(sorted(users), dtype=np.intp) - 1
    g = realization.gains[np.ix_(rows, group.offsets)]
    return float(np.mean(g**2))


def draw_noise(shape, N_o: float, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian with E|n|^2 = N_o per cell."""
    if N_o < 0:
        raise ValueError(f"noise density must be >= 0, got {N_o}")
    # always consume the stream so sweeps over N_o share random numbers
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if N_o == 0:
        return np.zeros(shape, dtype=complex)
    return np.sqrt(N_o / 2.0) * w
