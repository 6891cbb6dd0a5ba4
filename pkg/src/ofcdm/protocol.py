"""Receiver-centric two-phase admission and the no-probing baseline.

One call to :func:`advance_frame` simulates one OFCDM frame:

1. grants decided last frame are signalled (downstream, error-free);
2. idle users draw Poisson arrivals; in probing mode they probe this frame,
   in baseline mode they pick a random group and start sending at once;
3. the uplink frame is composed at chip level and every data user's bit is
   despread and decided;
4. the receiver scans the probe tones, evaluates the probing SINR of each
   candidate on every group and grants the best one;
5. finished bursts return to idle.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import phy
from .channel import draw_frame_channel, draw_noise
from .config import (
    ProbeIdentifier,
    SystemConfig,
    assign_probe_identifiers,
    build_subcarrier_groups,
    identifier_lookup,
    validate_config,
)

PROBING = "probing"
BASELINE = "baseline"
MODES = (PROBING, BASELINE)


class ProtocolError(RuntimeError):
    pass


class Phase(enum.Enum):
    IDLE = "idle"
    PROBING = "probing"
    AWAITING_GRANT = "awaiting_grant"
    DATA = "data"


LEGAL_TRANSITIONS = {
    PROBING: {
        (Phase.IDLE, Phase.PROBING),
        (Phase.PROBING, Phase.AWAITING_GRANT),
        (Phase.AWAITING_GRANT, Phase.DATA),
        (Phase.DATA, Phase.IDLE),
    },
    BASELINE: {(Phase.IDLE, Phase.DATA), (Phase.DATA, Phase.IDLE)},
}


@dataclass
class UserState:
    user: int
    probe_identifier: ProbeIdentifier
    phase: Phase = Phase.IDLE
    assigned_group: int | None = None
    bits_remaining: int = 0
    burst_start: int | None = None
    bits_sent: int = 0

    def check(self):
        holds = self.phase in (Phase.AWAITING_GRANT, Phase.DATA)
        if holds != (self.assigned_group is not None):
            raise ProtocolError(f"user {self.user}: phase {self.phase.value} with group {self.assigned_group}")
        if (self.bits_remaining > 0) != (self.phase is not Phase.IDLE):
            raise ProtocolError(f"user {self.user}: phase {self.phase.value} with {self.bits_remaining} bits left")


@dataclass
class GroupOccupancy:
    """Per-group head counts (index y-1).

    ``data_users`` counts users holding a grant for the group, whether
    already sending or waiting for the grant tone; ``probing_users`` counts
    users whose probe tone sits in that group row.
    """

    data_users: list
    probing_users: list

    @classmethod
    def empty(cls, Y: int) -> "GroupOccupancy":
        return cls([0] * Y, [0] * Y)

    @classmethod
    def from_users(cls, users, Y: int) -> "GroupOccupancy":
        occ = cls.empty(Y)
        for st in users:
            if st.assigned_group is not None:
                occ.data_users[st.assigned_group - 1] += 1
            elif st.phase is Phase.PROBING:
                occ.probing_users[st.probe_identifier.group_row - 1] += 1
        return occ


@dataclass
class SystemState:
    users: list
    occupancy: GroupOccupancy
    mode: str
    frame: int = 0
    pending_grants: list = field(default_factory=list)

    def user(self, u: int) -> UserState:
        return self.users[u - 1]


@dataclass
class Streams:
    """Independent random streams for one simulation run."""

    arrivals: np.random.Generator
    channel: np.random.Generator
    noise: np.random.Generator
    bits: np.random.Generator
    assign: np.random.Generator
    code_seed: int

    @classmethod
    def for_trial(cls, master_seed: int, trial: int) -> "Streams":
        ss = np.random.SeedSequence([master_seed, trial])
        children = ss.spawn(6)
        gens = [np.random.default_rng(c) for c in children[:5]]
        code_seed = int(children[5].generate_state(1, dtype=np.uint64)[0])
        return cls(*gens, code_seed=code_seed)


@dataclass
class Decision:
    user: int
    values: list
    chosen: int
    marker: tuple


@dataclass
class FrameRecord:
    frame: int
    arrivals: list
    probes: list
    grant_tones: list
    decisions: list
    transmissions: dict
    sinr: dict
    errors: dict
    completed: list
    transitions: list
    occupancy: dict

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "arrivals": self.arrivals,
            "probes": [list(p) for p in self.probes],
            "grants": [list(g) for g in self.grant_tones],
            "decisions": [
                {"user": d.user, "values": d.values, "chosen": d.chosen, "marker": list(d.marker)}
                for d in self.decisions
            ],
            "sent": {str(u): g for u, g in self.transmissions.items()},
            "sinr": {str(u): (None if math.isinf(v) else v) for u, v in self.sinr.items()},
            "errors": {str(u): e for u, e in self.errors.items()},
            "completed": self.completed,
            "transitions": [[u, a.value, b.value, g] for u, a, b, g in self.transitions],
            "occupancy": self.occupancy,
        }


class Simulator:
    """Holds the static plan (groups, identifiers) for one configuration."""

    def __init__(self, cfg: SystemConfig, mode: str = PROBING, orthogonal_time_codes: bool = False):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.cfg = validate_config(cfg)
        self.mode = mode
        self.groups = build_subcarrier_groups(cfg.total_subcarriers, cfg.group_size)
        self.Y = len(self.groups)
        self.identifiers = assign_probe_identifiers(cfg.max_users, self.Y, cfg.time_spread)
        self.lookup = identifier_lookup(self.identifiers)
        self.orthogonal = orthogonal_time_codes
        self.check_invariants = False
        if orthogonal_time_codes:
            self._walsh = phy.orthogonal_time_codes(cfg.max_users, cfg.time_spread)

    def initial_state(self) -> SystemState:
        users = [UserState(u, self.identifiers[u]) for u in range(1, self.cfg.max_users + 1)]
        return SystemState(users, GroupOccupancy.empty(self.Y), self.mode)

    def codes(self, streams: Streams, frame: int):
        cfg = self.cfg
        cf, ct = phy.frame_codes(streams.code_seed, frame, cfg.max_users, cfg.group_size, cfg.time_spread)
        if self.orthogonal:
            ct = self._walsh
        return cf, ct

    def advance(self, state: SystemState, streams: Streams) -> FrameRecord:
        return advance_frame(state, self, streams)


def draw_arrivals(idle_users, lam: float, rng: np.random.Generator, n_users: int | None = None) -> list:
    """Each idle user starts a burst with probability 1 - exp(-lam).

    One uniform is drawn per user 1..n_users regardless of who is idle so
    the stream stays aligned across modes.
    """
    if lam < 0:
        raise ValueError(f"arrival rate must be >= 0, got {lam}")
    idle_users = sorted(idle_users)
    n = n_users if n_users is not None else (max(idle_users) if idle_users else 0)
    u = rng.random(n)
    p = -math.expm1(-lam)
    return [x for x in idle_users if u[x - 1] < p]


def baseline_assign(user: int, rng: np.random.Generator, Y: int) -> int:
    return int(rng.integers(1, Y + 1))


def burst_duration(xi: int, mode: str) -> int:
    if xi < 1:
        raise ValueError(f"burst must carry at least one bit, got {xi}")
    if mode == PROBING:
        return xi + 2
    if mode == BASELINE:
        return xi
    raise ValueError(f"unknown mode {mode!r}")


def scan_probes(frame: phy.FrameGrid, lookup: dict) -> list:
    """Locate each probe tone and recover its user from the cell."""
    found = []
    for y, n, marker_user in sorted(frame.probe_map):
        user = lookup.get((y, n))
        if user is None:
            raise ProtocolError(f"probe at unassigned cell (group {y}, chip {n})")
        if marker_user is not None and marker_user != user:
            raise ProtocolError(f"probe at {(y, n)} marked for user {marker_user}, identifier says {user}")
        found.append((y, n, user))
    return found


def probing_sinr_table(candidate: int, sum_sq_by_group: np.ndarray, sq_gains: np.ndarray,
                       holders: list, probers: list, probe_rows: list, cfg: SystemConfig) -> list:
    """Probing-user SINR of ``candidate`` on every group.

    ``sum_sq_by_group`` is (users, Y) of per-group sums of alpha^2,
    ``sq_gains`` is (users, M_y, Y); ``holders``/``probers`` are per-group
    user lists, ``probe_rows`` the group row of every probe tone present.
    """
    Y = sum_sq_by_group.shape[1]
    values = []
    for y in range(Y):
        occupants = holders[y] + probers[y]
        if occupants:
            rows = np.asarray(occupants) - 1
            mean_sq = float(sq_gains[rows, :, y].mean())
        else:
            mean_sq = 2.0 * cfg.rayleigh_scale**2
        own_row = 1 if candidate in probers[y] else 0
        other = sum(1 for r in probe_rows if r == y + 1) - own_row
        values.append(phy._sinr(float(sum_sq_by_group[candidate - 1, y]), cfg.time_spread,
                                cfg.chip_energy, len(holders[y]), other, mean_sq, cfg.noise_density))
    return values


def select_best_group(values) -> int:
    """1-based argmax, ties to the lowest group index."""
    best = 0
    for y, v in enumerate(values):
        if v > values[best]:
            best = y
    return best + 1


def respond_probe(candidate: ProbeIdentifier, chosen_group: int, taken: set, N: int, Y: int | None = None):
    """Grant tone cell for ``candidate`` in the next frame.

    The tone goes to (chosen group, candidate's chip column). If another
    candidate already holds that cell this frame, the next free column of
    the same row is used. With ``Y`` given, a full row spills over to the
    following rows (the granted group travels with the grant itself).
    None means no free cell is left.
    """
    n0 = candidate.chip_column
    rows = 1 if Y is None else Y
    for r in range(rows):
        y = (chosen_group - 1 + r) % rows + 1 if Y is not None else chosen_group
        for k in range(N):
            n = (n0 - 1 + k) % N + 1
            if (y, n) not in taken:
                return (y, n)
    return None


def _transition(st: UserState, new: Phase, log: list, group=None):
    log.append((st.user, st.phase, new, group))
    st.phase = new
    st.assigned_group = group


def advance_frame(state: SystemState, sim: Simulator, streams: Streams) -> FrameRecord:
    cfg = sim.cfg
    Y, M, N, M_y, B = sim.Y, cfg.total_subcarriers, cfg.time_spread, cfg.group_size, cfg.max_users
    t = state.frame
    occ = state.occupancy
    transitions = []

    for st in state.users:
        if st.phase is Phase.DATA and st.assigned_group is None:
            raise ProtocolError(f"user {st.user} in data phase without a group")

    # grants decided last frame are signalled now
    grant_tones = [tuple(g) for g in state.pending_grants]
    granted_now = [g[2] for g in state.pending_grants]
    state.pending_grants = []

    idle = [st.user for st in state.users if st.phase is Phase.IDLE]
    arrivals = draw_arrivals(idle, cfg.arrival_rate, streams.arrivals, B)
    assign_draws = streams.assign.integers(1, Y + 1, size=B)
    for u in arrivals:
        st = state.user(u)
        st.bits_remaining = cfg.burst_bits
        st.bits_sent = 0
        st.burst_start = t
        if state.mode == PROBING:
            _transition(st, Phase.PROBING, transitions)
            occ.probing_users[st.probe_identifier.group_row - 1] += 1
        else:
            _transition(st, Phase.DATA, transitions, int(assign_draws[u - 1]))
            occ.data_users[st.assigned_group - 1] += 1

    chan = draw_frame_channel(B, M, cfg.rayleigh_scale, streams.channel)
    bits_all = 1 - 2 * streams.bits.integers(0, 2, size=B)
    noise = draw_noise((M, N), cfg.noise_density, streams.noise)
    cf, ct = sim.codes(streams, t)
    h = chan.phasors
    sq = (h.real**2 + h.imag**2).reshape(B, M_y, Y)
    sum_sq = sq.sum(axis=1)

    senders = [st.user for st in state.users if st.phase is Phase.DATA]
    probers_now = [st.user for st in state.users if st.phase is Phase.PROBING]
    s_idx = np.asarray(senders, dtype=np.intp) - 1
    s_grp = np.asarray([state.user(u).assigned_group - 1 for u in senders], dtype=np.intp)
    p_idx = np.asarray(probers_now, dtype=np.intp) - 1
    p_rows = np.asarray([sim.identifiers[u].group_row - 1 for u in probers_now], dtype=np.intp)
    p_cols = np.asarray([sim.identifiers[u].chip_column - 1 for u in probers_now], dtype=np.intp)

    h_send = phy.group_phasors(h[s_idx], s_grp, Y) if senders else np.zeros((0, M_y), complex)
    h_probe = phy.group_phasors(h[p_idx], p_rows, Y) if probers_now else np.zeros((0, M_y), complex)
    samples = phy.superpose(M, N, Y, cfg.chip_energy, s_grp, bits_all[s_idx], cf[s_idx], ct[s_idx],
                            h_send, p_rows, p_cols, h_probe, noise)
    frame = phy.FrameGrid(samples, {(sim.identifiers[u].group_row, sim.identifiers[u].chip_column, u)
                                    for u in probers_now})
    cells = [(y, n) for y, n, _ in frame.probe_map]
    if len(set(cells)) != len(cells):
        raise ProtocolError(f"probe collision in frame {t}: {sorted(frame.probe_map)}")

    errors, sinr = {}, {}
    if senders:
        stat = phy.despread_many(samples, Y, s_grp, cf[s_idx], ct[s_idx], h_send).real
        wrong = np.where(stat >= 0, 1, -1) != bits_all[s_idx]
        # data-user SINR populations: this frame's senders and probe tones per group
        n_send = np.bincount(s_grp, minlength=Y)
        n_probe = np.bincount(p_rows, minlength=Y)
        pop_sq = np.bincount(s_grp, weights=sq[s_idx, :, s_grp].sum(axis=1), minlength=Y)
        if probers_now:
            pop_sq += np.bincount(p_rows, weights=sq[p_idx, :, p_rows].sum(axis=1), minlength=Y)
        cnt = (n_send + n_probe) * M_y
        mean_sq = np.divide(pop_sq, cnt, out=np.full(Y, 2.0 * cfg.rayleigh_scale**2), where=cnt > 0)
        g = s_grp
        den = (N * cfg.chip_energy * (n_send[g] - 1) * mean_sq[g]
               + n_probe[g] * cfg.chip_energy * mean_sq[g] + N * cfg.noise_density)
        num = N**2 * cfg.chip_energy * sum_sq[s_idx, g]
        with np.errstate(divide="ignore", over="ignore"):
            gam = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
        for k, u in enumerate(senders):
            sinr[u] = float(gam[k])
            errors[u] = int(wrong[k])

    decisions = []
    if state.mode == PROBING:
        found = scan_probes(frame, sim.lookup)
        probe_rows = [y for y, _, _ in found]
        taken = set()
        for _, _, u in found:
            st = state.user(u)
            if st.phase is not Phase.PROBING:
                raise ProtocolError(f"probe from user {u} in phase {st.phase.value}")
            holders = [[] for _ in range(Y)]
            probers = [[] for _ in range(Y)]
            for other in state.users:
                if other.assigned_group is not None:
                    holders[other.assigned_group - 1].append(other.user)
                elif other.phase is Phase.PROBING:
                    probers[other.probe_identifier.group_row - 1].append(other.user)
            values = probing_sinr_table(u, sum_sq, sq, holders, probers, probe_rows, cfg)
            chosen = select_best_group(values)
            marker = respond_probe(st.probe_identifier, chosen, taken, N, Y)
            if marker is None:
                raise ProtocolError(f"no free grant cell for user {u} in frame {t}")
            taken.add(marker)
            state.pending_grants.append((marker[0], marker[1], u))
            decisions.append(Decision(u, values, chosen, marker))
            _transition(st, Phase.AWAITING_GRANT, transitions, chosen)
            occ.probing_users[st.probe_identifier.group_row - 1] -= 1
            occ.data_users[chosen - 1] += 1

    completed = []
    transmissions = {}
    for u in senders:
        st = state.user(u)
        transmissions[u] = st.assigned_group
        st.bits_remaining -= 1
        st.bits_sent += 1
        if st.bits_remaining == 0:
            occ.data_users[st.assigned_group - 1] -= 1
            _transition(st, Phase.IDLE, transitions)
            completed.append(u)

    for u in granted_now:
        st = state.user(u)
        _transition(st, Phase.DATA, transitions, st.assigned_group)

    record = FrameRecord(
        frame=t,
        arrivals=arrivals,
        probes=sorted(frame.probe_map),
        grant_tones=grant_tones,
        decisions=decisions,
        transmissions=transmissions,
        sinr=sinr,
        errors=errors,
        completed=completed,
        transitions=transitions,
        occupancy={"data": list(occ.data_users), "probing": list(occ.probing_users)},
    )
    if sim.check_invariants:
        check_state(state, sim)
    state.frame += 1
    return record


def check_state(state: SystemState, sim: Simulator):
    """Per-user consistency and incremental-vs-recomputed occupancy."""
    for st in state.users:
        st.check()
    fresh = GroupOccupancy.from_users(state.users, sim.Y)
    if fresh != state.occupancy:
        raise ProtocolError(f"occupancy drift at frame {state.frame}: {state.occupancy} vs {fresh}")


def run(sim: Simulator, streams: Streams, frames: int, state: SystemState | None = None,
        on_frame=None) -> SystemState:
    state = state or sim.initial_state()
    for _ in range(frames):
        rec = advance_frame(state, sim, streams)
        if on_frame is not None:
            on_frame(rec, state)
    return state
