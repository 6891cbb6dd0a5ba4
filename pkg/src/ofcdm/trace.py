"""Frame-by-frame event traces and an offline checker that replays them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .config import SystemConfig, assign_probe_identifiers, build_subcarrier_groups
from .protocol import BASELINE, PROBING, Phase, Simulator, Streams, advance_frame, select_best_group

_LEGAL = {
    PROBING: {("idle", "probing"), ("probing", "awaiting_grant"), ("awaiting_grant", "data"), ("data", "idle")},
    BASELINE: {("idle", "data"), ("data", "idle")},
}


@dataclass
class Burst:
    user: int
    start: int
    end: int
    data_frames: int

    @property
    def duration(self) -> int:
        return self.end - self.start + 1

    @property
    def overhead(self) -> int:
        return self.duration - self.data_frames


@dataclass
class TraceReport:
    frames: int = 0
    decisions: int = 0
    argmax_violations: list = field(default_factory=list)
    collisions: list = field(default_factory=list)
    illegal_transitions: list = field(default_factory=list)
    occupancy_mismatches: list = field(default_factory=list)
    bursts: list = field(default_factory=list)
    bad_bursts: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.argmax_violations or self.collisions or self.illegal_transitions
                    or self.occupancy_mismatches or self.bad_bursts)

    def summary(self) -> str:
        return (f"frames={self.frames} decisions={self.decisions} bursts={len(self.bursts)} "
                f"argmax_violations={len(self.argmax_violations)} collisions={len(self.collisions)} "
                f"illegal_transitions={len(self.illegal_transitions)} "
                f"occupancy_mismatches={len(self.occupancy_mismatches)} bad_bursts={len(self.bad_bursts)}")


def simulate_trace(cfg: SystemConfig, mode: str = PROBING, frames: int | None = None, trial: int = 0,
                   check_invariants: bool = True) -> list[dict]:
    sim = Simulator(cfg, mode)
    sim.check_invariants = check_invariants
    streams = Streams.for_trial(cfg.master_seed, trial)
    state = sim.initial_state()
    frames = cfg.frames_per_trial if frames is None else frames
    return [advance_frame(state, sim, streams).to_dict() for _ in range(frames)]


def dump_records(records, fh):
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def load_records(fh) -> list[dict]:
    return [json.loads(line) for line in fh if line.strip() and not line.startswith("#")]


def check_trace(records, cfg: SystemConfig, mode: str) -> TraceReport:
    Y = len(build_subcarrier_groups(cfg.total_subcarriers, cfg.group_size))
    ids = assign_probe_identifiers(cfg.max_users, Y, cfg.time_spread)
    phase = {u: "idle" for u in ids}
    group = {u: None for u in ids}
    open_bursts = {}
    rep = TraceReport()
    expected_overhead = 2 if mode == PROBING else 0

    for rec in records:
        t = rec["frame"]
        rep.frames += 1
        for name in ("probes", "grants"):
            cells = [tuple(c[:2]) for c in rec[name]]
            if len(set(cells)) != len(cells):
                rep.collisions.append((t, name, rec[name]))
        for d in rec["decisions"]:
            rep.decisions += 1
            values = d["values"]
            best = select_best_group(values)
            if d["chosen"] != best or values[d["chosen"] - 1] < max(values):
                rep.argmax_violations.append((t, d["user"], d["chosen"], best))
        for u, b in open_bursts.items():
            if str(u) in rec["sent"]:
                b.data_frames += 1
        for u, old, new, g in rec["transitions"]:
            if phase[u] != old or (old, new) not in _LEGAL[mode]:
                rep.illegal_transitions.append((t, u, phase[u], old, new))
            phase[u], group[u] = new, g
            if old == "idle":
                open_bursts[u] = Burst(u, t, t, 1 if str(u) in rec["sent"] else 0)
            elif new == "idle" and u in open_bursts:
                b = open_bursts.pop(u)
                b.end = t
                rep.bursts.append(b)
                if b.data_frames != cfg.burst_bits or b.overhead != expected_overhead:
                    rep.bad_bursts.append(b)
        data = [0] * Y
        probing = [0] * Y
        for u in ids:
            if group[u] is not None:
                data[group[u] - 1] += 1
            elif phase[u] == Phase.PROBING.value:
                probing[ids[u].group_row - 1] += 1
        if rec["occupancy"] != {"data": data, "probing": probing}:
            rep.occupancy_mismatches.append((t, rec["occupancy"], {"data": data, "probing": probing}))
    return rep
