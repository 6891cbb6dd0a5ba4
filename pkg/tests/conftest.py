import dataclasses
import time

import pytest

from ofcdm import metrics
from ofcdm.config import SystemConfig
from ofcdm.protocol import MODES

# Desk-scale uplink: 128 subcarriers, 32 users, 1000-bit bursts.
DESK_FRAMES = 5300
DESK_WARMUP = 300
DESK_SPREADING = ((16, 4), (8, 8))


def desk_config(M_y: int, N: int) -> SystemConfig:
    return dataclasses.replace(SystemConfig(), group_size=M_y, time_spread=N, burst_bits=1000,
                               arrival_rate=0.05, frames_per_trial=DESK_FRAMES, warmup_frames=DESK_WARMUP)


@pytest.fixture(scope="session")
def desk_curves():
    """{(M_y, N): {mode: BerCurve}} plus the wall time spent computing them."""
    t0 = time.perf_counter()
    curves = {}
    for M_y, N in DESK_SPREADING:
        cfg = desk_config(M_y, N)
        curves[M_y, N] = {mode: metrics.ber_monte_carlo(cfg, mode, metrics.DEFAULT_EBN0_GRID) for mode in MODES}
    return curves, time.perf_counter() - t0


_criteria: dict[str, list[bool]] = {}
_labels: dict[str, str] = {}
_details: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(tag, label): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            item.user_properties.append(("criterion", m.args[0]))
            _labels.setdefault(m.args[0], m.args[1])


def pytest_runtest_logreport(report):
    tag = dict(report.user_properties).get("criterion")
    if tag is None:
        return
    if report.when == "call" or report.failed:
        _criteria.setdefault(tag, []).append(report.passed)
        _details.setdefault(tag, []).extend(v for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_criteria, key=lambda s: (int("".join(c for c in s if c.isdigit()) or 0), s)):
        ok = all(_criteria[tag])
        detail = "; ".join(_details.get(tag, []))
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {tag}: {_labels[tag]}"
                                    + (f" [{detail}]" if detail else ""))
