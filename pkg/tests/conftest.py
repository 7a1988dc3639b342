from __future__ import annotations

import pytest

from factorvid import build_quad_schedule, rescale_zero_terminal_snr

PAPER_STEPS = 1000
PAPER_BETA_START = 8.5e-4
PAPER_BETA_END = 1.2e-2


@pytest.fixture(scope="session")
def quad_sched():
    return build_quad_schedule(PAPER_STEPS, PAPER_BETA_START, PAPER_BETA_END)


@pytest.fixture(scope="session")
def zt_sched(quad_sched):
    return rescale_zero_terminal_snr(quad_sched)
