import numpy as np
import pytest
import torch

import pansharp as ps


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    """Small UNet that keeps unit tests fast."""
    return ps.PredictorConfig(in_bands=4, cond_bands=1, base_channels=16,
                              channel_mults=(1, 2), res_blocks_per_level=1,
                              time_embed_dim=32, norm_groups=4)


def make_pair(rng, pan_size=32, bands=4, ratio=4) -> ps.ImagePair:
    pan = ps.MultibandImage(rng.random((pan_size, pan_size, 1)), ps.Kind.PAN)
    ms = ps.MultibandImage(rng.random((pan_size // ratio, pan_size // ratio, bands)),
                           ps.Kind.MS)
    return ps.ImagePair(pan=pan, ms=ms, ratio=ratio)


def state_equal(a: torch.nn.Module, b: torch.nn.Module) -> bool:
    sa, sb = a.state_dict(), b.state_dict()
    return set(sa) == set(sb) and all(torch.equal(sa[k], sb[k]) for k in sa)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    rows = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            outcome = "PASS" if status == "passed" else "FAIL"
            if getattr(rep, "when", "call") != "call":
                outcome = "FAIL"
            if rows.get(name) != "FAIL":
                rows[name] = outcome
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(rows):
            terminalreporter.write_line(f"{name}: {rows[name]}")
