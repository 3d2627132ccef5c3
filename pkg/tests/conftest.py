import sys
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn as nn
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from raunenet.config import NetworkConfig  # noqa: E402
from raunenet.losses import save_backbone_state, _vgg19_bn_features  # noqa: E402

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    number = getattr(report, "acceptance", None)
    if number is None:
        return
    entry = _ACCEPTANCE.setdefault(number, {"title": report.acceptance_title, "outcomes": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        report.acceptance = marker.args[0]
        report.acceptance_title = marker.args[1]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[number]
        outcomes = entry["outcomes"]
        if "failed" in outcomes:
            status = "FAIL"
        elif outcomes and all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {number:2d} {status:4s}  {entry['title']}")


@pytest.fixture
def tiny_config():
    return NetworkConfig(base_channels=8, num_down_blocks=2, num_residual_blocks=2,
                         attention_reduction=4)


class ConvStubExtractor(nn.Module):
    """Five small smooth feature maps, a cheap stand-in for the backbone."""

    def __init__(self, seed=0, dtype=torch.float64):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList()
        cin = 3
        for _ in range(5):
            conv = nn.Conv2d(cin, 4, 3, padding=1).to(dtype)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen, dtype=dtype) * 0.3)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen, dtype=dtype) * 0.1)
            self.convs.append(conv)
            cin = 4
        self.requires_grad_(False)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = conv(x)
            feats.append(x)
            x = torch.tanh(x)
        return feats


class IdentityExtractor(nn.Module):
    def forward(self, x):
        return [x] * 5


@pytest.fixture
def stub_extractor():
    return ConvStubExtractor()


@pytest.fixture(scope="session")
def backbone_file(tmp_path_factory):
    """A randomly initialized VGG19_BN features file in torchvision layout."""
    torch.manual_seed(1234)
    path = tmp_path_factory.mktemp("weights") / "vgg19_bn-c79401a0.pth"
    save_backbone_state(_vgg19_bn_features(), path)
    return path


def write_rgb(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def make_paired_dir(root, n=3, size=(16, 16), identical=False, seed=0, suffix=".png"):
    rng = np.random.default_rng(seed)
    (root / "input").mkdir(parents=True, exist_ok=True)
    (root / "target").mkdir(parents=True, exist_ok=True)
    for i in range(n):
        ref = rng.integers(0, 256, size=(*size, 3))
        inp = ref if identical else np.clip(ref * 0.7 + 20, 0, 255)
        write_rgb(root / "input" / f"img{i:02d}{suffix}", inp)
        write_rgb(root / "target" / f"img{i:02d}.png", ref)
    return root


@pytest.fixture
def paired_dir(tmp_path):
    return make_paired_dir(tmp_path / "pairs")
