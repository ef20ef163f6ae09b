import sys
from pathlib import Path

import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from afc_memory.config import OUTPUT_DIR_ENV
from afc_memory.models import CombSpec
from afc_memory.spinwave import MaterialParams

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def _isolated_output_dir(monkeypatch):
    """Keep AFC_MEMORY_OUTPUT_DIR from leaking into config defaults."""
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def two_level_comb():
    """Five-tooth comb at 0.5 MHz spacing, F = 4, d = 4.12, d0 = 0.45."""
    return CombSpec(delta=0.5, tooth_fwhm=0.125, num_teeth=5, peak_depth=4.12, background_depth=0.45)


@pytest.fixture
def material():
    return MaterialParams()


@pytest.fixture
def ideal_material():
    """Material without spin dephasing, so readout echoes are not damped."""
    return MaterialParams(gamma_is=0.0)
