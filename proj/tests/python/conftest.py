import os
import shutil
from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def slm_bin():
    path = os.environ.get("SLM_CLI") or shutil.which("slm")
    if not path:
        pytest.skip("slm executable not found (set SLM_CLI)")
    return Path(path)
