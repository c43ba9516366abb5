import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running desk-scale checks")
    config.addinivalue_line("markers", "acceptance: acceptance-gate criteria")
