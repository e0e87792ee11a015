import pytest

from dynafeat import _kernels


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Compile the jitted kernels once so timings stay honest."""
    _kernels.warmup()
