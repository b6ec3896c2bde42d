from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(params=["convergence", "carleman", "stability", "reconstruction"])
def fixture_dir(request):
    return FIXTURES / request.param
