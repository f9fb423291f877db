import pytest


@pytest.fixture(scope="session")
def cal_cache(tmp_path_factory):
    """Session-wide calibration cache so expensive cells are computed once."""
    return str(tmp_path_factory.mktemp("cal-cache"))
