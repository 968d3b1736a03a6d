import os

import pytest

from hetheat.kernel import PiecewiseKernel, make_medium


@pytest.fixture(scope="session", autouse=True)
def _isolated_cache(tmp_path_factory):
    root = tmp_path_factory.mktemp("gram-cache")
    old = os.environ.get("HETHEAT_CACHE_DIR")
    os.environ["HETHEAT_CACHE_DIR"] = str(root)
    yield root
    if old is None:
        os.environ.pop("HETHEAT_CACHE_DIR", None)
    else:
        os.environ["HETHEAT_CACHE_DIR"] = old


@pytest.fixture(scope="session")
def heat():
    return PiecewiseKernel(make_medium(1, 1, 2, 2))


@pytest.fixture(scope="session")
def twomedia():
    return PiecewiseKernel(make_medium(1, 4, 1, 2))
