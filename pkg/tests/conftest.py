import os

import pytest


@pytest.fixture(scope="session", autouse=True)
def _isolated_cache_dir(tmp_path_factory):
    """Point the enumeration cache at a per-session scratch directory."""
    d = tmp_path_factory.mktemp("ballcache")
    old = os.environ.get("BIFCURRENT_CACHE_DIR")
    os.environ["BIFCURRENT_CACHE_DIR"] = str(d)
    yield str(d)
    if old is None:
        os.environ.pop("BIFCURRENT_CACHE_DIR", None)
    else:
        os.environ["BIFCURRENT_CACHE_DIR"] = old


@pytest.fixture(scope="session")
def surface():
    from bifcurrent.lattice import modular_torus

    return modular_torus()
