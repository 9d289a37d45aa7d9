import pytest

from _fixtures import make_recording


@pytest.fixture(scope="session")
def indy_like(tmp_path_factory):
    d = tmp_path_factory.mktemp("src")
    path = d / "indy_like_01.mat"
    meta = make_recording(path, n_ch=96, T=5000, seed=1)
    return path, meta


@pytest.fixture(scope="session")
def loco_like(tmp_path_factory):
    d = tmp_path_factory.mktemp("src2")
    path = d / "loco_like_01.mat"
    meta = make_recording(path, n_ch=192, T=2500, seed=2, n_reaches=5)
    return path, meta
