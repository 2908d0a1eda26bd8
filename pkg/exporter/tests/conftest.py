import pytest

from pairgen import write_pair


@pytest.fixture(scope="session")
def pair_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pairs")
    paths = [write_pair(root, f"im{i}", width=48 + 16 * (i % 2), seed=i)
             for i in range(5)]
    return root, paths
