import pytest

from roomecho import dataset as ds


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Small generated dataset shared across pipeline tests.

    4 rooms (2 categories), 5 sources, 3 receivers: enough for K=3
    references after excluding the target source.
    """
    root = tmp_path_factory.mktemp("toyset")
    cfg = ds.GenConfig(
        rooms_per_category=2,
        n_sources=5,
        n_receivers=3,
        seed=11,
        categories=(
            ds.CategorySpec("studio", "shoebox", (3.5, 4.8), (4.0, 5.5), (2.6, 3.0)),
            ds.CategorySpec("lounge", "lshape", (5.0, 7.0), (5.0, 7.0), (2.7, 3.2)),
        ),
    )
    ds.generate_dataset(cfg, root)
    return ds.Dataset(root)
