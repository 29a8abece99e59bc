import numpy as np
import pytest

from src.authentication.crypto import get_scheme
from src.blockchain.bcn import BlockchainNetwork
from src.blockchain.ledger import ContentMetadata
from src.caching.features import FeatureVector
from src.protocol.accounts import CpAccount, UserAccount, register_cp, register_users
from src.utility.models import load_scenario_config

MOVIES_CSV = """movieId,title,genres
1,Toy Story (1995),Adventure|Animation|Children|Comedy|Fantasy
2,"American President, The (1995)",Comedy|Drama|Romance
3,Lost Reel (2000),(no genres listed)
4,Big Screen Nature (2001),Documentary|IMAX
5,Heat (1995),Action|Crime|Thriller
6,Sing Along (1999),Children's|Musical
"""

RATINGS_CSV = """userId,movieId,rating,timestamp
1,1,4.0,1000
2,2,3.5,900
1,5,5.0,1000
3,2,2.0,50
4,1,1.0,5000
"""

# 24 in-window requests over movies 1..6, used by the end-to-end dataset fixture.
SCENARIO_RATINGS = "userId,movieId,rating,timestamp\n" + "".join(
    f"{1 + i % 4},{1 + (i * 5) % 6},3.0,{100 + 10 * i}\n" for i in range(24)
)


@pytest.fixture
def scheme():
    return get_scheme("sim")


@pytest.fixture
def movielens_dir(tmp_path):
    directory = tmp_path / "ml"
    directory.mkdir()
    (directory / "movies.csv").write_text(MOVIES_CSV, encoding="utf-8")
    (directory / "ratings.csv").write_text(RATINGS_CSV, encoding="utf-8")
    return directory


@pytest.fixture
def scenario_dataset(tmp_path):
    directory = tmp_path / "ml-scenario"
    directory.mkdir()
    (directory / "movies.csv").write_text(MOVIES_CSV, encoding="utf-8")
    (directory / "ratings.csv").write_text(SCENARIO_RATINGS, encoding="utf-8")
    return directory


@pytest.fixture
def make_config():
    """Small synthetic scenario; keyword arguments override any field."""

    def _make(**overrides):
        values = dict(
            synthetic=True,
            n_contents=60,
            n_requests=600,
            n_users=20,
            cp_count=3,
            per_cp=20,
            z_sweep=[0, 5, 10, 20],
            seed=0,
            fast=True,
        )
        values.update(overrides)
        return load_scenario_config(values)

    return _make


@pytest.fixture
def bcn(scheme):
    return BlockchainNetwork(scheme=scheme)


@pytest.fixture
def catalog():
    return {
        7: ContentMetadata(7, FeatureVector.from_indices([0, 4], 18), "CP1"),
        8: ContentMetadata(8, FeatureVector.from_indices([7], 18), "CP1"),
    }


@pytest.fixture
def cp(bcn, scheme, catalog):
    account = CpAccount.create("CP1", scheme=scheme, catalog=catalog)
    register_cp(account, bcn)
    return account


@pytest.fixture
def users(bcn, scheme):
    population = [UserAccount.create(f"user/{i}", scheme=scheme, user_id=i) for i in range(10)]
    register_users(population, bcn.node_keypair(0), bcn)
    return population


@pytest.fixture
def rng():
    return np.random.default_rng(7)