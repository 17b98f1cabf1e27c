from importlib import resources
from pathlib import Path

import pytest

from rotamer_forge.rotamers import parse_library
from rotamer_forge.structures import read_pdb

FIXTURES = Path(str(resources.files("rotamer_forge") / "fixtures"))
LIBRARY_PATH = FIXTURES / "mini_rotamer_library.bbdep.lib.gz"
TRAIN_IDS = ("1sya", "1syb", "1syc", "1syd", "1sye", "1syf")


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def library():
    return parse_library(LIBRARY_PATH)


@pytest.fixture(scope="session")
def corpus():
    return [read_pdb(p) for p in sorted((FIXTURES / "corpus").glob("*.pdb"))]


@pytest.fixture(scope="session")
def train_structures(corpus):
    return [s for s in corpus if s.identifier in TRAIN_IDS]


@pytest.fixture(scope="session")
def bundle(corpus):
    return next(s for s in corpus if s.identifier == "1sya")


@pytest.fixture(scope="session")
def test_structures():
    return [read_pdb(p) for p in sorted((FIXTURES / "test_corpus").glob("*.pdb"))]
