"""Session-scoped fixture directories shared across test modules.

Each builder writes a self-contained model + dataset tree into a fresh
temporary directory; see fixturegen.py for what every fixture plants.
"""

import pytest

import fixturegen
from camgate.model import load_model


@pytest.fixture(scope="session")
def planted_fx(tmp_path_factory):
    return fixturegen.planted_224(str(tmp_path_factory.mktemp("planted")))


@pytest.fixture(scope="session")
def suite12_fx(tmp_path_factory):
    return fixturegen.suite12(str(tmp_path_factory.mktemp("suite12")))


@pytest.fixture(scope="session")
def allpass_fx(tmp_path_factory):
    return fixturegen.all_pass_suite(str(tmp_path_factory.mktemp("allpass")))


@pytest.fixture(scope="session")
def broken_fx(tmp_path_factory):
    return fixturegen.broken_weights(str(tmp_path_factory.mktemp("broken")))


@pytest.fixture(scope="session")
def vgg_fx(tmp_path_factory):
    return fixturegen.vgg64(str(tmp_path_factory.mktemp("vgg")))


@pytest.fixture(scope="session")
def planted_model(planted_fx):
    return load_model(planted_fx["manifest"], planted_fx["weights"])


@pytest.fixture(scope="session")
def suite12_model(suite12_fx):
    return load_model(suite12_fx["manifest"], suite12_fx["weights"])
