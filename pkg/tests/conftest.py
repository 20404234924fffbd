"""Shared fixtures: the desk-scale corpus and trained models (cached)."""

import pytest

import desk


@pytest.fixture(scope="session")
def desk_cache_dir():
    return desk.build_models(verbose=True)


@pytest.fixture(scope="session")
def desk_corpus(desk_cache_dir):
    return desk.build_corpus(desk_cache_dir)


@pytest.fixture(scope="session")
def desk_models(desk_cache_dir):
    return desk.load_models()
