import pytest

from tegta import games


@pytest.fixture(scope="session")
def game1():
    return games.generate_game1(0)


@pytest.fixture(scope="session")
def game2():
    return games.generate_game2(0)


@pytest.fixture(scope="session")
def game3():
    return games.generate_game3(0)
