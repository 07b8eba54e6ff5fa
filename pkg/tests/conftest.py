# pylint: disable=missing-module-docstring
import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run the desk-scale acceptance tests",
    )


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: desk-scale acceptance test (needs --run-slow)"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
