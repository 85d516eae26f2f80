from os.path import dirname, abspath
import sys

import pytest


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run tests that train full-size trees')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: trains full-size trees on the default plant')

    # Add project and test root to path
    sys.path.insert(0, dirname(dirname(abspath(__file__))))
    sys.path.insert(0, dirname(abspath(__file__)))


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)
