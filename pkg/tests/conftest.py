import pytest

from kandiag import autograd


@pytest.fixture(autouse=True)
def finite_checks():
    autograd.debug_check_finite = True
    yield
    autograd.debug_check_finite = False
