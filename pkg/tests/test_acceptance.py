import pytest

from vpstab import acceptance

from conftest import ACCEPTANCE_LINES


@pytest.mark.slow
@pytest.mark.parametrize("criterion", acceptance.CRITERIA, ids=lambda c: f"criterion_{c.number}")
def test_acceptance_criterion(criterion):
    result = acceptance.run_criterion(criterion)
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line
