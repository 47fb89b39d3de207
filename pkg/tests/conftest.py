import numpy as np
import pytest

from mcpotential.potential_model import CurrencyParams, MultiCurrencyModel, build_model
from mcpotential.chain_kernel import validate_intensity
from mcpotential.scenarios import two_state_reference

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def ref_model():
    return two_state_reference()


@pytest.fixture
def ref_set(ref_model):
    return MultiCurrencyModel(ref_model.q, {"USD": ref_model})


def flat_model(alpha: float):
    """One-state model: constant short rate ``alpha``."""
    return build_model(validate_intensity([[0.0]]), CurrencyParams([alpha], [1.0]))


def eig_expm(m, t=1.0):
    w, v = np.linalg.eig(np.asarray(m, dtype=float) * t)
    return np.real(v @ np.diag(np.exp(w)) @ np.linalg.inv(v))
