import pytest

from mdp.core import LinearWeight, RewardTriple, TransformedMdp, TransitionEntry
from models.protocols import ModelParams


@pytest.fixture
def params():
    return ModelParams(alpha=0.2)


@pytest.fixture
def two_state_cycle():
    """0 -> 1 commits an honest block, 1 -> 0 commits an adversarial one."""
    return TransformedMdp(
        n_states=2,
        actions=[["go"], ["go"]],
        transitions=[
            [[TransitionEntry(1, 1.0, RewardTriple(1, 0, 0))]],
            [[TransitionEntry(0, 1.0, RewardTriple(0, 1, 0))]],
        ],
        weight=LinearWeight(c_h=1.0),
    )


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Run from an empty directory with results under tmp_path/results."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("CBFT_OUTPUT_DIR", str(tmp_path / "results"))
    return tmp_path
