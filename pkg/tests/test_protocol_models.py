import pytest

from mdp.core import RewardTriple, enumerate_states
from models.protocols import (
    CATALOGUE,
    AdversaryAction,
    InfeasibleActionError,
    InvalidStateError,
    Leader,
    ModelParams,
    ProtocolKind,
    ProtocolState,
    fhs_c_metrics,
)
from models.tables import _honest_extension, get_model, honest_policy

A, H = Leader.A, Leader.H
ADOPT, WAIT, RELEASE, WITHHOLD = (AdversaryAction.ADOPT, AdversaryAction.WAIT,
                                  AdversaryAction.RELEASE, AdversaryAction.WITHHOLD)


def _rows(protocol, state, action, alpha=0.2):
    return {(e.next, e.reward): e.prob for e in get_model(protocol).transitions(state, action, ModelParams(alpha))}


@pytest.mark.parametrize("protocol,count", [("2chs", 8), ("fhs", 8), ("chs", 12), ("streamlet", 44)])
def test_state_counts(protocol, count):
    assert len(enumerate_states(get_model(protocol), ModelParams(0.2))) == count


@pytest.mark.parametrize("protocol", CATALOGUE)
def test_rows_are_distributions(protocol):
    params = ModelParams(0.3, gamma=0.4, l_max=6)
    model = get_model(protocol)
    for state in enumerate_states(model, params):
        for action in model.feasible_actions(state, params):
            entries = model.transitions(state, action, params)
            assert sum(e.prob for e in entries) == pytest.approx(1.0)
            assert all(e.prob > 0 for e in entries)
            for e in entries:
                model.validate_state(e.next, params)


def test_2chs_honest_wait_commits_at_window():
    rows = _rows("2chs", ProtocolState(0, 1, H), WAIT)
    reward = RewardTriple(1, 0, 0)
    assert rows == {(ProtocolState(0, 1, A), reward): pytest.approx(0.2),
                    (ProtocolState(0, 1, H), reward): pytest.approx(0.8)}


def test_2chs_fork_overrides_honest_block():
    rows = _rows("2chs", ProtocolState(1, 1, A), WAIT)
    assert set(rows) == {(ProtocolState(1, 0, A), RewardTriple(0, 1, 1)),
                         (ProtocolState(1, 0, H), RewardTriple(0, 1, 1))}


def test_2chs_release_under_honest_leader():
    rows = _rows("2chs", ProtocolState(1, 1, H), RELEASE)
    assert set(rows) == {(ProtocolState(0, 1, A), RewardTriple(0, 1, 1)),
                         (ProtocolState(0, 1, H), RewardTriple(0, 1, 1))}


def test_2chs_and_fhs_tables_coincide():
    params = ModelParams(0.25)
    two, fhs = get_model("2chs"), get_model("fhs")
    for state in enumerate_states(two, params):
        for action in two.feasible_actions(state, params):
            assert two.transitions(state, action, params) == fhs.transitions(state, action, params)


def test_chs_keeps_two_pending_blocks():
    rows = _rows("chs", ProtocolState(0, 1, H), WAIT)
    assert {next_state for next_state, _ in rows} == {ProtocolState(0, 2, A), ProtocolState(0, 2, H)}
    assert {reward for _, reward in rows} == {RewardTriple(0, 0, 0)}


def test_streamlet_withhold_only_with_hidden_block():
    model = get_model("streamlet")
    params = ModelParams(0.2)
    assert WITHHOLD not in model.feasible_actions(ProtocolState(0, 3, H), params)
    assert WITHHOLD in model.feasible_actions(ProtocolState(1, 0, H), params)


def test_fhs_c_failed_fork_commits_honest_block():
    rows = _rows("fhs-c", ProtocolState(1, 1, H), RELEASE)
    assert {reward for _, reward in rows} == {RewardTriple(1, 0, 0)}


def test_release_needs_hidden_block():
    model = get_model("2chs")
    with pytest.raises(InfeasibleActionError):
        model.transitions(ProtocolState(0, 0, H), RELEASE, ModelParams(0.2))


@pytest.mark.parametrize("protocol,state", [
    ("2chs", ProtocolState(2, 0, H)),
    ("chs", ProtocolState(0, 3, A)),
    ("2chs-c", ProtocolState(0, 0, H)),
    ("chs-c", ProtocolState(0, 1, H, 3)),
    ("streamlet", ProtocolState(0, 0, H, 1)),
])
def test_invalid_states(protocol, state):
    with pytest.raises(InvalidStateError):
        get_model(protocol).feasible_actions(state, ModelParams(0.2))


def test_cap_forces_adopt():
    params = ModelParams(0.3, l_max=3)
    assert get_model("2chs-c").feasible_actions(ProtocolState(0, 3, H, 1), params) == [ADOPT]
    assert get_model("streamlet").feasible_actions(ProtocolState(0, 3, A), params) == [ADOPT]


def test_countermeasure_state_space_is_bounded():
    params = ModelParams(0.3, l_max=5)
    for protocol in ("2chs-c", "chs-c"):
        states = enumerate_states(get_model(protocol), params)
        assert all(max(s.l_a, s.l_h) <= params.l_max for s in states)
        assert ProtocolState(0, 0, H, 0) in states


def test_honest_extension_flushes_at_lock():
    assert _honest_extension(0, 1, 1, 1) == ((0, 1, 1), 1)
    assert _honest_extension(0, 2, 2, 2) == ((0, 2, 2), 1)
    assert _honest_extension(2, 1, 1, 2) == ((2, 2, 2), 0)


def test_initial_distribution():
    model = get_model("chs-c")
    initial = model.initial_state(ModelParams(0.25))
    assert initial == [(ProtocolState(0, 0, A, 0), 0.25), (ProtocolState(0, 0, H, 0), 0.75)]
    assert get_model("2chs").initial_state(ModelParams(0.0)) == [(ProtocolState(0, 0, H), 1.0)]


def test_honest_policy_never_waits():
    params = ModelParams(0.3)
    model = get_model("streamlet")
    table = enumerate_states(model, params)
    policy = honest_policy(model, table, params)
    assert set(policy.choice) <= {ADOPT, RELEASE}


def test_state_text_round_trip():
    state = ProtocolState(1, 2, H, 1)
    assert str(state) == "(1,2,1,H)"
    assert ProtocolState.parse("(1,2,1,H)") == state
    assert ProtocolState.parse("(0,1,A)") == ProtocolState(0, 1, A)
    with pytest.raises(InvalidStateError):
        ProtocolState.parse("(x,H)")


def test_state_order_puts_adversary_first():
    states = sorted([ProtocolState(0, 1, H), ProtocolState(0, 1, A), ProtocolState(0, 0, H)],
                    key=ProtocolState.sort_key)
    assert [str(s) for s in states] == ["(0,0,H)", "(0,1,A)", "(0,1,H)"]


def test_unknown_protocol_lists_catalogue():
    with pytest.raises(ValueError, match="2chs"):
        ProtocolKind.from_name("pbft")


@pytest.mark.parametrize("kwargs", [{"alpha": 0.4}, {"alpha": -0.1}, {"alpha": 0.2, "gamma": 1.0},
                                    {"alpha": 0.2, "l_max": 1}])
def test_parameter_validation(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_fhs_c_metrics():
    assert fhs_c_metrics(0.25) == (0.75, 1.0)
    with pytest.raises(ValueError):
        fhs_c_metrics(0.5)


def test_streamlet_withhold_row():
    rows = _rows("streamlet", ProtocolState(1, 2, H), WITHHOLD)
    assert set(rows) == {(ProtocolState(0, 0, A), RewardTriple(2, 1, 1)),
                         (ProtocolState(0, 0, H), RewardTriple(2, 1, 1))}


def test_streamlet_failed_fork_keeps_honest_blocks():
    rows = _rows("streamlet", ProtocolState(0, 3, A), WAIT)
    assert {next_state for next_state, _ in rows} == {ProtocolState(0, 3, A), ProtocolState(0, 3, H)}


def test_chs_commits_at_window():
    rows = _rows("chs", ProtocolState(0, 2, H), WAIT)
    assert set(rows) == {(ProtocolState(0, 2, A), RewardTriple(1, 0, 0)),
                         (ProtocolState(0, 2, H), RewardTriple(1, 0, 0))}


def test_streamlet_cap_state():
    params = ModelParams(0.2, l_max=20)
    assert get_model("streamlet").feasible_actions(ProtocolState(0, 20, H), params) == [ADOPT]


@pytest.mark.parametrize("protocol,cnt_max", [("2chs-c", 1), ("chs-c", 2)])
def test_lock_flush_bounds_cnt(protocol, cnt_max):
    states = enumerate_states(get_model(protocol), ModelParams(0.3, l_max=8))
    assert max(s.cnt for s in states) == cnt_max


# alpha 0.2, gamma 0.4: gamma-weighted leader split (0.08, 0.32), complement (0.12, 0.48)
COUNTERMEASURE_ROWS = [
    # Adopt
    ("chs-c", "(2,1,1,H)", ADOPT, [("(0,1,1,A)", 0.2, (1, 0, 0)), ("(0,1,1,H)", 0.8, (1, 0, 0))]),
    ("chs-c", "(2,1,0,A)", ADOPT, [("(1,0,0,A)", 0.2, (1, 0, 0)), ("(1,0,0,H)", 0.8, (1, 0, 0))]),
    ("2chs-c", "(0,0,0,H)", ADOPT, [("(0,1,1,A)", 0.2, (0, 0, 0)), ("(0,1,1,H)", 0.8, (0, 0, 0))]),
    # adversarial leader, adversary ahead: the longer branch wins
    ("chs-c", "(2,1,0,A)", WAIT, [("(1,0,0,A)", 0.2, (0, 2, 1)), ("(1,0,0,H)", 0.8, (0, 2, 1))]),
    ("chs-c", "(2,1,0,A)", RELEASE, [("(1,0,0,A)", 0.2, (0, 2, 1)), ("(1,0,0,H)", 0.8, (0, 2, 1))]),
    ("2chs-c", "(1,0,0,A)", WAIT, [("(1,0,0,A)", 0.2, (0, 1, 0)), ("(1,0,0,H)", 0.8, (0, 1, 0))]),
    # adversarial leader, honest branch at least as long: extend the hidden branch
    ("chs-c", "(1,2,1,A)", WAIT, [("(2,2,0,A)", 0.2, (0, 0, 0)), ("(2,2,0,H)", 0.8, (0, 0, 0))]),
    ("chs-c", "(1,2,1,A)", RELEASE, [("(2,2,0,A)", 0.2, (0, 0, 0)), ("(2,2,0,H)", 0.8, (0, 0, 0))]),
    # honest leader, Wait with the honest branch at least as long
    ("chs-c", "(1,1,1,H)", WAIT, [("(1,2,2,A)", 0.2, (0, 0, 0)), ("(1,2,2,H)", 0.8, (0, 0, 0))]),
    ("2chs-c", "(0,1,0,H)", WAIT, [("(0,2,1,A)", 0.2, (0, 0, 0)), ("(0,2,1,H)", 0.8, (0, 0, 0))]),
    # honest leader, Wait with a longer hidden branch: random pick, fork resets to (1,1,1)
    ("chs-c", "(3,1,1,H)", WAIT, [("(3,2,2,A)", 0.08, (0, 0, 0)), ("(3,2,2,H)", 0.32, (0, 0, 0)),
                                  ("(1,1,1,A)", 0.12, (0, 2, 1)), ("(1,1,1,H)", 0.48, (0, 2, 1))]),
    # honest leader, Release
    ("chs-c", "(2,1,0,H)", RELEASE, [("(0,1,1,A)", 0.2, (0, 2, 1)), ("(0,1,1,H)", 0.8, (0, 2, 1))]),
    ("chs-c", "(2,2,1,H)", RELEASE, [("(2,3,2,A)", 0.08, (0, 0, 0)), ("(2,3,2,H)", 0.32, (0, 0, 0)),
                                     ("(0,1,1,A)", 0.12, (0, 2, 2)), ("(0,1,1,H)", 0.48, (0, 2, 2))]),
    ("chs-c", "(1,3,1,H)", RELEASE, [("(1,4,2,A)", 0.2, (0, 0, 0)), ("(1,4,2,H)", 0.8, (0, 0, 0))]),
    # cnt overflow: lock, commit the prefix, keep cnt_max honest blocks pending
    ("chs-c", "(1,3,2,H)", WAIT, [("(0,2,2,A)", 0.2, (2, 0, 0)), ("(0,2,2,H)", 0.8, (2, 0, 0))]),
    ("chs-c", "(1,2,2,H)", RELEASE, [("(0,2,2,A)", 0.2, (1, 0, 0)), ("(0,2,2,H)", 0.8, (1, 0, 0))]),
    ("chs-c", "(3,2,2,H)", WAIT, [("(0,2,2,A)", 0.08, (1, 0, 0)), ("(0,2,2,H)", 0.32, (1, 0, 0)),
                                  ("(1,1,1,A)", 0.12, (0, 2, 2)), ("(1,1,1,H)", 0.48, (0, 2, 2))]),
    ("2chs-c", "(0,2,1,H)", WAIT, [("(0,1,1,A)", 0.2, (2, 0, 0)), ("(0,1,1,H)", 0.8, (2, 0, 0))]),
    ("2chs-c", "(2,1,1,H)", WAIT, [("(0,1,1,A)", 0.08, (1, 0, 0)), ("(0,1,1,H)", 0.32, (1, 0, 0)),
                                   ("(1,1,1,A)", 0.12, (0, 1, 1)), ("(1,1,1,H)", 0.48, (0, 1, 1))]),
    ("2chs-c", "(1,1,1,H)", RELEASE, [("(0,1,1,A)", 0.08, (1, 0, 0)), ("(0,1,1,H)", 0.32, (1, 0, 0)),
                                      ("(0,1,1,A)", 0.12, (0, 1, 1)), ("(0,1,1,H)", 0.48, (0, 1, 1))]),
]


@pytest.mark.parametrize("protocol,state,action,expected", COUNTERMEASURE_ROWS)
def test_countermeasure_table_rows(protocol, state, action, expected):
    entries = get_model(protocol).transitions(ProtocolState.parse(state), action, ModelParams(0.2, gamma=0.4))
    actual = [(str(e.next), e.prob, (e.reward.b_h, e.reward.b_a, e.reward.o_h)) for e in entries]
    assert len(actual) == len(expected)
    for (next_state, prob, reward), (want_state, want_prob, want_reward) in zip(actual, expected):
        assert next_state == want_state
        assert prob == pytest.approx(want_prob)
        assert reward == want_reward
