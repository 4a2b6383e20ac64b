"""
Transition and reward rows of every protocol model, behind one model interface.

Every row returns TransitionEntry outcomes whose next state is split by the
next view's leader: adversarial with probability alpha, honest otherwise.
Countermeasure fork rows additionally split by gamma, the probability that an
honest leader extends the honest branch.
"""
import logging

from mdp.core import RewardTriple, TransitionEntry, ZERO_REWARD, Policy
from models.protocols import (
    AdversaryAction,
    InfeasibleActionError,
    InvalidStateError,
    Leader,
    ModelParams,
    ProtocolKind,
    ProtocolState,
)

logger = logging.getLogger(__name__)

ADOPT = AdversaryAction.ADOPT
WAIT = AdversaryAction.WAIT
RELEASE = AdversaryAction.RELEASE
WITHHOLD = AdversaryAction.WITHHOLD

# Largest l_h the chained base models keep track of.
HONEST_WINDOW = {
    ProtocolKind.TWO_CHS: 1,
    ProtocolKind.FHS: 1,
    ProtocolKind.FHS_C: 1,
    ProtocolKind.CHS: 2,
}

# Largest cnt of the countermeasure models.
CNT_MAX = {
    ProtocolKind.TWO_CHS_C: 1,
    ProtocolKind.CHS_C: 2,
}


def _split(alpha, l_a, l_h, reward=ZERO_REWARD, cnt=None, weight=1.0):
    entries = []
    for leader, prob in ((Leader.A, weight * alpha), (Leader.H, weight * (1.0 - alpha))):
        if prob > 0:
            entries.append(TransitionEntry(ProtocolState(l_a, l_h, leader, cnt), prob, reward))
    return entries


def _chained_rows(state, action, alpha, window):
    """2CHS, FHS (window 1) and CHS (window 2)."""
    l_a, l_h = state.l_a, state.l_h
    honest_leader = state.leader is Leader.H
    if action is ADOPT:
        reward = RewardTriple(l_h, 0, 0)
        return _split(alpha, 0, 1, reward) if honest_leader else _split(alpha, 1, 0, reward)
    if action is WAIT:
        if honest_leader:
            reward = RewardTriple(1, 0, 0) if l_h == window else ZERO_REWARD
            return _split(alpha, 0, min(l_h + 1, window), reward)
        if l_a == 0:
            return _split(alpha, 1, l_h)
        return _split(alpha, 1, 0, RewardTriple(0, 1, l_h))
    # Release
    reward = RewardTriple(0, 1, l_h)
    return _split(alpha, 0, 1, reward) if honest_leader else _split(alpha, 1, 0, reward)


def _fhs_c_rows(state, action, alpha):
    """
    2CHS rows where a hidden block forking an uncommitted honest block can no
    longer gather votes: publishing or extending it commits the honest block.
    """
    l_a, l_h = state.l_a, state.l_h
    honest_leader = state.leader is Leader.H
    failed_fork = RewardTriple(l_h, 1 - l_h, 0)
    if action is ADOPT:
        reward = RewardTriple(l_h, 0, 0)
        return _split(alpha, 0, 1, reward) if honest_leader else _split(alpha, 1, 0, reward)
    if action is WAIT:
        if honest_leader:
            reward = RewardTriple(1, 0, 0) if l_h == 1 else ZERO_REWARD
            return _split(alpha, 0, 1, reward)
        if l_a == 0:
            return _split(alpha, 1, l_h)
        return _split(alpha, 1, 0, failed_fork)
    return _split(alpha, 0, 1, failed_fork) if honest_leader else _split(alpha, 1, 0, failed_fork)


def _streamlet_rows(state, action, alpha):
    l_a, l_h = state.l_a, state.l_h
    honest_leader = state.leader is Leader.H
    if action is ADOPT:
        reward = RewardTriple(l_h, 0, 0)
        return _split(alpha, 0, 1, reward) if honest_leader else _split(alpha, 1, 0, reward)
    if action is WAIT:
        if honest_leader:
            return _split(alpha, 0, l_h + 1)
        if l_a == 0:
            # a fork on a certified honest chain fails; l_h stays pending
            return _split(alpha, 1, 0) if l_h == 0 else _split(alpha, 0, l_h)
        return _split(alpha, 1, 0, RewardTriple(l_h, 1, 0))
    if action is RELEASE:
        reward = RewardTriple(l_h, 1, 0)
        return _split(alpha, 0, 1, reward) if honest_leader else _split(alpha, 1, 0, reward)
    # Withhold
    if honest_leader:
        return _split(alpha, 0, 0, RewardTriple(l_h, 1, 1))
    return _split(alpha, 1, 0, RewardTriple(l_h, 1, 0))


def _honest_extension(l_a, l_h, cnt, cnt_max):
    """
    Next (l_a, l_h, cnt) and committed honest blocks when an honest block
    extends the honest branch. Reaching cnt_max + 1 locks and commits the
    branch prefix, keeping cnt_max honest blocks pending.
    """
    if cnt + 1 > cnt_max:
        return (0, cnt_max, cnt_max), l_h + 1 - cnt_max
    return (l_a, l_h + 1, cnt + 1), 0


def _countermeasure_rows(state, action, alpha, gamma, cnt_max):
    """2CHS-C (cnt_max 1) and CHS-C (cnt_max 2)."""
    l_a, l_h, cnt = state.l_a, state.l_h, state.cnt
    honest_leader = state.leader is Leader.H

    def extend(weight=1.0):
        (n_a, n_h, n_cnt), committed = _honest_extension(l_a, l_h, cnt, cnt_max)
        return _split(alpha, n_a, n_h, RewardTriple(committed, 0, 0), n_cnt, weight)

    if action is ADOPT:
        reward = RewardTriple(l_h, 0, 0)
        return _split(alpha, 0, 1, reward, 1) if honest_leader else _split(alpha, 1, 0, reward, 0)

    adversary_ahead = l_h == 0 or l_a > l_h
    if not honest_leader:
        # Wait and Release coincide under an adversarial leader
        if adversary_ahead:
            return _split(alpha, 1, 0, RewardTriple(0, l_a, l_h), 0)
        return _split(alpha, l_a + 1, l_h, ZERO_REWARD, 0)

    if action is WAIT:
        if l_h == 0 or l_a <= l_h:
            return extend()
        # equal-height fork: the honest leader picks a branch at random
        return extend(gamma) + _split(alpha, 1, 1, RewardTriple(0, l_a - 1, l_h), 1, 1.0 - gamma)

    # Release under an honest leader
    if adversary_ahead:
        return _split(alpha, 0, 1, RewardTriple(0, l_a, l_h), 1)
    if l_a == l_h:
        return extend(gamma) + _split(alpha, 0, 1, RewardTriple(0, l_a, l_h), 1, 1.0 - gamma)
    return extend()


class ProtocolModel:
    """
    Uniform interface over one protocol's state space and transition table.
    Instances hold no mutable state and can be shared across threads.
    """

    def __init__(self, kind):
        self.kind = ProtocolKind.from_name(kind)

    def __repr__(self):
        return f"ProtocolModel({self.kind.value})"

    def __str__(self):
        return self.kind.display_name

    @property
    def name(self):
        return self.kind.value

    @staticmethod
    def sort_key(state):
        return state.sort_key()

    def validate_params(self, params):
        if not isinstance(params, ModelParams):
            raise ValueError(f"Expected ModelParams, got {type(params).__name__}")

    def validate_state(self, state, params):
        kind = self.kind
        if not isinstance(state, ProtocolState) or not isinstance(state.leader, Leader):
            raise InvalidStateError(f"{kind.display_name}: not a protocol state: {state!r}")
        if kind.has_cnt:
            valid = (
                state.cnt is not None
                and 0 <= state.cnt <= CNT_MAX[kind]
                and 0 <= state.l_a <= params.l_max
                and 0 <= state.l_h <= params.l_max
            )
        elif kind is ProtocolKind.STREAMLET:
            valid = state.cnt is None and state.l_a in (0, 1) and 0 <= state.l_h <= params.l_max
        else:
            valid = state.cnt is None and state.l_a in (0, 1) and 0 <= state.l_h <= HONEST_WINDOW[kind]
        if not valid:
            raise InvalidStateError(f"{kind.display_name}: invalid state {state}")

    def at_cap(self, state, params):
        if self.kind.has_cnt:
            return max(state.l_a, state.l_h) >= params.l_max
        if self.kind is ProtocolKind.STREAMLET:
            return state.l_h >= params.l_max
        return False

    def initial_state(self, params):
        cnt = 0 if self.kind.has_cnt else None
        return [
            (ProtocolState(0, 0, leader, cnt), prob)
            for leader, prob in ((Leader.A, params.alpha), (Leader.H, 1.0 - params.alpha))
            if prob > 0
        ]

    def feasible_actions(self, state, params):
        self.validate_state(state, params)
        if self.at_cap(state, params):
            return [ADOPT]
        actions = [ADOPT, WAIT]
        if state.l_a > 0:
            actions.append(RELEASE)
            if self.kind is ProtocolKind.STREAMLET:
                actions.append(WITHHOLD)
        return actions

    def transitions(self, state, action, params):
        action = AdversaryAction(action)
        if action not in self.feasible_actions(state, params):
            raise InfeasibleActionError(f"{self.kind.display_name}: {action.label} is not feasible at {state}")
        kind = self.kind
        if kind in HONEST_WINDOW and kind is not ProtocolKind.FHS_C:
            return _chained_rows(state, action, params.alpha, HONEST_WINDOW[kind])
        if kind is ProtocolKind.FHS_C:
            return _fhs_c_rows(state, action, params.alpha)
        if kind is ProtocolKind.STREAMLET:
            return _streamlet_rows(state, action, params.alpha)
        return _countermeasure_rows(state, action, params.alpha, params.gamma, CNT_MAX[kind])

    def honest_action(self, state, params):
        """Release a hidden block whenever possible, otherwise Adopt."""
        feasible = self.feasible_actions(state, params)
        return RELEASE if RELEASE in feasible else ADOPT


def get_model(name):
    return ProtocolModel(name)


def feasible_actions(kind, state, params):
    return get_model(kind).feasible_actions(state, params)


def transitions(kind, state, action, params):
    return get_model(kind).transitions(state, action, params)


def initial_state(kind, params):
    return get_model(kind).initial_state(params)


def honest_policy(model, table, params):
    """Policy under which every proposed block commits."""
    return Policy(tuple(model.honest_action(state, params) for state in table))
