"""
Finite average-reward MDP representation and exact solvers.

Models are compiled once into stacked (state, action) rows: a sparse
transition matrix with one row per feasible pair and the expected reward
components of every pair. Relative value iteration and stationary-distribution
policy evaluation both work on that compiled form.
"""
import hashlib
import logging
import traceback
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Hashable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

logger = logging.getLogger(__name__)

# Self-loop weight of the aperiodicity transform P' = tau * P + (1 - tau) * I.
APERIODICITY_TAU = 0.5
PROBABILITY_SLACK = 1e-12


class ModelError(ValueError):
    """Malformed MDP or a policy that does not fit it."""


class ConvergenceError(RuntimeError):
    """Value iteration did not reach the span tolerance."""

    def __init__(self, message, span, iterations):
        super().__init__(message)
        self.span = span
        self.iterations = iterations


class MultichainError(RuntimeError):
    """The induced chain has more than one closed class."""

    def __init__(self, message, classes):
        super().__init__(message)
        self.classes = classes


@dataclass(frozen=True)
class RewardTriple:
    """Committed-honest, committed-adversarial and overridden-honest block counts."""
    b_h: int = 0
    b_a: int = 0
    o_h: int = 0

    def __post_init__(self):
        for name in ("b_h", "b_a", "o_h"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 0:
                raise ModelError(f"Reward component {name} must be a non-negative integer, got {value!r}")

    def as_array(self):
        return np.array([self.b_h, self.b_a, self.o_h], dtype=float)


ZERO_REWARD = RewardTriple()


@dataclass(frozen=True)
class TransitionEntry:
    """One outcome of a (state, action) row."""
    next: Hashable
    prob: float
    reward: RewardTriple = ZERO_REWARD


@dataclass(frozen=True)
class LinearWeight:
    """Scalar weight c_h * b_h + c_a * b_a + c_o * o_h over reward components."""
    c_h: float = 0.0
    c_a: float = 0.0
    c_o: float = 0.0

    @property
    def coefficients(self):
        return np.array([self.c_h, self.c_a, self.c_o], dtype=float)

    def __call__(self, reward):
        return self.c_h * reward.b_h + self.c_a * reward.b_a + self.c_o * reward.o_h


class RewardRates(NamedTuple):
    """Long-run per-view expectations of each reward component."""
    b_h: float
    b_a: float
    o_h: float


@dataclass(frozen=True)
class StateTable:
    """Dense bijection between state ids and model states."""
    states: Tuple[Any, ...]
    index: Dict[Any, int] = field(compare=False, repr=False)

    @classmethod
    def from_states(cls, states):
        states = tuple(states)
        return cls(states=states, index={state: i for i, state in enumerate(states)})

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __contains__(self, state):
        return state in self.index

    def id_of(self, state):
        try:
            return self.index[state]
        except KeyError:
            raise ModelError(f"State {state} is not part of the enumerated model") from None

    def state_of(self, state_id):
        return self.states[state_id]


@dataclass(frozen=True)
class Policy:
    """Deterministic stationary policy: one action per state id."""
    choice: Tuple[Any, ...]

    def __len__(self):
        return len(self.choice)

    def __getitem__(self, state_id):
        return self.choice[state_id]

    def as_dict(self, table):
        return {str(table.state_of(i)): _action_label(action) for i, action in enumerate(self.choice)}

    def digest(self):
        text = ",".join(_action_label(action) for action in self.choice)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _action_label(action):
    return getattr(action, "label", str(action))


@dataclass
class _Compiled:
    pair_state: np.ndarray
    pair_action: List[Any]
    starts: np.ndarray
    transition: sparse.csr_matrix
    components: np.ndarray


@dataclass
class TransformedMdp:
    """
    Average-reward MDP with per-state action lists and a scalar reward weight.

    transitions[s][k] holds the TransitionEntry list of the k-th action of
    actions[s]; entry.next is a state id.
    """
    n_states: int
    actions: Sequence[Sequence[Any]]
    transitions: Sequence[Sequence[Sequence[TransitionEntry]]]
    weight: Callable[[RewardTriple], float] = field(default_factory=LinearWeight)
    states: Optional[StateTable] = None
    initial: Sequence[Tuple[int, float]] = ((0, 1.0),)
    _compiled: Optional[_Compiled] = field(default=None, init=False, repr=False, compare=False)

    def with_weight(self, weight):
        """Same structure under another weight; the compiled form is shared."""
        other = replace(self, weight=weight)
        other._compiled = self.compiled
        return other

    @property
    def compiled(self):
        if self._compiled is None:
            self._compiled = _compile(self)
        return self._compiled

    def pair_rewards(self):
        """Expected weighted reward of every (state, action) pair."""
        compiled = self.compiled
        coefficients = getattr(self.weight, "coefficients", None)
        if coefficients is not None:
            return compiled.components @ coefficients
        rewards = []
        for s in range(self.n_states):
            for entries in self.transitions[s]:
                rewards.append(sum(e.prob * self.weight(e.reward) for e in entries))
        return np.array(rewards, dtype=float)


def _compile(mdp):
    if mdp.n_states < 1:
        raise ModelError("MDP has no states")
    if len(mdp.actions) != mdp.n_states or len(mdp.transitions) != mdp.n_states:
        raise ModelError("Action and transition lists must cover every state")

    pair_state, pair_action, starts = [], [], []
    rows, cols, probs, components = [], [], [], []
    for s in range(mdp.n_states):
        if len(mdp.actions[s]) == 0:
            raise ModelError(f"State {s} has no feasible action")
        if len(mdp.transitions[s]) != len(mdp.actions[s]):
            raise ModelError(f"State {s}: {len(mdp.actions[s])} actions but {len(mdp.transitions[s])} rows")
        starts.append(len(pair_state))
        for action, entries in zip(mdp.actions[s], mdp.transitions[s]):
            pair = len(pair_state)
            total = 0.0
            expected = np.zeros(3)
            for entry in entries:
                if not 0 <= entry.next < mdp.n_states:
                    raise ModelError(f"State {s}, action {action}: next state {entry.next} out of range")
                if not 0.0 <= entry.prob <= 1.0:
                    raise ModelError(f"State {s}, action {action}: probability {entry.prob} outside [0, 1]")
                if entry.prob == 0.0:
                    continue
                rows.append(pair)
                cols.append(entry.next)
                probs.append(entry.prob)
                total += entry.prob
                expected += entry.prob * entry.reward.as_array()
            if abs(total - 1.0) > PROBABILITY_SLACK:
                raise ModelError(f"State {s}, action {action}: probabilities sum to {total!r}")
            pair_state.append(s)
            pair_action.append(action)
            components.append(expected)

    n_pairs = len(pair_state)
    transition = sparse.csr_matrix((probs, (rows, cols)), shape=(n_pairs, mdp.n_states))
    return _Compiled(
        pair_state=np.array(pair_state, dtype=np.int64),
        pair_action=pair_action,
        starts=np.array(starts, dtype=np.int64),
        transition=transition,
        components=np.array(components, dtype=float).reshape(n_pairs, 3),
    )


def enumerate_states(model_def, params):
    """
    Breadth-first enumeration of every state reachable from the initial
    distribution under any action sequence, ordered by the model's sort key.
    """
    model_def.validate_params(params)
    initial = [state for state, prob in model_def.initial_state(params) if prob > 0]
    seen = set(initial)
    queue = deque(initial)
    while queue:
        state = queue.popleft()
        for action in model_def.feasible_actions(state, params):
            for entry in model_def.transitions(state, action, params):
                if entry.prob > 0 and entry.next not in seen:
                    seen.add(entry.next)
                    queue.append(entry.next)
    table = StateTable.from_states(sorted(seen, key=model_def.sort_key))
    logger.debug(f"Enumerated {len(table)} reachable states for {model_def}")
    return table


def build_mdp(model_def, params, weight=None, table=None):
    """Compile a protocol model into a TransformedMdp over its reachable states."""
    try:
        if table is None:
            table = enumerate_states(model_def, params)
        actions, transitions = [], []
        for state in table:
            feasible = list(model_def.feasible_actions(state, params))
            actions.append(feasible)
            rows = []
            for action in feasible:
                rows.append([
                    TransitionEntry(table.id_of(e.next), e.prob, e.reward)
                    for e in model_def.transitions(state, action, params)
                ])
            transitions.append(rows)
        initial = [(table.id_of(state), prob) for state, prob in model_def.initial_state(params) if prob > 0]
        return TransformedMdp(
            n_states=len(table),
            actions=actions,
            transitions=transitions,
            weight=weight if weight is not None else LinearWeight(),
            states=table,
            initial=initial,
        )
    except Exception as e:
        logger.error(f"Error building MDP for {model_def}: {str(e)}")
        logger.error(traceback.format_exc())
        raise


@dataclass
class RviResult:
    value: float
    state_values: np.ndarray
    policy: Policy
    iterations: int
    span: float
    ties: int


def _restrict(mdp, policy):
    """Keep only the pair each state's policy action selects."""
    actions, transitions = [], []
    for s in range(mdp.n_states):
        action = policy[s]
        if action not in mdp.actions[s]:
            raise ModelError(f"Policy picks infeasible action {_action_label(action)} at state {_state_name(mdp, s)}")
        k = list(mdp.actions[s]).index(action)
        actions.append([action])
        transitions.append([mdp.transitions[s][k]])
    return TransformedMdp(mdp.n_states, actions, transitions, mdp.weight, mdp.states, mdp.initial)


def _state_name(mdp, s):
    return str(mdp.states.state_of(s)) if mdp.states is not None else str(s)


def relative_value_iteration(mdp, tol=1e-9, max_iter=100000, initial_values=None, policy=None):
    """
    Optimal long-run average weighted reward per view and a maximizing policy.

    Iterates on the aperiodic transform of the model; the gain is unchanged by
    it. Stops once the span of successive value differences drops below tol.
    Pass `policy` to evaluate that policy alone.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    if policy is not None:
        mdp = _restrict(mdp, policy)

    compiled = mdp.compiled
    rewards = mdp.pair_rewards()
    tau = APERIODICITY_TAU
    pair_state = compiled.pair_state
    starts = compiled.starts

    h = np.zeros(mdp.n_states) if initial_values is None else np.array(initial_values, dtype=float)
    if h.shape != (mdp.n_states,):
        h = np.zeros(mdp.n_states)

    span = np.inf
    for iteration in range(1, max_iter + 1):
        q = rewards + tau * (compiled.transition @ h) + (1.0 - tau) * h[pair_state]
        best = np.maximum.reduceat(q, starts)
        diff = best - h
        span = diff.max() - diff.min()
        h = best - best[0]
        if span < tol:
            break
    else:
        message = f"Value iteration did not converge in {max_iter} iterations (span {span:.3e}, tol {tol:.1e})"
        logger.error(message)
        raise ConvergenceError(message, span, max_iter)

    value = 0.5 * (diff.max() + diff.min())
    threshold = np.repeat(best, np.diff(np.append(starts, len(q)))) - tol
    near_best = q >= threshold
    choice, ties = [], 0
    for s in range(mdp.n_states):
        lo = starts[s]
        hi = starts[s + 1] if s + 1 < mdp.n_states else len(q)
        candidates = np.flatnonzero(near_best[lo:hi])
        if len(candidates) > 1:
            ties += 1
        choice.append(compiled.pair_action[lo + candidates[0]])

    logger.debug(f"Value iteration converged: value={value:.3e} iterations={iteration} span={span:.2e} ties={ties}")
    return RviResult(value=float(value), state_values=h, policy=Policy(tuple(choice)),
                     iterations=iteration, span=float(span), ties=ties)


def policy_chain(mdp, policy):
    """Transition matrix and expected reward components induced by a policy."""
    compiled = mdp.compiled
    pairs = []
    for s in range(mdp.n_states):
        action = policy[s]
        try:
            k = list(mdp.actions[s]).index(action)
        except ValueError:
            raise ModelError(
                f"Policy picks infeasible action {_action_label(action)} at state {_state_name(mdp, s)}"
            ) from None
        pairs.append(compiled.starts[s] + k)
    pairs = np.array(pairs, dtype=np.int64)
    return compiled.transition[pairs], compiled.components[pairs]


def _closed_classes(chain, reachable):
    n_components, labels = csgraph.connected_components(chain, directed=True, connection="strong")
    closed = np.ones(n_components, dtype=bool)
    coo = chain.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    closed[labels[coo.row[leaving & (coo.data > 0)]]] = False
    classes = []
    for label in np.flatnonzero(closed):
        members = np.flatnonzero(labels == label)
        if reachable[members].any():
            classes.append(members)
    return classes


def _reachable_from(chain, sources):
    reachable = np.zeros(chain.shape[0], dtype=bool)
    for source in sources:
        if reachable[source]:
            continue
        order = csgraph.breadth_first_order(chain, source, directed=True, return_predecessors=False)
        reachable[order] = True
    return reachable


def stationary_distribution(chain):
    """Stationary distribution of an irreducible chain (sparse, rows sum to 1)."""
    n = chain.shape[0]
    if n == 1:
        return np.ones(1)
    system = (chain.T - sparse.identity(n, format="csr")).tolil()
    system[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[n - 1] = 1.0
    pi = spsolve(system.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def evaluate_policy_exact(mdp, policy):
    """
    Exact long-run per-view expectations (b_h, b_a, o_h) of a policy, from the
    stationary distribution of its unique reachable closed class.
    """
    try:
        chain, components = policy_chain(mdp, policy)
        sources = [s for s, prob in mdp.initial if prob > 0] or [0]
        reachable = _reachable_from(chain, sources)
        classes = _closed_classes(chain, reachable)
        if len(classes) != 1:
            names = [[_state_name(mdp, s) for s in members[:5]] for members in classes]
            raise MultichainError(f"Policy induces {len(classes)} closed classes: {names}", names)
        members = classes[0]
        pi = stationary_distribution(chain[members][:, members])
        rates = pi @ components[members]
        return RewardRates(*(float(max(x, 0.0)) for x in rates))
    except (ModelError, MultichainError):
        raise
    except Exception as e:
        logger.error(f"Error evaluating policy: {str(e)}")
        logger.error(traceback.format_exc())
        raise
