"""
Protocol catalogue and the value types shared by every protocol model.
"""
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional

MAX_ALPHA = 1.0 / 3.0
ALPHA_SLACK = 1e-12


class InvalidStateError(ValueError):
    """State tuple outside the model's state space."""


class InfeasibleActionError(ValueError):
    """Action not available at the given state."""


class ProtocolKind(Enum):
    TWO_CHS = "2chs"
    CHS = "chs"
    FHS = "fhs"
    STREAMLET = "streamlet"
    TWO_CHS_C = "2chs-c"
    CHS_C = "chs-c"
    FHS_C = "fhs-c"

    @property
    def display_name(self):
        return DISPLAY_NAMES[self]

    @property
    def is_countermeasure(self):
        return self in (ProtocolKind.TWO_CHS_C, ProtocolKind.CHS_C)

    @property
    def has_cnt(self):
        return self.is_countermeasure

    @classmethod
    def from_name(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"Unknown protocol '{name}'. Expected one of: {', '.join(CATALOGUE)}") from None


DISPLAY_NAMES = {
    ProtocolKind.TWO_CHS: "2CHS",
    ProtocolKind.CHS: "CHS",
    ProtocolKind.FHS: "FHS",
    ProtocolKind.STREAMLET: "Streamlet",
    ProtocolKind.TWO_CHS_C: "2CHS-C",
    ProtocolKind.CHS_C: "CHS-C",
    ProtocolKind.FHS_C: "FHS-C",
}

CATALOGUE = tuple(kind.value for kind in ProtocolKind)
BASE_KINDS = (ProtocolKind.TWO_CHS, ProtocolKind.CHS, ProtocolKind.FHS, ProtocolKind.STREAMLET)


class Leader(Enum):
    A = "A"
    H = "H"


class AdversaryAction(IntEnum):
    """Adversary moves; the integer order is the tie-breaking order."""
    ADOPT = 0
    WAIT = 1
    RELEASE = 2
    WITHHOLD = 3

    @property
    def label(self):
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label):
        try:
            return cls[str(label).strip().upper()]
        except KeyError:
            raise ValueError(f"Unknown action '{label}'") from None


@dataclass(frozen=True)
class ProtocolState:
    l_a: int
    l_h: int
    leader: Leader
    cnt: Optional[int] = None

    def sort_key(self):
        return (self.l_a, self.l_h, -1 if self.cnt is None else self.cnt, self.leader.value)

    def __str__(self):
        parts = [str(self.l_a), str(self.l_h)]
        if self.cnt is not None:
            parts.append(str(self.cnt))
        parts.append(self.leader.value)
        return "(" + ",".join(parts) + ")"

    @classmethod
    def parse(cls, text):
        """Inverse of str(): '(1,0,A)' or '(1,0,0,H)'."""
        parts = [p.strip() for p in str(text).strip().strip("()").split(",")]
        try:
            leader = Leader(parts[-1].upper())
            numbers = [int(p) for p in parts[:-1]]
        except (ValueError, IndexError):
            raise InvalidStateError(f"Cannot parse state '{text}'") from None
        if len(numbers) == 2:
            return cls(numbers[0], numbers[1], leader)
        if len(numbers) == 3:
            return cls(numbers[0], numbers[1], leader, numbers[2])
        raise InvalidStateError(f"Cannot parse state '{text}'")


@dataclass(frozen=True)
class ModelParams:
    """Byzantine fraction, honest-branch pick probability and truncation cap."""
    alpha: float
    gamma: float = 0.5
    l_max: int = 20

    def __post_init__(self):
        if not 0.0 <= self.alpha <= MAX_ALPHA + ALPHA_SLACK:
            raise ValueError(f"alpha must lie in [0, 1/3], got {self.alpha}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if int(self.l_max) != self.l_max or self.l_max < 2:
            raise ValueError(f"l_max must be an integer >= 2, got {self.l_max}")

    @property
    def beta(self):
        return 1.0 - self.alpha


def fhs_c_metrics(alpha):
    """Chain quality and censorship resilience of FHS-C against any adversary."""
    if not 0.0 <= alpha <= MAX_ALPHA + ALPHA_SLACK:
        raise ValueError(f"alpha must lie in [0, 1/3], got {alpha}")
    return 1.0 - alpha, 1.0


def ideal_metrics(alpha):
    """Baseline reached when every proposed block commits."""
    return fhs_c_metrics(alpha)
