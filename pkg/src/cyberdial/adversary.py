"""Scripted attacker (multi-stage kill chain) and benign-user noise.

The red agent takes exactly one action per timestep, chosen by a fixed
priority ladder; ties inside a priority class are broken uniformly with the
episode RNG.  Knowledge about a host only ever increases, except when the
defender restores the host (re-imaging invalidates stale recon).

RNG contract (mirrored by the independent re-simulation oracle): every
non-idle decision consumes exactly one ``rng.integers(len(candidates))``
draw, even when the candidate list has a single entry.  Candidate lists are
assembled in global host declaration order; subnet candidates in config
declaration order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .scenario import DetectionProfile, ScenarioConfig, SubnetKind

if TYPE_CHECKING:
    from .env import WorldState


class Foothold(enum.Enum):
    NONE = "none"
    USER_SHELL = "user"
    PRIVILEGED_SHELL = "privileged"


class Knowledge(enum.IntEnum):
    UNKNOWN = 0
    DISCOVERED = 1
    SCANNED = 2


class RedActionKind(enum.Enum):
    DISCOVER_SUBNET = "discover_subnet"
    SCAN_HOST = "scan_host"
    EXPLOIT = "exploit"
    ESCALATE = "escalate"
    REESTABLISH = "reestablish"
    IMPACT = "impact"
    IDLE = "idle"


@dataclass(frozen=True)
class RedAction:
    kind: RedActionKind
    target: str | None = None  # host id, or subnet name for DISCOVER_SUBNET


@dataclass
class AlertCandidate:
    """A would-be IDS alert, sampled (or passed through) at the monitor stage."""
    host: str
    kind: str  # "scan" | "exploit"
    false_positive: bool = False


class IllegalTransition(RuntimeError):
    """The red action does not satisfy its own preconditions (policy bug)."""


@dataclass
class RedState:
    known_subnets: set[str] = field(default_factory=set)
    knowledge: dict[str, Knowledge] = field(default_factory=dict)
    sessions: dict[str, Foothold] = field(default_factory=dict)
    lost_sessions: set[str] = field(default_factory=set)
    start_host: str = ""
    start_subnet: str = ""

    def clone(self) -> "RedState":
        return RedState(set(self.known_subnets), dict(self.knowledge),
                        dict(self.sessions), set(self.lost_sessions),
                        self.start_host, self.start_subnet)


def initial_red_state(config: ScenarioConfig, start_host: str) -> RedState:
    """Foothold on one user-subnet host; siblings merely discovered."""
    start_subnet = config.subnet_of_host(start_host)
    red = RedState(start_host=start_host, start_subnet=start_subnet)
    red.known_subnets.add(start_subnet)
    for h in config.hosts():
        red.knowledge[h.id] = Knowledge.UNKNOWN
    for sub in config.subnets:
        if sub.name == start_subnet:
            for h in sub.hosts:
                red.knowledge[h.id] = Knowledge.DISCOVERED
    red.knowledge[start_host] = Knowledge.SCANNED
    red.sessions[start_host] = Foothold.USER_SHELL
    return red


def pick_start_host(config: ScenarioConfig, rng: np.random.Generator) -> str:
    """Uniform over hosts of the user subnet(s)."""
    user_hosts = [h.id for sub in config.subnets if sub.kind is SubnetKind.USER
                  for h in sub.hosts]
    if not user_hosts:
        user_hosts = [h.id for h in config.hosts()]
    return user_hosts[int(rng.integers(len(user_hosts)))]


def _anchor_subnets(config: ScenarioConfig, red: RedState, include_start: bool) -> set[str]:
    anchors = {config.subnet_of_host(h) for h in red.sessions}
    if include_start:
        anchors.add(red.start_subnet)
    return anchors


def _reachable(config: ScenarioConfig, world: "WorldState", red: RedState,
               host: str, include_start_anchor: bool) -> bool:
    """In an anchor subnet, or one unblocked link away from one."""
    target_subnet = config.subnet_of_host(host)
    anchors = _anchor_subnets(config, red, include_start_anchor)
    if target_subnet in anchors:
        return True
    for link in config.links:
        if target_subnet in link and not world.blocked[link]:
            other = link[0] if link[1] == target_subnet else link[1]
            if other in anchors:
                return True
    return False


def _operational_server(config: ScenarioConfig) -> str:
    from .scenario import Role
    return next(h.id for h in config.hosts() if h.role is Role.OPERATIONAL_SERVER)


def red_decide(world: "WorldState", red: RedState, rng: np.random.Generator) -> RedAction:
    """Priority ladder: impact, escalate, reestablish, exploit, scan, discover, idle."""
    config = world.config
    host_order = [h.id for h in config.hosts()]

    op_server = _operational_server(config)
    if red.sessions.get(op_server) is Foothold.PRIVILEGED_SHELL:
        cands = [op_server]
        return RedAction(RedActionKind.IMPACT, cands[int(rng.integers(len(cands)))])

    cands = [h for h in host_order if red.sessions.get(h) is Foothold.USER_SHELL]
    if cands:
        return RedAction(RedActionKind.ESCALATE, cands[int(rng.integers(len(cands)))])

    cands = [h for h in host_order
             if h in red.lost_sessions and h not in red.sessions
             and _reachable(config, world, red, h, include_start_anchor=True)]
    if cands:
        return RedAction(RedActionKind.REESTABLISH, cands[int(rng.integers(len(cands)))])

    cands = [h for h in host_order
             if red.knowledge[h] is Knowledge.SCANNED and h not in red.sessions
             and h not in red.lost_sessions
             and _reachable(config, world, red, h, include_start_anchor=True)]
    if cands:
        return RedAction(RedActionKind.EXPLOIT, cands[int(rng.integers(len(cands)))])

    cands = [h for h in host_order
             if red.knowledge[h] is Knowledge.DISCOVERED and h not in red.lost_sessions
             and _reachable(config, world, red, h, include_start_anchor=True)]
    if cands:
        return RedAction(RedActionKind.SCAN_HOST, cands[int(rng.integers(len(cands)))])

    if any(f is Foothold.PRIVILEGED_SHELL for f in red.sessions.values()):
        anchors = _anchor_subnets(config, red, include_start=False)
        sub_cands = []
        for name in config.subnet_names():
            if name in red.known_subnets:
                continue
            for link in config.links:
                if name in link and not world.blocked[link]:
                    other = link[0] if link[1] == name else link[1]
                    if other in anchors:
                        sub_cands.append(name)
                        break
        if sub_cands:
            return RedAction(RedActionKind.DISCOVER_SUBNET,
                             sub_cands[int(rng.integers(len(sub_cands)))])

    return RedAction(RedActionKind.IDLE)


def red_apply(world: "WorldState", red: RedState,
              action: RedAction) -> list[AlertCandidate]:
    """Apply a decided action; returns monitor alert candidates."""
    config = world.config
    kind, target = action.kind, action.target
    candidates: list[AlertCandidate] = []

    if kind is RedActionKind.IDLE:
        return candidates

    if kind is RedActionKind.DISCOVER_SUBNET:
        if target in red.known_subnets or target not in config.subnet_names():
            raise IllegalTransition(f"discover_subnet {target!r}")
        red.known_subnets.add(target)
        for sub in config.subnets:
            if sub.name == target:
                for h in sub.hosts:
                    if red.knowledge[h.id] < Knowledge.DISCOVERED:
                        red.knowledge[h.id] = Knowledge.DISCOVERED
        return candidates

    if target not in red.knowledge:
        raise IllegalTransition(f"{kind.value} on unknown host {target!r}")

    if kind is RedActionKind.SCAN_HOST:
        if not _reachable(config, world, red, target, include_start_anchor=True):
            raise IllegalTransition(f"scan_host {target!r} unreachable")
        if red.knowledge[target] < Knowledge.SCANNED:
            red.knowledge[target] = Knowledge.SCANNED
        candidates.append(AlertCandidate(target, "scan"))
    elif kind is RedActionKind.EXPLOIT:
        if red.knowledge[target] is not Knowledge.SCANNED or target in red.sessions:
            raise IllegalTransition(f"exploit {target!r} not scanned or already owned")
        if not _reachable(config, world, red, target, include_start_anchor=True):
            raise IllegalTransition(f"exploit {target!r} over a blocked link")
        red.sessions[target] = Foothold.USER_SHELL
        world.hosts[target].foothold = Foothold.USER_SHELL
        candidates.append(AlertCandidate(target, "exploit"))
    elif kind is RedActionKind.REESTABLISH:
        if target not in red.lost_sessions or target in red.sessions:
            raise IllegalTransition(f"reestablish {target!r} not a lost session")
        if not _reachable(config, world, red, target, include_start_anchor=True):
            raise IllegalTransition(f"reestablish {target!r} over a blocked link")
        red.sessions[target] = Foothold.USER_SHELL
        red.lost_sessions.discard(target)
        if red.knowledge[target] < Knowledge.SCANNED:
            red.knowledge[target] = Knowledge.SCANNED
        world.hosts[target].foothold = Foothold.USER_SHELL
        candidates.append(AlertCandidate(target, "exploit"))
    elif kind is RedActionKind.ESCALATE:
        if red.sessions.get(target) is not Foothold.USER_SHELL:
            raise IllegalTransition(f"escalate {target!r} without a user shell")
        red.sessions[target] = Foothold.PRIVILEGED_SHELL
        world.hosts[target].foothold = Foothold.PRIVILEGED_SHELL
        # silent: privilege escalation raises no monitor alert
    elif kind is RedActionKind.IMPACT:
        if red.sessions.get(target) is not Foothold.PRIVILEGED_SHELL:
            raise IllegalTransition(f"impact {target!r} without a privileged shell")
        # the disruption itself is priced by the per-step capture accrual
    else:
        raise IllegalTransition(f"unhandled red action {kind!r}")
    return candidates


def green_step(config: ScenarioConfig, profile: DetectionProfile,
               rng: np.random.Generator) -> list[AlertCandidate]:
    """Benign-user noise: at most one false alert per step in the user subnet.

    Draw order: activity uniform, then host index, then alarm-type uniform.
    """
    u = rng.random()
    if u >= profile.green_activity_rate:
        return []
    green_sub = next((s for s in config.subnets if s.kind is SubnetKind.USER),
                     config.subnets[0])
    idx = int(rng.integers(len(green_sub.hosts)))
    host = green_sub.hosts[idx].id
    v = rng.random()
    kind = "exploit" if v < profile.green_false_alarm_rate else "scan"
    return [AlertCandidate(host, kind, false_positive=True)]
