"""Ground-truth world simulation for the defence training game.

One ``CyberEnv`` instance owns one episode at a time: it applies the blue
team's actions, lets the benign-user and attacker scripts move, samples the
host-based IDS alerts, computes the shared team reward and encodes each
agent's partial observation.

Stage order inside ``step`` (frozen; the acceptance oracle re-implements it
line by line):

    0. clear last step's alert bits
    1. blue actions, in agent order (restore/wasted/block penalties recorded
       against the footholds as they were when blue acted)
    2. green activity, if enabled
    3. one red action (decide, then apply), respecting blocked links
    4. monitor: green candidates fire directly (they *are* false alarms);
       red candidates are sampled against the detection profile
    5. team reward = math.fsum of the itemized penalties
    6. timestep advances; done iff timestep == horizon

RNG draw order (one ``numpy`` Generator per episode, seeded at reset):
reset draws the start host (``integers``) then one detection roll
(``random``); each step draws the green gate (``random``; host ``integers``
and alarm-type ``random`` only when active), one ``integers`` per non-idle
red decision, and one ``random`` per red alert candidate at the monitor
stage.  With the red agent disabled, none of the red draws happen.

Observation layout per agent: four bits per host in its subnet, in subnet
declaration order — [scan alert, exploit alert, status-high, status-low] —
followed by one bit per incident link (1 = blocked).  Status codes: 00
nothing known, 01 exploit alert seen but unconfirmed, 10 user shell
confirmed, 11 privileged shell confirmed.  Once a host has been analysed
its status code tracks the true foothold until a restore clears the flag.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .adversary import (AlertCandidate, Foothold, Knowledge, RedState,
                        green_step, initial_red_state, pick_start_host,
                        red_apply, red_decide)
from .scenario import Role, ScenarioConfig

REPLAY_LOG_VERSION = 1


class MaskedActionError(RuntimeError):
    """An agent submitted an action its current mask forbids."""


class EpisodeFinishedError(RuntimeError):
    """step() called after the horizon was reached."""


class BlueActionKind(enum.Enum):
    SLEEP = "sleep"
    REMOVE = "remove"
    RESTORE = "restore"
    ANALYSE = "analyse"
    BLOCK = "block"


@dataclass(frozen=True)
class BlueAction:
    kind: BlueActionKind
    host: str | None = None
    link: tuple[str, str] | None = None

    def describe(self) -> str:
        if self.kind is BlueActionKind.SLEEP:
            return "sleep"
        if self.kind is BlueActionKind.BLOCK:
            return f"block {self.link[0]}<->{self.link[1]}"
        return f"{self.kind.value} {self.host}"


class ActionSpace:
    """Per-agent action tables, padded to a shared width for parameter sharing.

    Index order per agent: sleep, remove per host, restore per host, analyse
    per host, then block per incident link (omitted when blocking is
    disabled).  Indices past an agent's own table are permanently masked.
    """

    def __init__(self, config: ScenarioConfig, block_enabled: bool = True):
        self.config = config
        self.block_enabled = block_enabled
        self.tables: list[tuple[BlueAction, ...]] = []
        for sub in config.subnets:
            actions = [BlueAction(BlueActionKind.SLEEP)]
            for kind in (BlueActionKind.REMOVE, BlueActionKind.RESTORE,
                         BlueActionKind.ANALYSE):
                actions.extend(BlueAction(kind, host=h.id) for h in sub.hosts)
            if block_enabled:
                actions.extend(BlueAction(BlueActionKind.BLOCK, link=l)
                               for l in config.incident_links(sub.name))
            self.tables.append(tuple(actions))
        self.width = max(len(t) for t in self.tables)

    def n_actions(self, agent: int) -> int:
        return len(self.tables[agent])

    def decode(self, agent: int, index: int) -> BlueAction:
        table = self.tables[agent]
        if not 0 <= index < len(table):
            raise IndexError(f"agent {agent}: action index {index} out of range")
        return table[index]

    def index_of(self, agent: int, action: BlueAction) -> int:
        return self.tables[agent].index(action)


@dataclass
class TrueHostState:
    foothold: Foothold = Foothold.NONE
    suspected: bool = False      # an exploit alert was seen and never cleared
    confirmed: bool = False      # analysed: status code tracks ground truth
    scan_alert: bool = False     # raised this step
    exploit_alert: bool = False  # raised this step

    def status_code(self) -> int:
        if self.confirmed:
            return {Foothold.NONE: 0, Foothold.USER_SHELL: 2,
                    Foothold.PRIVILEGED_SHELL: 3}[self.foothold]
        return 1 if self.suspected else 0


@dataclass
class WorldState:
    config: ScenarioConfig
    hosts: dict[str, TrueHostState]
    blocked: dict[tuple[str, str], bool]
    timestep: int
    rng: np.random.Generator
    red: RedState | None
    footholds_before_blue: dict[str, Foothold] = field(default_factory=dict)


@dataclass
class StepOutcome:
    observations: list[np.ndarray]
    reward: float
    done: bool
    record: dict | None = None


def compute_reward(world: WorldState, actions: list[BlueAction]
                   ) -> tuple[float, list[dict]]:
    """Team reward at stage 5: action costs plus per-step capture accrual.

    Wasted-action penalties are judged against ``footholds_before_blue``,
    the snapshot taken when the blue actions were applied.
    """
    config = world.config
    pre = world.footholds_before_blue
    items: list[dict] = []
    for agent, action in enumerate(actions):
        if action.kind is BlueActionKind.RESTORE:
            role = next(h.role for h in config.hosts() if h.id == action.host)
            items.append({"category": "restore", "target": action.host,
                          "agent": agent,
                          "amount": config.penalties.restore_cost[role]})
        elif action.kind in (BlueActionKind.REMOVE, BlueActionKind.ANALYSE):
            if pre.get(action.host, Foothold.NONE) is Foothold.NONE:
                items.append({"category": "wasted", "target": action.host,
                              "agent": agent,
                              "amount": config.penalties.wasted_action})
        elif action.kind is BlueActionKind.BLOCK:
            items.append({"category": "block",
                          "target": f"{action.link[0]}<->{action.link[1]}",
                          "agent": agent,
                          "amount": config.penalties.block_cost})
    for spec in config.hosts():
        if world.hosts[spec.id].foothold is Foothold.PRIVILEGED_SHELL:
            items.append({"category": "capture", "target": spec.id,
                          "agent": None, "amount": spec.capture_penalty})
    reward = math.fsum(item["amount"] for item in items)
    return reward, items


class CyberEnv:
    """Single-owner episode simulator; create one per rollout lane."""

    def __init__(self, config: ScenarioConfig, sau_enabled: bool = True,
                 block_enabled: bool = True, red_enabled: bool = True,
                 record_enabled: bool = False):
        self.config = config
        self.sau_enabled = sau_enabled
        self.block_enabled = block_enabled
        self.red_enabled = red_enabled
        self.record_enabled = record_enabled
        self.action_space = ActionSpace(config, block_enabled)
        self.world: WorldState | None = None

    @property
    def n_agents(self) -> int:
        return self.config.agent_count

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, seed: int) -> list[np.ndarray]:
        rng = np.random.default_rng(seed)
        hosts = {h.id: TrueHostState() for h in self.config.hosts()}
        blocked = {l: False for l in self.config.links}
        red = None
        if self.red_enabled:
            start = pick_start_host(self.config, rng)
            red = initial_red_state(self.config, start)
            hosts[start].foothold = Foothold.USER_SHELL
            # the initial exploit passes through the monitor like any other
            if rng.random() < self.config.detection.exploit_detection_rate:
                hosts[start].exploit_alert = True
                hosts[start].suspected = True
        self.world = WorldState(config=self.config, hosts=hosts, blocked=blocked,
                                timestep=0, rng=rng, red=red)
        return [self.encode_observation(a) for a in range(self.n_agents)]

    @property
    def done(self) -> bool:
        return self.world is not None and self.world.timestep >= self.config.horizon

    # -- observations and masks ----------------------------------------------

    def encode_observation(self, agent: int) -> np.ndarray:
        world = self.world
        sub = self.config.subnets[agent]
        bits = np.zeros(self.config.observation_length(agent), dtype=np.int8)
        for j, h in enumerate(sub.hosts):
            state = world.hosts[h.id]
            code = state.status_code()
            base = 4 * j
            bits[base] = int(state.scan_alert)
            bits[base + 1] = int(state.exploit_alert)
            bits[base + 2] = code >> 1
            bits[base + 3] = code & 1
        offset = 4 * len(sub.hosts)
        for k, link in enumerate(self.config.incident_links(sub.name)):
            bits[offset + k] = int(world.blocked[link])
        return bits

    def obs_group_indices(self, agent: int) -> tuple[np.ndarray, int]:
        """Per-host 4-bit group values plus the block-bits value (embedding keys)."""
        world = self.world
        sub = self.config.subnets[agent]
        groups = np.zeros(len(sub.hosts), dtype=np.int64)
        for j, h in enumerate(sub.hosts):
            state = world.hosts[h.id]
            groups[j] = (int(state.scan_alert) << 3 | int(state.exploit_alert) << 2
                         | state.status_code())
        block_val = 0
        for k, link in enumerate(self.config.incident_links(sub.name)):
            block_val |= int(world.blocked[link]) << k
        return groups, block_val

    def action_mask(self, agent: int, incoming_message_nonzero: bool = False
                    ) -> np.ndarray:
        """Allowed bits over the padded action width.

        Sleep and block are always allowed.  Remove/restore need the host's
        observed status code to be nonzero.  Analyse needs a visible threat
        anywhere in this agent's observation, or (with strategic unmasking
        on) a nonzero incoming message.
        """
        table = self.action_space.tables[agent]
        mask = np.zeros(self.action_space.width, dtype=bool)
        sub = self.config.subnets[agent]
        obs = self.encode_observation(agent)
        host_bits = obs[:4 * len(sub.hosts)]
        threat_visible = bool(host_bits.any())
        codes = {h.id: self.world.hosts[h.id].status_code() for h in sub.hosts}
        analyse_ok = threat_visible or (self.sau_enabled and incoming_message_nonzero)
        for idx, action in enumerate(table):
            if action.kind is BlueActionKind.SLEEP or action.kind is BlueActionKind.BLOCK:
                mask[idx] = True
            elif action.kind in (BlueActionKind.REMOVE, BlueActionKind.RESTORE):
                mask[idx] = codes[action.host] != 0
            elif action.kind is BlueActionKind.ANALYSE:
                mask[idx] = analyse_ok
        return mask

    # -- stepping -------------------------------------------------------------

    def step(self, action_indices, incoming_message_nonzero=None) -> StepOutcome:
        if self.world is None:
            raise RuntimeError("reset() must be called before step()")
        if self.done:
            raise EpisodeFinishedError(f"episode ended at t={self.world.timestep}")
        world = self.world
        n = self.n_agents
        if len(action_indices) != n:
            raise ValueError(f"expected {n} actions, got {len(action_indices)}")
        flags = [False] * n if incoming_message_nonzero is None \
            else list(incoming_message_nonzero)

        actions = []
        for agent, idx in enumerate(action_indices):
            idx = int(idx)
            mask = self.action_mask(agent, bool(flags[agent]))
            if idx < 0 or idx >= self.action_space.width or not mask[idx]:
                desc = (self.action_space.decode(agent, idx).describe()
                        if idx < self.action_space.n_actions(agent) else f"index {idx}")
                raise MaskedActionError(f"agent {agent}: masked action {desc}")
            actions.append(self.action_space.decode(agent, idx))

        # stage 0: alert bits describe *this* step only
        for state in world.hosts.values():
            state.scan_alert = False
            state.exploit_alert = False

        # stage 1: blue
        world.footholds_before_blue = {hid: s.foothold for hid, s in world.hosts.items()}
        for action in actions:
            self._apply_blue(action)

        # stage 2: green
        candidates: list[AlertCandidate] = []
        green_event = None
        if self.config.green_enabled:
            green_candidates = green_step(self.config, self.config.detection, world.rng)
            candidates.extend(green_candidates)
            if green_candidates:
                green_event = {"host": green_candidates[0].host,
                               "alert": green_candidates[0].kind}

        # stage 3: red
        red_event = None
        if self.red_enabled:
            decided = red_decide(world, world.red, world.rng)
            candidates.extend(red_apply(world, world.red, decided))
            red_event = {"action": decided.kind.value, "target": decided.target}

        # stage 4: monitor
        fired = []
        det = self.config.detection
        for cand in candidates:
            if cand.false_positive:
                hit = True
            else:
                rate = (det.exploit_detection_rate if cand.kind == "exploit"
                        else det.scan_detection_rate)
                hit = world.rng.random() < rate
            if hit:
                state = world.hosts[cand.host]
                if cand.kind == "exploit":
                    state.exploit_alert = True
                    state.suspected = True
                else:
                    state.scan_alert = True
                fired.append({"host": cand.host, "type": cand.kind,
                              "false_positive": cand.false_positive})

        # stage 5: reward
        reward, items = compute_reward(world, actions)

        # stage 6
        world.timestep += 1
        done = world.timestep >= self.config.horizon
        observations = [self.encode_observation(a) for a in range(n)]

        record = None
        if self.record_enabled:
            record = {
                "v": REPLAY_LOG_VERSION,
                "type": "step",
                "t": world.timestep - 1,
                "actions": [{"agent": a, "action": act.describe()}
                            for a, act in enumerate(actions)],
                "red": red_event,
                "green": green_event,
                "alerts": fired,
                "reward": reward,
                "reward_items": [{k: v for k, v in item.items()} for item in items],
                "blocked": {f"{l[0]}<->{l[1]}": bool(b)
                            for l, b in world.blocked.items()},
                "true_state": self.true_state_snapshot(),
                "done": done,
            }
        return StepOutcome(observations, reward, done, record)

    def _apply_blue(self, action: BlueAction) -> None:
        world = self.world
        if action.kind is BlueActionKind.SLEEP:
            return
        if action.kind is BlueActionKind.BLOCK:
            world.blocked[action.link] = not world.blocked[action.link]
            return
        state = world.hosts[action.host]
        if action.kind is BlueActionKind.REMOVE:
            # kills a user-level shell; a privileged implant survives
            if state.foothold is Foothold.USER_SHELL:
                state.foothold = Foothold.NONE
                self._drop_red_session(action.host, demote_knowledge=False)
            state.suspected = False
        elif action.kind is BlueActionKind.RESTORE:
            state.foothold = Foothold.NONE
            state.suspected = False
            state.confirmed = False
            self._drop_red_session(action.host, demote_knowledge=True)
        elif action.kind is BlueActionKind.ANALYSE:
            state.confirmed = True

    def _drop_red_session(self, host: str, demote_knowledge: bool) -> None:
        red = self.world.red
        if red is None:
            return
        if host in red.sessions:
            del red.sessions[host]
            red.lost_sessions.add(host)
        if demote_knowledge and red.knowledge.get(host, Knowledge.UNKNOWN) > Knowledge.DISCOVERED:
            red.knowledge[host] = Knowledge.DISCOVERED

    # -- introspection ---------------------------------------------------------

    def true_state_snapshot(self) -> dict:
        return {
            hid: {"foothold": s.foothold.value, "suspected": s.suspected,
                  "confirmed": s.confirmed}
            for hid, s in self.world.hosts.items()
        }

    def worst_step_reward(self) -> float:
        """Lower bound on any single step's reward (for the return bound)."""
        capture_all = sum(h.capture_penalty for h in self.config.hosts())
        worst_action = min(min(self.config.penalties.restore_cost.values()),
                           self.config.penalties.wasted_action,
                           self.config.penalties.block_cost)
        return capture_all + self.n_agents * worst_action
