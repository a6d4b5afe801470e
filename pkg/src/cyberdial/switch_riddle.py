"""The prisoners-and-switch riddle: a known-solution communication task.

Each day one uniformly random prisoner is taken into a room containing a
one-bit switch.  Only that prisoner may rewrite the switch (its outgoing
message) and only that prisoner may announce that everyone has visited.
Announcing correctly ends the episode at +1, announcing wrongly at -1, and
running out of days scores 0.  The horizon is ``4n - 6`` days.

The task certifies the communication-learning core independently of the
cyber game: the message channel *is* the switch, so learning here proves
gradients flow usefully through the message path.
"""

from __future__ import annotations

import numpy as np

ACTION_NONE = 0
ACTION_TELL = 1


class SwitchRiddleEnv:
    """Lane-style environment with the same surface the trainers consume."""

    def __init__(self, n_agents: int = 3, forced_schedule=None):
        if n_agents < 3:
            raise ValueError("the riddle needs at least 3 prisoners")
        self.n_agents = n_agents
        self.horizon = 4 * n_agents - 6
        self.obs_table_cards = (2,)          # in the room, or not
        self.n_actions = (2,) * n_agents     # none / tell
        self.max_actions = 2
        self.message_bits = 1
        # evaluation hook: pin the room schedule to enumerate a policy's
        # exact expected return over all n^horizon schedules
        self.forced_schedule = forced_schedule
        self.schedule: np.ndarray | None = None
        self.day = 0
        self.has_been = np.zeros(n_agents, dtype=bool)
        self._done = True

    def reset(self, seed: int) -> None:
        if self.forced_schedule is not None:
            self.schedule = np.asarray(self.forced_schedule, dtype=np.int64)
            if self.schedule.shape != (self.horizon,):
                raise ValueError("forced schedule must cover the full horizon")
        else:
            rng = np.random.default_rng(seed)
            self.schedule = rng.integers(self.n_agents, size=self.horizon)
        self.day = 0
        self.has_been = np.zeros(self.n_agents, dtype=bool)
        self._done = False

    @property
    def done(self) -> bool:
        return self._done

    def in_room(self) -> int:
        return int(self.schedule[self.day])

    def obs_indices(self) -> np.ndarray:
        out = np.zeros((self.n_agents, 1), dtype=np.int64)
        out[self.in_room(), 0] = 1
        return out

    def action_mask(self, agent: int, incoming_message_nonzero: bool = False
                    ) -> np.ndarray:
        mask = np.zeros(self.max_actions, dtype=bool)
        mask[ACTION_NONE] = True
        mask[ACTION_TELL] = agent == self.in_room()
        return mask

    def route_weights(self) -> np.ndarray:
        """Today's room occupant reads what yesterday's occupant wrote."""
        w = np.zeros((self.n_agents, self.n_agents))
        if self.day > 0:
            w[self.in_room(), int(self.schedule[self.day - 1])] = 1.0
        return w

    def step(self, actions, incoming_message_nonzero=None) -> tuple[float, bool, None]:
        if self._done:
            raise RuntimeError("episode finished")
        agent = self.in_room()
        self.has_been[agent] = True
        for a, act in enumerate(actions):
            if act == ACTION_TELL and a != agent:
                raise ValueError(f"agent {a} told while outside the room")
        reward = 0.0
        if actions[agent] == ACTION_TELL:
            reward = 1.0 if self.has_been.all() else -1.0
            self._done = True
        self.day += 1
        if self.day >= self.horizon:
            self._done = True
        return reward, self._done, None


def optimal_protocol_return(n_agents: int = 3) -> float:
    """Expected return of the count-on-the-switch protocol, by enumeration.

    Protocol: the switch encodes "exactly one distinct prisoner has visited
    so far".  Day one's occupant writes 1.  Later occupants who see 1 write
    1 if they have visited before (still one distinct) and 0 otherwise (now
    two).  An occupant who sees 0 and has never visited is the third
    distinct visitor and announces; anyone else writes 0.  The announcement
    fires exactly when coverage happens, so the value equals the omniscient
    upper bound P(everyone visits within the horizon).
    """
    horizon = 4 * n_agents - 6
    total = 0.0
    count = 0
    for code in range(n_agents ** horizon):
        schedule = []
        c = code
        for _ in range(horizon):
            schedule.append(c % n_agents)
            c //= n_agents
        total += run_known_protocol(n_agents, schedule)
        count += 1
    return total / count


def run_known_protocol(n_agents: int, schedule) -> float:
    """Play one schedule under the known optimal protocol; returns its reward."""
    if n_agents != 3:
        raise NotImplementedError("the closed protocol here is specific to n=3")
    switch = 0          # semantics: 1 iff exactly one distinct visitor so far
    visited = set()
    for day, agent in enumerate(schedule):
        first_visit = agent not in visited
        visited.add(agent)
        if day == 0:
            switch = 1
            continue
        if switch == 1:
            switch = 0 if first_visit else 1
        else:
            if first_visit:
                return 1.0  # third distinct visitor: announce
            switch = 0
    return 0.0


def coverage_upper_bound(n_agents: int = 3) -> float:
    """P(all prisoners visit within the horizon): no protocol can beat this."""
    horizon = 4 * n_agents - 6
    wins = 0
    total = n_agents ** horizon
    for code in range(total):
        seen = set()
        c = code
        for _ in range(horizon):
            seen.add(c % n_agents)
            c //= n_agents
        if len(seen) == n_agents:
            wins += 1
    return wins / total
