"""Adapter between the world simulator and the batched trainers.

Trainers drive many independent episodes in lockstep (one "lane" each).
A lane wraps one ``CyberEnv`` and presents the flat surface both learners
consume: lookup-group indices for the embedding tables, padded bit vectors,
padded action masks, and the message routing weights (every agent hears the
element-wise sum of all other agents' messages).
"""

from __future__ import annotations

import numpy as np

from .env import CyberEnv
from .scenario import ScenarioConfig


class CyberLane:
    def __init__(self, config: ScenarioConfig, sau_enabled: bool = True,
                 block_enabled: bool = True, red_enabled: bool = True,
                 record_enabled: bool = False):
        self.env = CyberEnv(config, sau_enabled=sau_enabled,
                            block_enabled=block_enabled, red_enabled=red_enabled,
                            record_enabled=record_enabled)
        self.config = config
        self.n_agents = config.agent_count
        self.horizon = config.horizon
        self.message_bits = config.message_bits
        self._max_hosts = max(len(s.hosts) for s in config.subnets)
        max_block_bits = max(config.block_bits(a) for a in range(self.n_agents))
        self.obs_table_cards = (16,) * self._max_hosts + (2 ** max_block_bits,)
        self.n_actions = tuple(self.env.action_space.n_actions(a)
                               for a in range(self.n_agents))
        self.max_actions = self.env.action_space.width
        self.max_obs_len = max(config.observation_length(a)
                               for a in range(self.n_agents))
        self._route = np.ones((self.n_agents, self.n_agents)) - np.eye(self.n_agents)

    def reset(self, seed: int) -> None:
        self.env.reset(seed)

    @property
    def done(self) -> bool:
        return self.env.done

    def obs_indices(self) -> np.ndarray:
        """(n_agents, n_groups) lookup keys; unused host slots stay at 0."""
        out = np.zeros((self.n_agents, len(self.obs_table_cards)), dtype=np.int64)
        for a in range(self.n_agents):
            groups, block_val = self.env.obs_group_indices(a)
            out[a, :len(groups)] = groups
            out[a, -1] = block_val
        return out

    def obs_bits_padded(self) -> np.ndarray:
        """(n_agents, max_obs_len) raw observation bits, zero-padded."""
        out = np.zeros((self.n_agents, self.max_obs_len))
        for a in range(self.n_agents):
            bits = self.env.encode_observation(a)
            out[a, :len(bits)] = bits
        return out

    def action_mask(self, agent: int, incoming_message_nonzero: bool = False
                    ) -> np.ndarray:
        return self.env.action_mask(agent, incoming_message_nonzero)

    def route_weights(self) -> np.ndarray:
        return self._route

    def step(self, actions, incoming_message_nonzero=None):
        outcome = self.env.step(actions, incoming_message_nonzero)
        return outcome.reward, outcome.done, outcome.record
