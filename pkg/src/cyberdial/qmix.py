"""QMix comparator: recurrent per-agent Q-networks under a monotone mixer.

Agents share one recurrent network fed with the raw observation bits, the
previous action one-hot and an agent-id one-hot.  Chosen per-agent Q-values
are mixed into a team value by a two-layer network whose weights come from
single-layer hypernetworks over the global state (the concatenation of all
agents' observations) and pass through an absolute value, so the mix is
monotone in every agent's Q.  Episodes land in a replay buffer; batches are
sampled uniformly once the buffer holds a full batch.

QMix agents have no message channel: the analyse action unmasks on local
threat visibility only.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value, no_grad
from .dial import epsilon_at, select_action
from .nn import AffineLayer, GRULayer, ParamStore
from .seeding import derive_episode_seed, derive_rng


@dataclass
class QmixConfig:
    epochs: int = 5000
    episodes_per_epoch: int = 128
    rollout_lanes: int = 8
    lr: float = 0.001
    gamma: float = 0.90
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_steps: int = 1_000_000
    hidden: int = 64
    mixing_hidden: int = 32
    target_update_epochs: int = 200
    buffer_capacity: int = 5000
    sample_batch: int = 128
    grad_clip: float = 10.0
    eval_episodes: int = 32
    checkpoint_every: int = 0


@dataclass
class Episode:
    obs: np.ndarray      # (T+1, n, obs_len) bits, includes the reset observation
    masks: np.ndarray    # (T+1, n, U) allowed bits
    actions: np.ndarray  # (T, n)
    rewards: np.ndarray  # (T,)


class QmixAgentNet:
    """Observation encoder -> ReLU -> GRU(hidden) -> linear Q head."""

    def __init__(self, obs_len: int, max_actions: int, n_agents: int,
                 hidden: int, rng: np.random.Generator, store: ParamStore):
        self.obs_len = obs_len
        self.max_actions = max_actions
        self.n_agents = n_agents
        self.hidden = hidden
        in_dim = obs_len + max_actions + n_agents
        self.encoder = AffineLayer(store, "agent.encoder", in_dim, hidden, rng)
        self.gru = GRULayer(store, "agent.gru", hidden, hidden, rng)
        self.head = AffineLayer(store, "agent.head", hidden, max_actions, rng)

    def forward(self, inputs: Value, h: Value) -> tuple[Value, Value]:
        x = ad.relu(self.encoder(inputs))
        h_new = self.gru(x, h)
        return self.head(h_new), h_new


class Mixer:
    """State-conditioned monotone mix of per-agent Q-values."""

    def __init__(self, n_agents: int, state_len: int, mixing_hidden: int,
                 rng: np.random.Generator, store: ParamStore):
        self.n_agents = n_agents
        self.state_len = state_len
        self.mixing_hidden = mixing_hidden
        self.hyper_w1 = AffineLayer(store, "mix.w1", state_len,
                                    n_agents * mixing_hidden, rng)
        self.hyper_b1 = AffineLayer(store, "mix.b1", state_len, mixing_hidden, rng)
        self.hyper_w2 = AffineLayer(store, "mix.w2", state_len, mixing_hidden, rng)
        self.hyper_v = AffineLayer(store, "mix.v", state_len, 1, rng)

    def mix(self, agent_qs: Value, state: Value) -> Value:
        """(B, n_agents), (B, state_len) -> (B,) team value."""
        B = agent_qs.data.shape[0]
        w1 = ad.reshape(ad.absval(self.hyper_w1(state)),
                        (B, self.n_agents, self.mixing_hidden))
        b1 = self.hyper_b1(state)
        hidden = ad.relu(ad.sum_elementwise(ad.batch_vec_mat(agent_qs, w1), b1))
        w2 = ad.reshape(ad.absval(self.hyper_w2(state)), (B, self.mixing_hidden, 1))
        v = self.hyper_v(state)
        q_tot = ad.sum_elementwise(ad.batch_vec_mat(hidden, w2), v)
        return ad.reshape(q_tot, (B,))


class QmixTrainer:
    def __init__(self, config: QmixConfig, env_factory, master_seed: int):
        self.config = config
        self.env_factory = env_factory
        self.master_seed = master_seed
        probe = env_factory()
        self.n_agents = probe.n_agents
        self.horizon = probe.horizon
        self.max_actions = probe.max_actions
        self.obs_len = probe.max_obs_len
        self.state_len = sum(probe.config.observation_length(a)
                             for a in range(self.n_agents))
        rng = derive_rng(master_seed, "params")
        self.store = ParamStore()
        self.agent_net = QmixAgentNet(self.obs_len, self.max_actions, self.n_agents,
                                      config.hidden, rng, self.store)
        self.mixer = Mixer(self.n_agents, self.state_len, config.mixing_hidden,
                           rng, self.store)
        self.target_store = self.store.clone()
        self.target_agent, self.target_mixer = self._bind_views(self.target_store)
        self.trainer_rng = derive_rng(master_seed, "trainer")
        self.replay: deque[Episode] = deque(maxlen=config.buffer_capacity)
        self.lane_envs = [env_factory() for _ in range(config.rollout_lanes)]
        self.timesteps_seen = 0
        self.episodes_seen = 0
        self.epochs_done = 0
        self.gradient_steps = 0

    def _bind_views(self, store: ParamStore) -> tuple[QmixAgentNet, Mixer]:
        agent = QmixAgentNet.__new__(QmixAgentNet)
        agent.obs_len, agent.max_actions = self.obs_len, self.max_actions
        agent.n_agents, agent.hidden = self.n_agents, self.config.hidden
        agent.encoder = _affine_view(store, "agent.encoder")
        agent.gru = _gru_view(store, "agent.gru", self.config.hidden)
        agent.head = _affine_view(store, "agent.head")
        mixer = Mixer.__new__(Mixer)
        mixer.n_agents, mixer.state_len = self.n_agents, self.state_len
        mixer.mixing_hidden = self.config.mixing_hidden
        mixer.hyper_w1 = _affine_view(store, "mix.w1")
        mixer.hyper_b1 = _affine_view(store, "mix.b1")
        mixer.hyper_w2 = _affine_view(store, "mix.w2")
        mixer.hyper_v = _affine_view(store, "mix.v")
        return agent, mixer

    def epsilon(self) -> float:
        return epsilon_at(self.config, self.timesteps_seen)

    # -- collection -------------------------------------------------------------

    def _net_inputs(self, obs: np.ndarray, prev_actions: np.ndarray) -> np.ndarray:
        """(B, n, obs_len), (B, n) -> (B*n, obs+U+n) with one-hots appended."""
        B, n, _ = obs.shape
        onehot_a = np.zeros((B, n, self.max_actions))
        rows = np.repeat(np.arange(B), n)
        cols = np.tile(np.arange(n), B)
        onehot_a[rows, cols, prev_actions.reshape(-1)] = 1.0
        agent_ids = np.zeros((B, n, self.n_agents))
        agent_ids[rows, cols, cols] = 1.0
        return np.concatenate([obs, onehot_a, agent_ids], axis=2).reshape(B * n, -1)

    def collect_group(self, size: int) -> list[Episode]:
        """Run ``size`` epsilon-greedy episodes in lockstep (no graph kept)."""
        envs = self.lane_envs[:size]
        seeds = [derive_episode_seed(self.master_seed, "env",
                                     self.episodes_seen + i) for i in range(size)]
        self.episodes_seen += size
        for env, seed in zip(envs, seeds):
            env.reset(seed)
        B, n = size, self.n_agents
        obs_hist, mask_hist, act_hist, rew_hist = [], [], [], []
        obs = np.stack([env.obs_bits_padded() for env in envs])
        masks = self._masks(envs)
        prev_actions = np.zeros((B, n), dtype=np.int64)
        hidden = ad.constant(np.zeros((B * n, self.config.hidden)))
        with no_grad():
            for t in range(self.horizon):
                q, hidden = self.agent_net.forward(
                    ad.constant(self._net_inputs(obs, prev_actions)), hidden)
                q = q.data.reshape(B, n, self.max_actions)
                eps = self.epsilon()
                actions = np.zeros((B, n), dtype=np.int64)
                for a in range(n):
                    for b in range(B):
                        actions[b, a] = select_action(q[b, a], masks[b, a], eps,
                                                      self.trainer_rng)
                rewards = np.zeros(B)
                for b, env in enumerate(envs):
                    reward, done, _ = env.step(actions[b].tolist())
                    rewards[b] = reward
                self.timesteps_seen += B
                obs_hist.append(obs)
                mask_hist.append(masks)
                act_hist.append(actions)
                rew_hist.append(rewards)
                prev_actions = actions
                obs = np.stack([env.obs_bits_padded() for env in envs])
                masks = self._masks(envs)
        obs_hist.append(obs)
        mask_hist.append(masks)
        episodes = []
        for b in range(B):
            episodes.append(Episode(
                obs=np.stack([o[b] for o in obs_hist]),
                masks=np.stack([m[b] for m in mask_hist]),
                actions=np.stack([a[b] for a in act_hist]),
                rewards=np.array([r[b] for r in rew_hist]),
            ))
        return episodes

    def _masks(self, envs) -> np.ndarray:
        out = np.zeros((len(envs), self.n_agents, self.max_actions), dtype=bool)
        for b, env in enumerate(envs):
            if not env.done:
                for a in range(self.n_agents):
                    # no message channel: the mask's message clause never fires
                    out[b, a] = env.action_mask(a, False)
            else:
                out[b, :, 0] = True
        return out

    # -- learning -----------------------------------------------------------------

    def _batch_q(self, agent_net, mixer, episodes: list[Episode],
                 use_chosen: bool) -> tuple[list[Value], list[np.ndarray]]:
        """Forward a batch; returns per-step mixed values and raw agent Qs."""
        B, n, T = len(episodes), self.n_agents, self.horizon
        obs = np.stack([ep.obs for ep in episodes])          # (B, T+1, n, obs)
        actions = np.stack([ep.actions for ep in episodes])  # (B, T, n)
        hidden = ad.constant(np.zeros((B * n, self.config.hidden)))
        mixed, raw = [], []
        for t in range(T):
            prev = actions[:, t - 1, :] if t > 0 else np.zeros((B, n), dtype=np.int64)
            q, hidden = agent_net.forward(
                ad.constant(self._net_inputs(obs[:, t], prev)), hidden)
            raw.append(q.data.reshape(B, n, self.max_actions))
            if use_chosen:
                chosen = ad.pick(q, actions[:, t, :].reshape(-1))
                chosen = ad.reshape(chosen, (B, n))
                state = ad.constant(self._states(obs[:, t]))
                mixed.append(mixer.mix(chosen, state))
        return mixed, raw

    def _states(self, obs_t: np.ndarray) -> np.ndarray:
        """Global state: concatenated (unpadded) agent observations."""
        parts = []
        probe = self.lane_envs[0]
        for a in range(self.n_agents):
            parts.append(obs_t[:, a, :probe.config.observation_length(a)])
        return np.concatenate(parts, axis=1)

    def train_step(self, episodes: list[Episode]) -> float:
        """One TD update on a sampled batch of full episodes."""
        B, n, T = len(episodes), self.n_agents, self.horizon
        masks = np.stack([ep.masks for ep in episodes])      # (B, T+1, n, U)
        rewards = np.stack([ep.rewards for ep in episodes])  # (B, T)
        obs = np.stack([ep.obs for ep in episodes])
        actions = np.stack([ep.actions for ep in episodes])

        with no_grad():
            q_tot_target = np.zeros((B, T))
            hidden = ad.constant(np.zeros((B * n, self.config.hidden)))
            for t in range(T):
                prev = actions[:, t - 1, :] if t > 0 else np.zeros((B, n), dtype=np.int64)
                q, hidden = self.target_agent.forward(
                    ad.constant(self._net_inputs(obs[:, t], prev)), hidden)
                if t == 0:
                    continue
                q = q.data.reshape(B, n, self.max_actions)
                best = np.where(masks[:, t], q, -np.inf).max(axis=2)  # (B, n)
                state = ad.constant(self._states(obs[:, t]))
                q_tot_target[:, t] = self.target_mixer.mix(
                    ad.constant(best), state).data
        targets = rewards.copy()
        targets[:, :-1] += self.config.gamma * q_tot_target[:, 1:]

        mixed, _ = self._batch_q(self.agent_net, self.mixer, episodes, use_chosen=True)
        terms = [ad.sq_err_sum(mixed[t], targets[:, t], 1.0 / B) for t in range(T)]
        loss = ad.add_scalars(terms)
        ad.backward(loss)
        self.store.clip_global_norm(self.config.grad_clip)
        self.store.rms_step(self.config.lr)
        self.gradient_steps += 1
        return float(loss.data)

    def train_epoch(self) -> dict:
        config = self.config
        if self.epochs_done % config.target_update_epochs == 0:
            self.target_store.copy_from(self.store)
        total = config.episodes_per_epoch
        sizes = [config.rollout_lanes] * (total // config.rollout_lanes)
        if total % config.rollout_lanes:
            sizes.append(total % config.rollout_lanes)
        losses = []
        for size in sizes:
            self.replay.extend(self.collect_group(size))
            if len(self.replay) >= config.sample_batch:
                picks = self.trainer_rng.choice(len(self.replay),
                                                size=config.sample_batch, replace=False)
                batch = [self.replay[int(k)] for k in picks]
                losses.append(self.train_step(batch))
        self.epochs_done += 1
        return {"loss": float(np.mean(losses)) if losses else float("nan")}

    # -- evaluation ------------------------------------------------------------------

    def evaluate(self, episodes: int, seed_index_base: int = 0,
                 collect_records: bool = False, seed_master: int | None = None) -> dict:
        master = self.master_seed if seed_master is None else seed_master
        envs = [self.env_factory() for _ in range(episodes)]
        if collect_records:
            for env in envs:
                if hasattr(env, "env"):
                    env.env.record_enabled = True
        seeds = [derive_episode_seed(master, "eval", seed_index_base + i)
                 for i in range(episodes)]
        for env, seed in zip(envs, seeds):
            env.reset(seed)
        B, n = episodes, self.n_agents
        returns = np.zeros(B)
        records = []
        obs = np.stack([env.obs_bits_padded() for env in envs])
        masks = self._masks(envs)
        prev_actions = np.zeros((B, n), dtype=np.int64)
        hidden = ad.constant(np.zeros((B * n, self.config.hidden)))
        with no_grad():
            for t in range(self.horizon):
                q, hidden = self.agent_net.forward(
                    ad.constant(self._net_inputs(obs, prev_actions)), hidden)
                q = q.data.reshape(B, n, self.max_actions)
                actions = np.zeros((B, n), dtype=np.int64)
                for b in range(B):
                    for a in range(n):
                        masked = np.where(masks[b, a], q[b, a], -np.inf)
                        actions[b, a] = int(np.argmax(masked))
                for b, env in enumerate(envs):
                    reward, done, record = env.step(actions[b].tolist())
                    returns[b] += reward
                    if collect_records and record is not None:
                        record["messages"] = []
                        record["lane"] = b
                        records.append(record)
                prev_actions = actions
                obs = np.stack([env.obs_bits_padded() for env in envs])
                masks = self._masks(envs)
        return {
            "returns": returns,
            "mean": float(returns.mean()),
            "std": float(returns.std()),
            "message_rate": 0.0,
            "records": records,
        }

    def train(self, on_epoch=None) -> list[dict]:
        history = []
        start = time.monotonic()
        for _ in range(self.config.epochs):
            stats = self.train_epoch()
            report = self.evaluate(self.config.eval_episodes,
                                   seed_index_base=self.epochs_done * 1_000_000)
            row = {
                "epoch": self.epochs_done,
                "episodes_seen": self.episodes_seen,
                "timesteps_seen": self.timesteps_seen,
                "epsilon": self.epsilon(),
                "eval_mean_return": report["mean"],
                "eval_std_return": report["std"],
                "wall_seconds": time.monotonic() - start,
                "loss": stats["loss"],
            }
            history.append(row)
            if on_epoch is not None:
                on_epoch(row, self)
        return history


def _affine_view(store: ParamStore, prefix: str) -> AffineLayer:
    layer = AffineLayer.__new__(AffineLayer)
    layer.w = store[prefix + ".w"]
    layer.b = store[prefix + ".b"]
    return layer


def _gru_view(store: ParamStore, prefix: str, hidden: int) -> GRULayer:
    layer = GRULayer.__new__(GRULayer)
    layer.hidden = hidden
    layer.w_i = store[prefix + ".w_i"]
    layer.w_h = store[prefix + ".w_h"]
    layer.b_i = store[prefix + ".b_i"]
    layer.b_h = store[prefix + ".b_h"]
    return layer
