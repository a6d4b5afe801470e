"""Differentiable inter-agent learning with a shared recurrent Q-network.

One parameter set serves every agent.  Each timestep the network embeds the
agent's observation (one lookup table per host slot plus a block-bits
table), the incoming message (a one-layer map to the embedding width), the
previous action and the agent id; the element-wise sum feeds a two-layer
GRU whose output drives two linear heads: Q-values over environment actions
and the outgoing message.

During training messages stay real-valued — logistic(q + noise) — and the
computation graph connects a sender's message head at step t to every
receiver's loss at later steps, so the TD error backpropagates *across
agents* through the channel.  During execution messages harden to bits
(q > 0) and nothing is recorded on the wire when every bit is zero.

Action masks always apply; with strategic unmasking enabled, receiving a
nonzero message additionally unlocks the analyse action.  The mask's
"message received" predicate uses the discretized bits in both modes so
that training and execution see the same legality rules.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value, no_grad
from .nn import AffineLayer, GRULayer, ParamStore, init_embedding
from .seeding import derive_episode_seed, derive_rng


@dataclass
class DialConfig:
    epochs: int = 5000
    episodes_per_epoch: int = 128
    rollout_lanes: int = 8
    lr: float = 0.0005
    gamma: float = 0.90
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_steps: int = 1_000_000
    hidden: int = 128
    target_update_epochs: int = 100
    dru_sigma: float = 2.0
    grad_clip: float = 10.0
    eval_episodes: int = 32
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints

    def __post_init__(self):
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        for name in ("epochs", "episodes_per_epoch", "rollout_lanes", "lr", "gamma",
                     "epsilon_start", "hidden", "target_update_epochs",
                     "epsilon_anneal_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def epsilon_at(config: DialConfig, timesteps: int) -> float:
    """Linear anneal per environment timestep, clamped at the floor."""
    span = config.epsilon_start - config.epsilon_end
    frac = min(1.0, timesteps / config.epsilon_anneal_steps)
    return config.epsilon_start - span * frac


class CNet:
    """Shared embedding + 2-layer GRU + action and message heads."""

    def __init__(self, obs_table_cards, n_agents: int, max_actions: int,
                 message_bits: int, hidden: int, rng: np.random.Generator):
        self.obs_table_cards = tuple(obs_table_cards)
        self.n_agents = n_agents
        self.max_actions = max_actions
        self.message_bits = message_bits
        self.hidden = hidden
        store = ParamStore()
        self.store = store
        self.obs_tables = [init_embedding(store, f"obs_table_{i}", card, hidden, rng)
                           for i, card in enumerate(self.obs_table_cards)]
        self.msg_in = AffineLayer(store, "msg_in", message_bits, hidden, rng)
        self.uprev_table = init_embedding(store, "uprev_table", max_actions, hidden, rng)
        self.agent_table = init_embedding(store, "agent_table", n_agents, hidden, rng)
        self.gru1 = GRULayer(store, "gru1", hidden, hidden, rng)
        self.gru2 = GRULayer(store, "gru2", hidden, hidden, rng)
        self.head_env = AffineLayer(store, "head_env", hidden, max_actions, rng)
        self.head_msg = AffineLayer(store, "head_msg", hidden, message_bits, rng)

    def clone(self) -> "CNet":
        other = CNet.__new__(CNet)
        other.__dict__.update(self.__dict__)
        other.store = self.store.clone()
        # rebind layer views onto the cloned store
        other.obs_tables = [other.store[f"obs_table_{i}"]
                            for i in range(len(self.obs_tables))]
        other.msg_in = _rebind_affine(other.store, "msg_in")
        other.uprev_table = other.store["uprev_table"]
        other.agent_table = other.store["agent_table"]
        other.gru1 = _rebind_gru(other.store, "gru1", self.hidden)
        other.gru2 = _rebind_gru(other.store, "gru2", self.hidden)
        other.head_env = _rebind_affine(other.store, "head_env")
        other.head_msg = _rebind_affine(other.store, "head_msg")
        return other

    def embed_input(self, obs_idx: np.ndarray, m_in: Value, u_prev: np.ndarray,
                    agent_ids: np.ndarray) -> Value:
        """Element-wise sum of every embedded input; (batch, hidden)."""
        if obs_idx.shape[-1] != len(self.obs_tables):
            raise ValueError(f"expected {len(self.obs_tables)} lookup groups, "
                             f"got {obs_idx.shape[-1]}")
        terms = [ad.lookup(table, obs_idx[:, i])
                 for i, table in enumerate(self.obs_tables)]
        terms.append(self.msg_in(m_in))
        terms.append(ad.lookup(self.uprev_table, u_prev))
        terms.append(ad.lookup(self.agent_table, agent_ids))
        return ad.sum_elementwise(*terms)

    def forward(self, embed: Value, hidden: tuple[Value, Value]
                ) -> tuple[Value, Value, tuple[Value, Value]]:
        h1 = self.gru1(embed, hidden[0])
        h2 = self.gru2(h1, hidden[1])
        return self.head_env(h2), self.head_msg(h2), (h1, h2)

    def initial_hidden(self, batch: int) -> tuple[Value, Value]:
        zeros = np.zeros((batch, self.hidden))
        return ad.constant(zeros), ad.constant(zeros.copy())


def _rebind_affine(store: ParamStore, prefix: str) -> AffineLayer:
    layer = AffineLayer.__new__(AffineLayer)
    layer.w = store[prefix + ".w"]
    layer.b = store[prefix + ".b"]
    return layer


def _rebind_gru(store: ParamStore, prefix: str, hidden: int) -> GRULayer:
    layer = GRULayer.__new__(GRULayer)
    layer.hidden = hidden
    layer.w_i = store[prefix + ".w_i"]
    layer.w_h = store[prefix + ".w_h"]
    layer.b_i = store[prefix + ".b_i"]
    layer.b_h = store[prefix + ".b_h"]
    return layer


def dru(q_msg: Value, mode: str, sigma: float, rng: np.random.Generator | None = None,
        noise: np.ndarray | None = None):
    """Discretize/regularize the message head output.

    Train mode returns logistic(q + gaussian noise) as a differentiable
    ``Value`` (the noise is data); exec mode returns hard bits (q > 0) as a
    plain array.
    """
    if mode == "train":
        if noise is None:
            noise = (rng.normal(0.0, sigma, size=q_msg.data.shape)
                     if sigma > 0 else np.zeros(q_msg.data.shape))
        return ad.logistic(ad.add_noise(q_msg, noise))
    if mode == "exec":
        return (q_msg.data > 0.0).astype(np.float64)
    raise ValueError(f"unknown DRU mode {mode!r}")


def select_action(q_row: np.ndarray, mask: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over the allowed set; greedy ties break to lowest index."""
    allowed = np.flatnonzero(mask)
    if allowed.size == 0:
        raise ValueError("action mask allows nothing")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(allowed[rng.integers(allowed.size)])
    masked = np.where(mask, q_row, -np.inf)
    return int(np.argmax(masked))


@dataclass
class RolloutTrace:
    """Everything one lockstep group produced, step-indexed lists."""
    n_agents: int
    lanes: int
    obs_idx: list = field(default_factory=list)       # (B, n, G) int
    u_prev: list = field(default_factory=list)        # (B, n) int
    route: list = field(default_factory=list)         # (B, n, n)
    masks: list = field(default_factory=list)         # (n, B, U) bool
    actions: list = field(default_factory=list)       # (n, B) int
    rewards: list = field(default_factory=list)       # (B,)
    alive: list = field(default_factory=list)         # (B,) float
    terminal: list = field(default_factory=list)      # (B,) bool
    noise: list = field(default_factory=list)         # (n, B, M)
    q_env: list = field(default_factory=list)         # [Value(B,U)] per agent
    messages: list = field(default_factory=list)      # [Value(B,M)] per agent
    incoming: list = field(default_factory=list)      # (n, B, M) routed input data
    exec_bits: list = field(default_factory=list)     # (n, B, M)

    def __len__(self):
        return len(self.rewards)

    def lane_returns(self) -> np.ndarray:
        out = np.zeros(self.lanes)
        for r, a in zip(self.rewards, self.alive):
            out += r * a
        return out


class DialTrainer:
    """Collects train-mode rollouts and applies TD updates with BPTT."""

    def __init__(self, config: DialConfig, env_factory, master_seed: int,
                 record_eval: bool = False):
        self.config = config
        self.env_factory = env_factory
        self.master_seed = master_seed
        probe = env_factory()
        self.n_agents = probe.n_agents
        self.horizon = probe.horizon
        self.max_actions = probe.max_actions
        self.message_bits = probe.message_bits
        self.net = CNet(probe.obs_table_cards, self.n_agents, self.max_actions,
                        self.message_bits, config.hidden,
                        derive_rng(master_seed, "params"))
        self.target_net = self.net.clone()
        self.trainer_rng = derive_rng(master_seed, "trainer")
        self.lane_envs = [env_factory() for _ in range(config.rollout_lanes)]
        self.timesteps_seen = 0
        self.episodes_seen = 0
        self.epochs_done = 0

    # -- rollouts --------------------------------------------------------------

    def epsilon(self) -> float:
        return epsilon_at(self.config, self.timesteps_seen)

    def run_rollout(self, envs, seeds, mode: str, epsilon: float | None = None,
                    collect_records: bool = False) -> tuple[RolloutTrace, list]:
        """Full-horizon lockstep rollout over parallel lanes.

        In train mode the autodiff graph is kept, messages stay real-valued,
        and exploration follows the per-timestep anneal schedule unless a
        fixed ``epsilon`` is forced; in exec mode actions are greedy,
        messages are bits and no graph is built.
        """
        assert mode in ("train", "exec")
        train = mode == "train"
        B = len(envs)
        n = self.n_agents
        M = self.message_bits
        net = self.net
        for env, seed in zip(envs, seeds):
            env.reset(seed)
        trace = RolloutTrace(n_agents=n, lanes=B)
        records = []
        hidden = [net.initial_hidden(B) for _ in range(n)]
        agent_ids = [np.full(B, a, dtype=np.int64) for a in range(n)]
        m_prev: list = [ad.constant(np.zeros((B, M))) for _ in range(n)]
        bits_prev = np.zeros((n, B, M))
        u_prev = np.zeros((B, n), dtype=np.int64)
        alive = np.ones(B, dtype=bool)

        for t in range(self.horizon):
            if not alive.any():
                break
            if not train:
                eps_t = 0.0
            elif epsilon is not None:
                eps_t = epsilon
            else:
                eps_t = epsilon_at(self.config, self.timesteps_seen)
            obs_idx = np.zeros((B, n, len(net.obs_table_cards)), dtype=np.int64)
            route = np.zeros((B, n, n))
            for b, env in enumerate(envs):
                if alive[b]:
                    obs_idx[b] = env.obs_indices()
                    route[b] = env.route_weights()
            # routed exec bits decide the "message received" mask predicate
            inc_bits = np.einsum("baj,jbm->abm", route, bits_prev)
            inc_nonzero = inc_bits.sum(axis=2) > 0.0  # (agent, lane)
            masks = np.zeros((n, B, self.max_actions), dtype=bool)
            for a in range(n):
                for b, env in enumerate(envs):
                    if alive[b]:
                        masks[a, b] = env.action_mask(a, bool(inc_nonzero[a, b]))
                    else:
                        masks[a, b, 0] = True

            step_q, step_msgs, step_noise = [], [], np.zeros((n, B, M))
            step_incoming = np.zeros((n, B, M))
            actions = np.zeros((n, B), dtype=np.int64)
            for a in range(n):
                if train:
                    m_in = ad.weighted_sum(m_prev, [route[:, a, j] for j in range(n)])
                else:
                    m_in = ad.constant(inc_bits[a])
                step_incoming[a] = m_in.data
                z = net.embed_input(obs_idx[:, a, :], m_in, u_prev[:, a], agent_ids[a])
                q_env, q_msg, hidden[a] = net.forward(z, hidden[a])
                for b in range(B):
                    if alive[b]:
                        actions[a, b] = select_action(q_env.data[b], masks[a, b],
                                                      eps_t, self.trainer_rng)
                if train:
                    noise = self.trainer_rng.normal(0.0, self.config.dru_sigma,
                                                    size=(B, M))
                    step_noise[a] = noise
                    msg = dru(q_msg, "train", self.config.dru_sigma, noise=noise)
                else:
                    msg = ad.constant(dru(q_msg, "exec", self.config.dru_sigma))
                step_msgs.append(msg)
                step_q.append(q_env)

            rewards = np.zeros(B)
            terminal = np.zeros(B, dtype=bool)
            for b, env in enumerate(envs):
                if not alive[b]:
                    continue
                reward, done, record = env.step(actions[:, b].tolist(),
                                                inc_nonzero[:, b].tolist())
                rewards[b] = reward
                terminal[b] = done
                if collect_records and record is not None:
                    sent = [{"agent": a, "bits": [int(v) for v in
                                                  (step_msgs[a].data[b] > 0.5)]}
                            for a in range(n)
                            if mode == "exec" and np.any(step_msgs[a].data[b] != 0.0)]
                    record["messages"] = sent
                    record["lane"] = b
                    records.append(record)

            trace.obs_idx.append(obs_idx)
            trace.u_prev.append(u_prev.copy())
            trace.route.append(route)
            trace.masks.append(masks)
            trace.actions.append(actions)
            trace.rewards.append(rewards)
            trace.alive.append(alive.astype(np.float64))
            trace.terminal.append(terminal)
            trace.noise.append(step_noise)
            trace.q_env.append(step_q)
            trace.messages.append(step_msgs)
            trace.incoming.append(step_incoming)
            trace.exec_bits.append(np.stack([(m.data > 0.5).astype(np.float64)
                                             if train else m.data
                                             for m in step_msgs]))

            if train:
                self.timesteps_seen += int(alive.sum())
            u_prev = actions.T.copy()
            m_prev = step_msgs
            bits_prev = trace.exec_bits[-1]
            alive = alive & ~terminal
        return trace, records

    # -- loss -------------------------------------------------------------------

    def _target_q(self, trace: RolloutTrace) -> list[np.ndarray]:
        """Replay the trace through the target network (its own messages)."""
        B, n, M = trace.lanes, self.n_agents, self.message_bits
        net = self.target_net
        out = []
        with no_grad():
            hidden = [net.initial_hidden(B) for _ in range(n)]
            agent_ids = [np.full(B, a, dtype=np.int64) for a in range(n)]
            m_prev = [ad.constant(np.zeros((B, M))) for _ in range(n)]
            for t in range(len(trace)):
                route = trace.route[t]
                q_step = np.zeros((n, B, self.max_actions))
                msgs = []
                for a in range(n):
                    m_in = ad.weighted_sum(m_prev, [route[:, a, j] for j in range(n)])
                    z = net.embed_input(trace.obs_idx[t][:, a, :], m_in,
                                        trace.u_prev[t][:, a], agent_ids[a])
                    q_env, q_msg, hidden[a] = net.forward(z, hidden[a])
                    msgs.append(dru(q_msg, "train", self.config.dru_sigma,
                                    noise=trace.noise[t][a]))
                    q_step[a] = q_env.data
                m_prev = msgs
                out.append(q_step)
        return out

    def td_targets(self, trace: RolloutTrace) -> list[np.ndarray]:
        """y_t per agent/lane: reward plus discounted allowed-max target Q."""
        T = len(trace)
        tq = self._target_q(trace)
        targets = []
        for t in range(T):
            y = np.tile(trace.rewards[t], (self.n_agents, 1))  # (n, B)
            boot = trace.alive[t].astype(bool) & ~trace.terminal[t]
            if boot.any():
                assert t + 1 < T, "non-terminal lane at the last traced step"
                q_next = np.where(trace.masks[t + 1], tq[t + 1], -np.inf)
                max_next = q_next.max(axis=2)  # (n, B)
                y[:, boot] += self.config.gamma * max_next[:, boot]
            targets.append(y)
        return targets

    def dial_loss(self, trace: RolloutTrace) -> Value:
        """Mean over lanes of the summed squared TD errors (agents x steps)."""
        targets = self.td_targets(trace)
        terms = []
        for t in range(len(trace)):
            w = trace.alive[t] / trace.lanes
            for a in range(self.n_agents):
                picked = ad.pick(trace.q_env[t][a], trace.actions[t][a])
                terms.append(ad.sq_err_sum(picked, targets[t][a], w))
        return ad.add_scalars(terms)

    # -- training ---------------------------------------------------------------

    def group_sizes(self) -> list[int]:
        """Episode counts per lockstep group (last group may be smaller)."""
        total = self.config.episodes_per_epoch
        lanes = self.config.rollout_lanes
        sizes = [lanes] * (total // lanes)
        if total % lanes:
            sizes.append(total % lanes)
        return sizes

    def train_epoch(self) -> dict:
        config = self.config
        if self.epochs_done % config.target_update_epochs == 0:
            self.target_net.store.copy_from(self.net.store)
        losses = []
        for size in self.group_sizes():
            seeds = [derive_episode_seed(self.master_seed, "env", self.episodes_seen + i)
                     for i in range(size)]
            self.episodes_seen += size
            trace, _ = self.run_rollout(self.lane_envs[:size], seeds, "train")
            loss = self.dial_loss(trace)
            ad.backward(loss)
            self.net.store.clip_global_norm(config.grad_clip)
            self.net.store.rms_step(config.lr)
            losses.append(float(loss.data))
        self.epochs_done += 1
        return {"loss": sum(losses) / len(losses)}

    def evaluate(self, episodes: int, seed_index_base: int = 0,
                 collect_records: bool = False, seed_master: int | None = None
                 ) -> dict:
        """Greedy, exec-mode messages, no learning; one big lockstep batch."""
        master = self.master_seed if seed_master is None else seed_master
        envs = [self.env_factory() for _ in range(episodes)]
        if collect_records:
            for env in envs:
                if hasattr(env, "env"):
                    env.env.record_enabled = True
        seeds = [derive_episode_seed(master, "eval", seed_index_base + i)
                 for i in range(episodes)]
        with no_grad():
            trace, records = self.run_rollout(envs, seeds, "exec", 0.0,
                                              collect_records=collect_records)
        returns = trace.lane_returns()
        steps = 0
        msg_steps = 0
        for t in range(len(trace)):
            live = trace.alive[t] > 0
            steps += int(live.sum())
            any_msg = trace.exec_bits[t].sum(axis=(0, 2)) > 0
            msg_steps += int((any_msg & live).sum())
        return {
            "returns": returns,
            "mean": float(returns.mean()),
            "std": float(returns.std()),
            "message_rate": (msg_steps / steps) if steps else 0.0,
            "records": records,
        }

    def train(self, on_epoch=None) -> list[dict]:
        """Full training loop; returns one curve row per epoch."""
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
