"""Shared test machinery: replaying a recorded trace as a fresh loss graph.

Finite-difference checks need a smooth deterministic scalar in the
parameters.  A live rollout is neither (action argmaxes flip, RNGs advance),
so the checks fix a recorded trace — observations, actions, masks, DRU
noise, routing — and rebuild only the differentiable graph on top of it,
with the TD targets frozen to constants.  At the unperturbed parameters the
rebuilt graph reproduces the recorded forward pass exactly.
"""

import numpy as np

from cyberdial import autodiff as ad
from cyberdial.dial import dru


def replay_dial_loss(trainer, trace, targets):
    """Rebuild the DIAL loss graph for a recorded trace with fixed targets."""
    net = trainer.net
    n = trainer.n_agents
    M = trainer.message_bits
    B = trace.lanes
    hidden = [net.initial_hidden(B) for _ in range(n)]
    agent_ids = [np.full(B, a, dtype=np.int64) for a in range(n)]
    m_prev = [ad.constant(np.zeros((B, M))) for _ in range(n)]
    terms = []
    for t in range(len(trace)):
        route = trace.route[t]
        msgs = []
        for a in range(n):
            m_in = ad.weighted_sum(m_prev, [route[:, a, j] for j in range(n)])
            z = net.embed_input(trace.obs_idx[t][:, a, :], m_in,
                                trace.u_prev[t][:, a], agent_ids[a])
            q_env, q_msg, hidden[a] = net.forward(z, hidden[a])
            msgs.append(dru(q_msg, "train", trainer.config.dru_sigma,
                            noise=trace.noise[t][a]))
            picked = ad.pick(q_env, trace.actions[t][a])
            terms.append(ad.sq_err_sum(picked, targets[t][a],
                                       trace.alive[t] / B))
        m_prev = msgs
    return ad.add_scalars(terms)


def collect_graph_leaves(value, leaves=None):
    """All parentless nodes reachable from a value (parameter identity checks)."""
    if leaves is None:
        leaves = []
    seen = set()
    stack = [value]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if not node._parents:
            leaves.append(node)
        stack.extend(node._parents)
    return leaves
