"""
The multi-slot query state bank
===============================

A single recurrent state blurs together every turn of a session. The slot
bank instead keeps M separate states: each incoming query updates exactly
one slot, so different aspects of the target (color, shape, position)
accumulate in different places. Which slot a query lands in is decided by
a simple rule while slots are still empty, and by a learned scorer after.
"""

import numpy as np

from slotsearch.model import TrainConfig, init_model
from slotsearch.statebank import (
    fixed_policy_slot,
    init_states,
    run_episode,
    select_slot,
    selection_distribution,
    update_slot,
)
from slotsearch.text import Vocab

# A bank starts with every slot empty; the mask is authoritative.
states = init_states(m_slots=3, dim=8)
print("initial occupancy:", states.occupied())

# The pretraining schedule is circular: turn t updates slot (t-1) mod M.
print("fixed schedule over 7 turns:", [fixed_policy_slot(t, 3) for t in range(1, 8)])

# Build a model just to get an initialized fusion cell and policy.
vocab = Vocab(["red", "circle", "left", "small", "blue"])
model = init_model(TrainConfig(model="drilldown", slots=3, state_dim=8, embed_dim=4),
                   vocab, feature_dim=6, rng=np.random.default_rng(1))

# Updating a slot folds the query into it with a GRU step and returns a
# fresh snapshot — histories stay immutable, which keeps rollouts and
# replays trivially safe.
rng = np.random.default_rng(0)
q1, q2, q3, q4 = (rng.normal(size=8) for _ in range(4))
after = update_slot(states, 0, q1, model.fuse)
print("occupied after one update:", after.occupied(), "| turn:", after.turn)
print("original snapshot untouched:", states.occupied())

# While empty slots remain, the selection rule spreads queries uniformly
# across them; the learned scorer only takes over once the bank is full.
partial = update_slot(after, 1, q2, model.fuse)
print("distribution with one empty slot:", selection_distribution(partial, q3, model.policy))

full = update_slot(partial, 2, q3, model.fuse)
k, dist = select_slot(full, q4, model.policy, mode="greedy")
print("full-bank distribution:", np.round(dist, 3), "-> greedy pick:", k)

# run_episode drives a whole session at once and returns the trajectory
# of snapshots plus the slot chosen at each turn.
queries = [rng.normal(size=8) for _ in range(5)]
trajectory, actions = run_episode(queries, m_slots=3, policy=model.policy,
                                  fusion=model.fuse, mode="greedy")
print("slots chosen per turn:", actions)
print("final occupancy:", trajectory[-1].occupied(), "| turns taken:", trajectory[-1].turn)
