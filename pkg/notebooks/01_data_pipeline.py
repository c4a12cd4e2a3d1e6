"""
From raw attempts to per-student examples
=========================================

A synthetic interaction log goes through filtering, feature engineering
and scaling, then gets split into one client per student.
"""

# %%
import numpy as np

from fedrec.data import SynthConfig, partition_by_user, prepare, synthesize_log

log = synthesize_log(SynthConfig(num_users=50, num_skills=20, ability_mean=1.5, seed=0))
print(len(log), "attempts from", log.num_users, "students on", log.num_skills, "skills")
print("first rows:", log.records[:3])

# %%
# Students need 50 attempts and skills 100; both filters repeat until stable.
prepared = prepare(log, min_user_interactions=50, min_skill_interactions=100)
ex = prepared.examples
print(prepared.num_users, "students,", prepared.num_skills, "skills,", len(ex), "student-skill pairs")
print("share of pairs with rate >= 0.7:", round(float(ex.label.mean()), 3))

# %%
# The three continuous inputs are min-max scaled; the scaler keeps the raw range.
for name, lo, hi in zip(prepared.scaler.features, prepared.scaler.mins, prepared.scaler.maxs):
    print(f"{name:>24}: raw range [{lo:.3f}, {hi:.3f}]")
print(ex[0])

# %%
clients = partition_by_user(ex, test_fraction=0.2, seed=0)
sizes = np.array([len(c.train) + len(c.test) for c in clients])
print(len(clients), "clients; examples per client min/median/max:", sizes.min(), int(np.median(sizes)), sizes.max())
print("client 0 holds", len(clients[0].train), "training and", len(clients[0].test), "test rows")
