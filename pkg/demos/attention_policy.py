"""
Attention over landmarks
========================

The actor embeds the agent and each landmark row (information pair, mean
pair), attends from the agent to the landmarks and decodes a control. The
pooling does not care about landmark order, which an MLP on the flattened
observation does.
"""

import numpy as np

from activeloc.env import reset, scenario_config
from activeloc.nets import ActorCritic, ArchSpec, attention_weights

world = scenario_config("landmarks5")
_, obs = reset(world, seed=3)
rng = np.random.default_rng(0)

att = ActorCritic.create(ArchSpec.for_world("att", world), rng)
mlp = ActorCritic.create(ArchSpec.for_world("mlp", world), rng)
print("parameters: att", att.param_count(), " mlp", mlp.param_count())

perm = rng.permutation(5)
shuffled = obs.copy()
shuffled[2:12] = obs[2:12].reshape(5, 2)[perm].ravel()
shuffled[12:22] = obs[12:22].reshape(5, 2)[perm].ravel()

print("att mean, original order:", att.action_mean(obs[None])[0])
print("att mean, shuffled order:", att.action_mean(shuffled[None])[0])
print("mlp mean, original order:", mlp.action_mean(obs[None])[0])
print("mlp mean, shuffled order:", mlp.action_mean(shuffled[None])[0])
print("attention weights:", attention_weights(att.spec, att.actor, obs[None]).round(3))
