"""Grouping queries by scale, masking their self-attention, and matching inside each group."""
import warnings

import numpy as np

from queryteam.geometry import Box, relative_scale
from queryteam.mask import build_attention_mask
from queryteam.matching import GtObject, Prediction, cost_matrix, hungarian, masked_cost_matrix, team_match
from queryteam.partition import build_partition, init_team

# three scale ranges: (0, 0.2], (0.2, 0.4], (0.4, 1]
partition = build_partition([0.2, 0.4])
print([(r.s_min, r.s_max) for r in partition.ranges])

# 300 queries split 65 / 20 / 15 percent; anchors start at the range midpoint size
team = init_team(partition, [0.65, 0.20, 0.15], 300, seed=0)
print("group sizes", team.group_sizes)
print("first anchor of each group", [team.anchors[team.offsets[k]] for k in range(team.k)])

# queries only see teammates in self-attention
mask = build_attention_mask(team.group_sizes)
print("blocks", mask.blocks, "allowed pairs", int(mask.allowed().sum()))

# a scene with one object per scale range
objects = [
    GtObject(Box(0.25, 0.30, 0.10, 0.12), 0),
    GtObject(Box(0.60, 0.55, 0.30, 0.28), 1),
    GtObject(Box(0.50, 0.50, 0.70, 0.60), 2),
]
for o in objects:
    print(o, "scale %.3f" % relative_scale(o.box), "group", partition.group_of_scale(relative_scale(o.box)))

# fake predictions: every query predicts its own anchor with random class scores
rng = np.random.default_rng(1)
preds = [Prediction(a, rng.uniform(0, 1, 3), i) for i, a in enumerate(team.anchors)]

result = team_match(team, preds, objects, partition)
for q, o in result.pairs:
    print(f"object {o} -> query {q} (group {team.group_of[q]})")

# the same optimum as one global assignment with cross-group pairs forbidden
groups = [partition.group_of_scale(relative_scale(o.box)) for o in objects]
oracle = hungarian(masked_cost_matrix(cost_matrix(preds, objects), team.group_of, groups))
print("grouped cost %.6f, masked global cost %.6f" % (result.total_cost, oracle.total_cost))

# a group with more objects than queries leaves the surplus unmatched and warns
tiny = init_team(partition, [0.5, 0.25, 0.25], 4, seed=0)
crowd = [GtObject(Box(0.2 + 0.2 * i, 0.5, 0.3, 0.3), 0) for i in range(3)]
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    r = team_match(tiny, [Prediction(a, np.ones(1), i) for i, a in enumerate(tiny.anchors)], crowd, partition)
print("unmatched", r.unmatched_objects, "|", caught[0].message)
