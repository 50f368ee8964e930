"""The training losses on hand-made inputs, then anchor re-estimation from confident predictions."""
import numpy as np

from queryteam.geometry import Box
from queryteam.losses import box_losses_arrays, focal_loss_arrays, position_loss_arrays, total_loss
from queryteam.partition import QueryTeam
from queryteam.preference import PreferenceStore, extract_preferences

# focal loss of one query at p = 0.5 on its true class
loss, grad = focal_loss_arrays(np.array([[0.0]]), np.array([[1.0]]))
print("focal", loss, "d/dlogit", grad)

# box losses for two far apart boxes: L1 and 1 - GIoU
l1, giou_loss, _, _ = box_losses_arrays(np.array([[0.25, 0.25, 0.1, 0.1]]), np.array([[0.75, 0.75, 0.1, 0.1]]))
print("l1", l1, "giou loss", giou_loss)

# position constraint: only predictions farther than eta from their anchor count
centers = np.array([[0.8, 0.5], [0.5, 0.7]])
anchors = np.array([[0.5, 0.5], [0.5, 0.5]])
pos, pos_grad, violators = position_loss_arrays(centers, anchors, eta=0.25)
print("position", pos, "violators", violators, "grad", pos_grad.tolist())

print(total_loss((1, 1, 1, 1)))

# preference extraction: each query keeps its tau most confident boxes ...
team = QueryTeam([Box(0.5, 0.5, 0.1, 0.1), Box(0.2, 0.2, 0.3, 0.3)], [1, 1])
store = PreferenceStore(team.n, tau=2)
rng = np.random.default_rng(0)
for _ in range(5):
    boxes = np.c_[rng.uniform(0.3, 0.7, (2, 2)), rng.uniform(0.05, 0.3, (2, 2))]
    store.record_many(boxes, rng.uniform(0, 1, 2))
for q in range(team.n):
    print("query", q, [(np.round(b, 3).tolist(), round(c, 3)) for b, c in store.entries(q)])

# ... and its new anchor is their mean
print("new anchors", extract_preferences(store, team))
