"""How the teacher/student gap bounds the teacher's own error.

For any sample, the distance from the teacher's posterior to the one-hot
label is at most the teacher/student distance plus the student's distance
to the label (triangle inequality for the L2 norm).  So samples where the
two models disagree are the ones whose teacher error *can* be large, which
is the intuition behind selecting by disagreement.

The script trains one pair, scores a batch of unlabeled points, and prints
the bound terms for the most and least disagreeing ones together with the
correlation between disagreement and the bound.
"""

import numpy as np

from alkt.datasets import make_blobs
from alkt.distill import DistillConfig, train_cycle
from alkt.experiment import bound_diagnostic
from alkt.nets import ArchConfig, build_pair
from alkt.uncertainty import score

ds = make_blobs(4, 500, 2, 0.5, seed=1)
train = ds.train_pool()
rng = np.random.default_rng(0)
lab = rng.choice(len(train), size=160, replace=False)
rest = np.setdiff1d(np.arange(len(train)), lab)

teacher, student = build_pair(ArchConfig(), seed=1)
train_cycle(teacher, student, train.features[lab], train.oracle(lab), DistillConfig(), seed=1)

x = train.features[rest]
kl = score(teacher.forward(x), student.forward(x))
rep = bound_diagnostic(teacher, student, x, train.oracle(rest), rest)

order = np.argsort(-kl)
print(" index      KL   ||pT-pS||  ||pS-y||  ||pT-y||")
for j in list(order[:5]) + list(order[-5:]):
    r = rep.records[j]
    print(f"{r.index:6d} {kl[j]:7.4f} {r.d_teacher_student:10.4f} {r.student_to_label:9.4f} {r.teacher_to_label:9.4f}")
print(f"\nviolations: {rep.violations} of {len(rep.records)}")
print(f"Pearson(disagreement, bound) = {rep.pearson:.3f}")
