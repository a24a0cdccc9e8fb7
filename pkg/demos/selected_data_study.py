"""What does each strategy actually pick?

Train once on a random 35% of the pool, let each strategy add another 5%,
then report (a) how well the current model already classifies the picked
samples and (b) the test accuracy of a model retrained on initial + picked.
A strategy whose picks the current model gets *right* more often while
still improving the retrained model is choosing samples that are uncertain
in a way the task loss alone does not reveal.
"""

import numpy as np

from alkt.datasets import make_blobs
from alkt.experiment import ExperimentConfig, selected_data_study

strategies = ["proposed", "random", "entropy"]
sel, ret = {s: [] for s in strategies}, {s: [] for s in strategies}
for seed in range(3):
    ds = make_blobs(4, 500, 2, 0.5, seed=seed)
    rep = selected_data_study(ds, 0.35, 80, strategies, ExperimentConfig(), seed=seed)
    for s in strategies:
        sel[s].append(rep.entries[s].selected_accuracy)
        ret[s].append(rep.entries[s].retrained_test_accuracy)

print("strategy   acc-on-selected  retrained-test-acc")
for s in strategies:
    print(f"{s:<10} {np.mean(sel[s]):15.3f} {np.mean(ret[s]):19.4f}")
