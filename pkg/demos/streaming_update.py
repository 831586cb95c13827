"""Feed samples one at a time and watch the map sharpen.

The sequential filter reaches the same posterior as a batch fit over the
same samples; this script prints the uncertainty at one point as data
arrives and checks the final agreement.
"""

import numpy as np

from magmap import Domain, build_index_set, fit, predict
from magmap.sequential import SequentialFilter, init, predict_at
from magmap.simulator import REFERENCE_THETA, sample_field, simulate_trajectory

domain = Domain((0.5, 0.5, 0.5))
truth = sample_field(domain, REFERENCE_THETA, 1024, seed=5)
path = [[-0.4, -0.4, 0.0], [0.4, -0.4, 0.0], [0.4, 0.0, 0.0], [-0.4, 0.0, 0.0], [-0.4, 0.4, 0.0], [0.4, 0.4, 0.0]]
data = simulate_trajectory(truth, path, rate=20.0, sigma_noise=0.2, speed=0.2, seed=5)
index_set = build_index_set(1024, domain)
probe = np.array([[0.0, 0.0, 0.0]])

filt = SequentialFilter(init(index_set, REFERENCE_THETA))


def report(i, f):
    if i % 100 == 0:
        var = np.trace(predict_at(f.snapshot(), probe).covariance[0]) / 3
        print(f"after {i + 1:4d} samples: probe sd {np.sqrt(var):.3f} uT")


filt.run(data, callback=report)
seq = predict_at(filt.snapshot(), probe).mean
batch = predict(fit(data, domain, index_set, REFERENCE_THETA), probe).mean
print("sequential", np.round(seq[0], 4), "batch", np.round(batch[0], 4), "truth", np.round(truth(probe)[0], 4))
