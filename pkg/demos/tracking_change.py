"""Track a local field change with the spatio-temporal filter.

A 2 uT disturbance switches on near a probe point while the sensor is
elsewhere. The estimate at the probe only moves once the trajectory passes
close by. Takes about 20 seconds.
"""

import numpy as np

from magmap.simulator import TrackingConfig, tracking_scenario

res = tracking_scenario(TrackingConfig())
resp = np.linalg.norm(res.response - res.response[res.onset_index - 1], axis=1)
print(f"change switches on at t={res.t_on:.1f} s")
for i in np.linspace(0, len(res.t) - 1, 12).astype(int):
    print(f"t={res.t[i]:6.1f} s  distance to probe {res.distance[i]:5.2f} m  response {resp[i]:5.2f} uT")
print(f"before the pass {res.change_before_pass():.3f} uT, after {res.change_after_pass():.3f} uT")
