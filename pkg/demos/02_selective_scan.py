"""The masked selective scan along an A-line.

Run: python3 demos/02_selective_scan.py
"""

# %%
import numpy as np

from sparseodt.cli import bench_rows
from sparseodt.scan import a_rss_scan, discretize

rng = np.random.default_rng(0)
L, ci, n = 48, 2, 4
x = np.zeros((L, ci))
x[5] = 1.0  # an impulse at depth 5
delta = np.full((L, ci), 0.3)
A = -np.arange(1.0, n + 1)[None, :].repeat(ci, axis=0)
B = np.ones((L, n))
C = np.ones((L, n))
D = np.zeros(ci)

# %%
# the impulse response decays with the discretised state transition exp(delta*A)
abar, bbar = discretize(delta, A, B)
print("exp(delta*A) per state:", np.round(abar[0, 0], 4))
y = a_rss_scan(x, delta, A, B, C, D)
print("impulse response:", np.round(y[4:12, 0], 4))

# %%
# the ROI mask gates what enters the state: R = 0 at the impulse blocks it entirely
R = np.ones((L, ci))
R[5] = 0.0
print("masked impulse response max:", np.abs(a_rss_scan(x, delta, A, B, C, D, R)).max())

# half-strength mask halves the response, the scan is linear in R * x
R[5] = 0.5
np.testing.assert_allclose(a_rss_scan(x, delta, A, B, C, D, R), 0.5 * y, atol=1e-15)

# %%
# sequential loop vs parallel prefix scan: same numbers, different cost
print("length  sequential_ms  parallel_ms  max_abs_dev")
for length, t_seq, t_par, dev in bench_rows([64, 256, 1024], repeats=2):
    print(f"{length:6d}  {t_seq / 1e6:13.2f}  {t_par / 1e6:11.2f}  {dev:.1e}")
