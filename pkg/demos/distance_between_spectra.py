"""How far apart are two vector processes?

We build two bivariate ARMA spectra and compare them three ways: the
weighted transport distance, its unweighted (Hellinger) special case, and
the squared gap between a spectral factor of the first process and the
factor of the second that tracks it most closely.  The last two quantities
coincide, which is the coupling interpretation of the distance.
"""

import numpy as np

from otspec.spectral_core import FrequencyGrid, MatrixGrid, StateSpaceFilter, eval_transfer, psd_from_factor
from otspec.transport_metric import (
    hellinger_distance,
    optimal_coupling_factor,
    transport_distance,
    weighted_factor_gap,
)

grid = FrequencyGrid(512)

# two shaping filters with nearby poles
fx = StateSpaceFilter(np.diag([0.6, -0.3]), np.eye(2), np.array([[0.5, 0.2], [0.0, 0.4]]), np.eye(2))
fy = StateSpaceFilter(np.diag([0.7, -0.2]), np.eye(2), np.array([[0.5, 0.0], [0.1, 0.4]]), np.eye(2))
wx = eval_transfer(fx, grid)
phi_x, phi_y = psd_from_factor(wx), psd_from_factor(eval_transfer(fy, grid))

print("Hellinger distance      ", f"{hellinger_distance(phi_x, phi_y).d:.6f}")

# a weight that emphasizes low frequencies in the first channel
w = np.zeros((grid.n_points, 2, 2))
w[:, 0, 0] = 1.0 + 0.8 * np.cos(grid.thetas)
w[:, 1, 1] = 1.0
omega = MatrixGrid(grid, w, "weight")
report = transport_distance(phi_x, phi_y, omega)
print("weighted distance       ", f"{report.d:.6f}")

# the same number from the best-matching factor of phi_y
wy = optimal_coupling_factor(phi_x, phi_y, omega, wx)
print("squared distance        ", f"{report.d_squared:.10f}")
print("squared factor gap      ", f"{weighted_factor_gap(wx, wy, omega):.10f}")
print("symmetric?              ", np.isclose(report.d, transport_distance(phi_y, phi_x, omega).d))
