"""Package-wide numeric limits and defaults."""

import math

# Tensors are stored fully dense; guard against runaway allocations.
MAX_TENSOR_ORDER = 4
ELEMENT_BUDGET = 10**8

# Points where the (normalized) density drops below this are treated as
# degenerate: score values there would overflow into +-Inf.
DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)

# Deterministic reduction: samples are accumulated in fixed chunks combined
# through a binary tree, so results do not depend on how work is split.
REDUCTION_CHUNK = 4096

# Central finite differences, step scaled per coordinate by (1 + |x_i|).
DEFAULT_FD_STEP = 1e-4

# Condition-number cap for invertible affine transforms.
MAX_AFFINE_CONDITION = 1e12

# Gauss-Hermite quadrature: nodes per dimension and the dimension cap for
# tensor-product grids.
QUAD_NODES = 40
QUAD_MAX_DIM = 3

# Kernel backend selection ("auto" | "numba" | "numpy").
BACKEND_ENV_VAR = "SCOREMOMENTS_BACKEND"
