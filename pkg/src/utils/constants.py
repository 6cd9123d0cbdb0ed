"""
Model constants and numerical limits.
"""

# Routing geometry
RING_GAMMA = 0.75  # Outer relay-ring factor; must stay below 1 for step monotonicity
UNION_RING_INNER = 1.0 / 8.0  # Candidate-relay band around a transmitter, in units of Z_i
UNION_RING_OUTER = 11.0 / 8.0
STEP0_BAND_INNER = 0.5  # Relayed step-0 pairs sit at home-distance in [Z0/2, 3Z0/4)
STEP0_BAND_OUTER = 0.75

# Traffic
DEFAULT_C_FAR = 0.25  # Minimum source-destination home distance, in units of sqrt(n)
TRAFFIC_RETRY_BUDGET = 50  # Full permutation redraws before giving up
TRAFFIC_SWAP_ROUNDS = 20  # Local repair passes per redraw

# Scheduling
DEFAULT_GUARD = 0.0  # Protocol-model guard factor
DEFAULT_MAX_RANGE_RATIO = 4.0  # sqrt(A_i) may not exceed this many Z_i

# Mobility quadrature
QUAD_REL_TOL = 1e-6
QUAD_LIMIT = 200  # Subintervals for scipy.integrate.quad
MIN_SHAPE_RESOLUTION = 1024
GAUSS_LEGENDRE_NODES = 16  # Nodes per CDF table interval

# Simulation
DEFAULT_WARMUP_FRACTION = 0.1
RING_OCCUPANCY_CHUNK = 512  # Destinations per vectorized distance block

# Stability check
STABILITY_P_VALUE = 0.01
STABILITY_MIN_GROWTH = 1.0  # Fitted backlog growth over the window, in messages per node

# Oracle
WILSON_CONFIDENCE = 0.95
MIN_MEETING_TRIALS = 10_000
MIN_POPULATED_INSTANCES = 100
MIN_POPULATED_SLOTS = 100
MIN_SLOPE_POINTS = 3
ORACLE_BATCH = 100_000  # Samples drawn per vectorized batch

# Sweep output
AGGREGATE_CONFIDENCE = 0.95
