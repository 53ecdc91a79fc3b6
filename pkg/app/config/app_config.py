"""
Configuration settings for the lag-effects toolkit.
Contains all numeric defaults shared by the estimators, simulator and CLI.
"""

# Panel data
REQUIRED_COLUMNS = ("panel_id", "job_index", "a", "y")
CSV_FLOAT_FORMAT = "%.17g"  # round-trips every finite double
DEFAULT_MIN_PANEL_SIZE = 3

# Logistic regression (IRLS)
IRLS_TOLERANCE = 1e-8
IRLS_MAX_ITERATIONS = 50
SEPARATION_BOUND = 30.0
RANK_TOLERANCE = 1e-10

# Lag-effect estimator
DEFAULT_CLIP_EPSILON = 1e-3
FD_RELATIVE_STEP = 1e-6
BREAD_CONDITION_LIMIT = 1e12
NORMAL_QUANTILE_975 = 1.959964
DEFAULT_CONFIDENCE_LEVEL = 0.95

# Efficient score
VARIANCE_FLOOR_FRACTION = 1e-6

# Simulator
DEFAULT_K_MAX = 50
DEFAULT_POSITIVITY_FLOOR = 0.01

# Reports
REPORT_COLUMNS = ("variable", "estimate", "ci_low", "ci_high", "p_value")
