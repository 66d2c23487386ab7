# Prior and batch-shaping constants

PRIOR_KINDS = ("beta", "gaussian", "uniform")

# Beta inputs are clamped so endpoint densities stay finite
BETA_CLAMP: float = 1e-6

# Incomplete beta continued fraction
BETACF_MAX_ITERATIONS: int = 200
BETACF_EPS: float = 1e-12
BETACF_FPMIN: float = 1e-300

PPF_ITERATIONS: int = 60
