"""
Runtime settings and numerical defaults for the likelihood matching toolkit.
"""
import os

# Debug settings
DEBUG_MODE = os.getenv("LMATCH_DEBUG_MODE", "false").lower() == "true"
LOG_LEVEL = os.getenv("LMATCH_LOG_LEVEL", "INFO").upper()

# Strict-deterministic mode: index-ordered reductions, no wall-clock fields in summaries
STRICT_MODE = os.getenv("LMATCH_STRICT", "false").lower() == "true"

# Output settings
OUTPUT_DIR = os.getenv("LMATCH_OUTPUT_DIR", "runs")
WORKERS = int(os.environ.get("LMATCH_WORKERS", 1))

# Artifact format tags
CHECKPOINT_FORMAT_VERSION = 1
SUMMARY_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1

# Noise schedule
DEFAULT_SCHEDULE_KIND = "linear"
DEFAULT_T = 1000
LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 2e-2
CONSTANT_SCHEDULE_C = 1.0
BETA_MAX = 0.999

# Time grids: rejection attempts before falling back to sampling without replacement
GRID_MAX_RESAMPLES = 64

# Quasi-likelihood
EPS_POS = 1e-6
BARRIER_WEIGHT = 1e3
FD_REL_STEP = 1e-5

# Sampler
CLAMP_EPS = 1e-3
SAMPLER_CHUNK = 4096

# Training
ADAM_LR = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MAX_NAN_STEPS = 10

# MMD: five Gaussian kernels
DEFAULT_BANDWIDTHS = [0.25, 0.5, 1.0, 2.0, 4.0]

# MLP defaults
DEFAULT_WIDTH = 128
DEFAULT_RANK = 1
