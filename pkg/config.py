# config.py
import os

from dotenv import load_dotenv

load_dotenv()

# Relative output paths are resolved against this directory when it is set.
OUTPUT_DIR = os.getenv("NS_OUTPUT_DIR", "")
LOG_LEVEL = os.getenv("NS_LOG_LEVEL", "WARNING")

CONFIG_VERSION = 1

# Model / experiment defaults
DEFAULT_M = 2
DEFAULT_SIGMA2 = 1.0
DEFAULT_SCHEME = "linear:0,1"
DEFAULT_REPLICATIONS = 1000
DEFAULT_MASTER_SEED = 20130101
DEFAULT_N_GRID = (100, 1000, 10000)
DEFAULT_N_MAX = 100000
SE_TOLERANCE = 5.0
# absolute bound on the naive sweep bias, as a fraction of sigma2
ABS_BIAS_TOLERANCE = 0.01

# Newton optimizer defaults
GRAD_TOL = 1e-9
MAX_ITER = 200
STEP_SHRINK = 0.5
MIN_SIGMA2 = 1e-12
