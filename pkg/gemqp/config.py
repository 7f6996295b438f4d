import os
import warnings
from dotenv import load_dotenv

# Load environment variables from .env file
# Get the directory where config.py is located
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
# Load .env file from the same directory as config.py
load_dotenv(os.path.join(BASE_DIR, ".env"))

# Dual solver tolerance - absolute bound on the KKT residual ||min(v, Mv + q)||_inf
TOL_KKT = float(os.getenv("GEMQP_TOL_KKT", "1e-10"))
if TOL_KKT > 1e-6:
    warnings.warn(f"GEMQP_TOL_KKT={TOL_KKT} is loose; projected gradients may fail the feasibility check")

MAX_ITERS = int(os.getenv("GEMQP_MAX_ITERS", "100000"))

# Feasibility slack for <g_tilde, g_k> >= -FEAS_TOL * ||g|| * ||g_k||
FEAS_TOL = float(os.getenv("GEMQP_FEAS_TOL", "1e-8"))

# Constraint margin gamma (b = -gamma * 1). 0 is the plain GEM problem
MARGIN = float(os.getenv("GEMQP_MARGIN", "0"))

# Solver configuration
# Options: "pg" (projected gradient), "bruteforce" (active-set enumeration), "nnls" (Lawson-Hanson)
SOLVERS = ("pg", "bruteforce", "nnls")
SOLVER = os.getenv("GEMQP_SOLVER", "pg").lower()
if SOLVER not in SOLVERS:
    warnings.warn(f"Unknown GEMQP_SOLVER '{SOLVER}', falling back to 'pg'")
    SOLVER = "pg"

# Active-set polishing inside the projected gradient loop
POLISH = os.getenv("GEMQP_POLISH", "true").lower() in ("1", "true", "yes", "on")

SEED = int(os.getenv("GEMQP_SEED", "0"))

# Logs go to stderr; stdout carries JSON / CSV only
LOG_LEVEL = os.getenv("GEMQP_LOG_LEVEL", "WARNING").upper()
