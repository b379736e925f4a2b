import os
from dotenv import load_dotenv

# Load environment variables from a .env file if present
load_dotenv()

# Catalog of simulated runs
DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./meanfield_runs.db")
SQL_ECHO = os.getenv("SQL_ECHO", "false").lower() in ["true", "1", "t"]

LOGGING_ENABLED = os.getenv("LOGGING_ENABLED", "true").lower() in ["true", "1", "t"]
LOG_FILE_PATH = os.getenv("LOG_FILE_PATH", "./logs/meanfield.log")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

# Where artifact bundles go when the experiment config does not say
OUTPUT_DIR = os.getenv("OUTPUT_DIR", "./bundles")

# Independent N-runs are spread over this many processes
MAX_WORKERS = int(os.getenv("MAX_WORKERS", "1"))

# Exact O(N^2) forces per step stay desk-scale below this
DESK_MAX_N = int(os.getenv("DESK_MAX_N", "4096"))

CODE_VERSION = os.getenv("CODE_VERSION", "meanfield-0.1.0")
