import os
from dotenv import load_dotenv

load_dotenv()

# Use /data on Railway (persistent volume), local data/ dir otherwise
_default_db_dir = "/data" if os.getenv("RAILWAY_ENVIRONMENT") else os.path.join(os.path.dirname(__file__), "data")
DATABASE_URL = os.getenv(
    "DATABASE_URL",
    "sqlite:///" + os.path.join(_default_db_dir, "runs.db"),
)

RECORD_RUNS = os.getenv("DRYGAME_RECORD_RUNS", "1") == "1"

WORKERS = int(os.getenv("DRYGAME_WORKERS", "1"))

ORACLE_MAX_NODES = int(os.getenv("DRYGAME_ORACLE_MAX_NODES", "1000000"))

LOG_LEVEL = os.getenv("DRYGAME_LOG_LEVEL", "INFO")

SEED = int(os.getenv("DRYGAME_SEED", "0"))
