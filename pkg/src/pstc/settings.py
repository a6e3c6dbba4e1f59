import importlib.util
import os
import sys
from pathlib import Path

# 1. Determine output root
OUTPUT_DIR = Path(os.environ.get("PSTC_OUTPUT_DIR", Path.cwd() / "pstc_out")).resolve()

# 2. Optional user config
LOCAL_CONFIG_PATH = Path.home() / ".config" / "pstc" / "config.py"

# Placeholders for default values (if config.py is missing)
LOG_LEVEL = "WARNING"
VALIDATE_WORKERS = 4
DEFAULT_CONFIG = Path(__file__).parent / "configs" / "batch_reactor.json"

# 3. Dynamically load the user's config.py
if LOCAL_CONFIG_PATH.exists():
    try:
        spec = importlib.util.spec_from_file_location("pstc_user_config", LOCAL_CONFIG_PATH)
        user_config = importlib.util.module_from_spec(spec)
        sys.modules["pstc_user_config"] = user_config
        spec.loader.exec_module(user_config)

        if hasattr(user_config, "OUTPUT_DIR") and "PSTC_OUTPUT_DIR" not in os.environ:
            OUTPUT_DIR = Path(user_config.OUTPUT_DIR).expanduser().resolve()
        if hasattr(user_config, "LOG_LEVEL"):
            LOG_LEVEL = str(user_config.LOG_LEVEL).upper()
        if hasattr(user_config, "VALIDATE_WORKERS"):
            VALIDATE_WORKERS = max(1, int(user_config.VALIDATE_WORKERS))
        if hasattr(user_config, "DEFAULT_CONFIG"):
            DEFAULT_CONFIG = Path(user_config.DEFAULT_CONFIG).expanduser()
    except (PermissionError, OSError, SyntaxError, ValueError) as e:
        print(f"\n\033[91mError loading configuration file: {LOCAL_CONFIG_PATH}\033[0m")
        print(f"\033[93mCause: {e}\033[0m")
        # Proceed with defaults

TABLES_DIR = OUTPUT_DIR / "tables"
RUNS_DIR = OUTPUT_DIR / "runs"
