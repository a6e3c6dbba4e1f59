import os
import shutil
import sys
from pathlib import Path

from . import settings


def scaffold(base_path: Path) -> Path:
    """Create tables/ and runs/ under base_path and drop in the example config."""
    for sub in ("tables", "runs"):
        folder = base_path / sub
        if not folder.exists():
            print(f"Creating {sub}/...")
            folder.mkdir(parents=True)

    source_config = Path(__file__).parent / "configs" / "batch_reactor.json"
    target_config = base_path / source_config.name
    if target_config.exists():
        print(f"{target_config.name} already exists. Skipping.")
    else:
        print(f"Copying example config {target_config.name}...")
        shutil.copy(source_config, target_config)
    return target_config


def install_user_config(path: Path = settings.LOCAL_CONFIG_PATH) -> bool:
    template = Path(__file__).parent / "config.py.example"
    if path.exists():
        print(f"{path} already exists. Skipping.")
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    print(f"Creating {path} from template...")
    shutil.copy(template, path)
    return True


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    # Scaffolds the output tree.
    if os.environ.get("PSTC_OUTPUT_DIR"):
        print(f"Initializing output tree in PSTC_OUTPUT_DIR: {settings.OUTPUT_DIR}")
    else:
        print(f"Initializing output tree in: {settings.OUTPUT_DIR}")

    if not settings.OUTPUT_DIR.parent.exists():
        print(f"Error: Directory {settings.OUTPUT_DIR.parent} does not exist.")
        return 1

    config = scaffold(settings.OUTPUT_DIR)
    if "--user-config" in argv:
        install_user_config()
    print(f"Next: pstc precompute --config {config}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
