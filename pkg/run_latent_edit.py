#!/usr/bin/env python3
"""
Local runner for latent editing.

Usage:
    python run_latent_edit.py edit --config config.example.toml
    python run_latent_edit.py edit-invfree --config config.example.toml --export-maps
    python run_latent_edit.py sweep --block-sizes 1,2,4,8,16,32 --output runs/blocks.csv --plot
    python run_latent_edit.py metrics out/source.lted out/edited.lted
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from latent_edit.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
