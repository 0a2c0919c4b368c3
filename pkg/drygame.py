#!/usr/bin/env python3
"""CLI entry point: solve, simulate and verify drying game instances."""

import sys
import os

sys.path.insert(0, os.path.dirname(__file__))

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
