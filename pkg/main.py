#!/usr/bin/env python3
"""
VA-MoE - Incremental weather forecasting at desk scale
Main application entry point
"""

import os
import sys

# Repo root on the path so `src` and `config` resolve from any working directory
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.harness.cli import main


if __name__ == "__main__":
    sys.exit(main())
