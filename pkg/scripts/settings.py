#!/usr/bin/env python3
"""
Environment configuration.

Loads a `.env` file from the project root (if present) and exposes the
single environment setting the tools read: MIXREG_OUTPUT_DIR, the default
directory for command outputs.
"""

import os

from dotenv import load_dotenv

OUTPUT_DIR_VAR = 'MIXREG_OUTPUT_DIR'

_env_loaded = False


def resolve_project_root():
    """Get the project root directory."""
    script_dir = os.path.dirname(os.path.abspath(__file__))
    return os.path.dirname(script_dir)


def load_environment():
    """Load .env once; variables already set in the process win."""
    global _env_loaded
    if _env_loaded:
        return
    env_file = os.path.join(resolve_project_root(), '.env')
    if os.path.exists(env_file):
        load_dotenv(env_file, override=False)
    _env_loaded = True


def default_output_dir():
    """Directory used when a command is not given --out."""
    load_environment()
    return os.getenv(OUTPUT_DIR_VAR) or 'output'
