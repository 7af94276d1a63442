#!/usr/bin/env python3
"""
Console logging helpers.

Timestamped, icon-prefixed lines on stdout; errors go to stderr.
Info output can be silenced with set_quiet(True), warnings and errors cannot.
"""

import sys
from datetime import datetime

_quiet = False


def set_quiet(quiet):
    """Enable or disable info-level output."""
    global _quiet
    _quiet = bool(quiet)


def log(message, level='info'):
    """Print log message with timestamp."""
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")

    if level == 'error':
        print(f"[{timestamp}] ❌ ERROR: {message}", file=sys.stderr)
    elif level == 'warning':
        print(f"[{timestamp}] ⚠️  WARNING: {message}")
    elif not _quiet:
        print(f"[{timestamp}] ℹ️  {message}")


def banner(title):
    """Print a framed section header."""
    log("=" * 60)
    log(title)
    log("=" * 60)


def format_time(seconds):
    """Format a duration in seconds to human-readable time."""
    total_seconds = int(seconds)
    hours = total_seconds // 3600
    minutes = (total_seconds % 3600) // 60
    secs = total_seconds % 60

    if hours > 0:
        return f"{hours}h {minutes}m {secs}s"
    elif minutes > 0:
        return f"{minutes}m {secs}s"
    else:
        return f"{secs}s"
