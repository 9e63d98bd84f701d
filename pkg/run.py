"""
Experiment runner.

Same as ``python -m inode_lab``; kept at the repository root so the commands work
from a fresh checkout without installing the package.
"""

import sys

from inode_lab.core.config import apply_thread_cap

apply_thread_cap()

from inode_lab.cli import main  # noqa: E402


if __name__ == "__main__":
    sys.exit(main())
