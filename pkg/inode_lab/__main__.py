import sys

from inode_lab.core.config import apply_thread_cap

# thread caps must be exported before numpy is imported
apply_thread_cap()

from inode_lab.cli import main  # noqa: E402


if __name__ == "__main__":
    sys.exit(main())
