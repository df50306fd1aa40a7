"""
Entry point for running the CLI from a source checkout:

    python main.py run --config free_flow
"""

import sys

from kwass.cli import main

if __name__ == "__main__":
    sys.exit(main())
