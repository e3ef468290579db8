#!/usr/bin/env python3
"""
cisslab - Class-Incremental Semantic Segmentation Lab

Main entry point; delegates to the package command line.
"""

import sys
from pathlib import Path

# Add src directory to Python path
src_dir = Path(__file__).parent / "src"
sys.path.insert(0, str(src_dir))


def main():
    """Main entry point that delegates to cisslab.main."""
    from cisslab.main import main as cli_main

    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
