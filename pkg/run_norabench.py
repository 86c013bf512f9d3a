#!/usr/bin/env python3
"""
Run the norabench command-line tool from a source checkout.
Accepts the same arguments as the installed `norabench` command.
"""

import sys

from norabench.cli import main


if __name__ == "__main__":
    sys.exit(main())
