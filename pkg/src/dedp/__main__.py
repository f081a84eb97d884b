"""``python3 -m dedp`` entry point."""

import sys

from .cli import main

sys.exit(main())
