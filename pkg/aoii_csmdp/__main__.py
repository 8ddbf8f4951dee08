"""Entry point for `python -m aoii_csmdp`."""

import sys

from .cli import main

sys.exit(main())
