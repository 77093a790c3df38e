"""Allow ``python -m qkgrow``."""

import sys

from .cli import main

sys.exit(main())
