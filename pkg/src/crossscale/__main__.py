import sys

from crossscale.cli import main

sys.exit(main())
