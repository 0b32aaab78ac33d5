import sys

from faithbench.cli import main

sys.exit(main())
