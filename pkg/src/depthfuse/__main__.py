import sys

from depthfuse.cli import main

sys.exit(main())
