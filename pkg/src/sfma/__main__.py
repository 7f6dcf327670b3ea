import sys

from sfma.cli_io import main

sys.exit(main())
