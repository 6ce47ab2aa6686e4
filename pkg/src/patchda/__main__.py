import sys

from patchda.harness.cli import main

sys.exit(main())
