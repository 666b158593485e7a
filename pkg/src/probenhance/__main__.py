import sys

from probenhance.cli import main

sys.exit(main())
