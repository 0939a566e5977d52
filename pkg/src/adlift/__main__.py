import sys

from adlift.cli import main

sys.exit(main())
