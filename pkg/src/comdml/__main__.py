import sys

from comdml.cli import main

sys.exit(main())
