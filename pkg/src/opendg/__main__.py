import sys

from opendg.cli import main

sys.exit(main())
