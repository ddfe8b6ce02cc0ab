import sys

from sbse.cli import main

sys.exit(main())
