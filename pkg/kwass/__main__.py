import sys

from kwass.cli import main

sys.exit(main())
