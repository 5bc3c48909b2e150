import sys

from .netcli.cli import main

sys.exit(main())
