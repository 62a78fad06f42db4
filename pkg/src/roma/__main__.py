import sys

from roma.cli.main import main

sys.exit(main())
