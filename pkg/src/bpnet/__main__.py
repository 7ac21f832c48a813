import sys

from bpnet.cli import main

sys.exit(main())
