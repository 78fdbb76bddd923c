import sys

from pshrnet.cli import main

sys.exit(main())
