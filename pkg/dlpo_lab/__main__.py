import sys

from dlpo_lab.commands.cli import main

sys.exit(main())
