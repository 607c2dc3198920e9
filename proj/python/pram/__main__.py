import sys

from ._pram import run_cli

sys.exit(run_cli(sys.argv[1:]))
