import sys

from fedsample.cli import main

sys.exit(main())
