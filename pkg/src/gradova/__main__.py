import sys

from gradova.cli import main

sys.exit(main())
