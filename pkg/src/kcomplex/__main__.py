import sys

from kcomplex.cli import main

sys.exit(main())
