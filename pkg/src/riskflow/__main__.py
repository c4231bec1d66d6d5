import sys

from riskflow.cli import main

sys.exit(main())
