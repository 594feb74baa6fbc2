import sys

from twostage_ranker.cli import main

sys.exit(main())
