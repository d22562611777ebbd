import sys

from slack_audit.cli import main

sys.exit(main())
