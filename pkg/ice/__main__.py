import sys

from ice.app.main import main

sys.exit(main())
