import sys

from tensor_denoise.cli import main

sys.exit(main())
