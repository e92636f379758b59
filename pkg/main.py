import sys

from stackelberg_assembly.cli import main

if __name__ == "__main__":
    sys.exit(main())
