"""Module entry point: ``python -m cdassim``."""
from cdassim.cli import main

if __name__ == "__main__":
    main()
