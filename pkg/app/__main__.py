import sys

from app.cli import main


def run() -> int:
    """
    Main entry point when running the application directly as a module.
    Example: python -m app train --profile sleep
    """
    return main()


if __name__ == "__main__":
    sys.exit(run())
