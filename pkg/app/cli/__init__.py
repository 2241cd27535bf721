"""Command-line tools for the rule layer."""
import sys
from typing import List, Optional

from dotenv import find_dotenv, load_dotenv

from app.cli.commands import configure_logging, run


def main(argv: Optional[List[str]] = None) -> int:
    """Console-script entry point; returns the process exit code."""
    # Load environment variables (LOG_LEVEL, RULE_LAYER_OUTPUT_ROOT) from ./.env
    load_dotenv(find_dotenv(usecwd=True))
    configure_logging()
    code = run(argv)
    if argv is None:
        sys.exit(code)
    return code
