#!/usr/bin/env python
"""
Command-line script for validating rules files.

A rules file declares a label alphabet and the transitions that cannot occur.
This script parses a single file or every .rules file in a directory and reports
the alphabet and the number of impossible pairs of each.

Usage:
    python -m app.cli.validate_rules [path]

If [path] is a directory, validates all .rules files in that directory.
If [path] is a file, validates just that file.
If [path] is not provided, defaults to the builtin "app/rules" directory.
"""

import argparse
import os
import sys
from typing import Dict, List, Optional

from app.core.errors import RuleParseError
from app.core.label_rules import RuleSet, parse_rules

DEFAULT_RULES_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "rules")


def validate_single_file(file_path: str) -> Optional[RuleSet]:
    """
    Validate a single rules file.

    Args:
        file_path: Path to the rules file

    Returns:
        Optional[RuleSet]: The parsed rule set, or None if the file is invalid
    """
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            rules = parse_rules(f.read())
    except FileNotFoundError:
        print(f"❌ {file_path} not found")
        return None
    except UnicodeDecodeError as e:
        print(f"❌ {file_path} is not UTF-8 text: {e.reason}")
        return None
    except RuleParseError as e:
        print(f"❌ {file_path} is invalid: {e}")
        return None
    print(f"✅ {file_path} is valid")
    print(f"  - Labels: {', '.join(rules.alphabet.names)}")
    print(f"  - Impossible transitions: {len(rules.impossible)}")
    return rules


def validate_directory(dir_path: str) -> Dict[str, List[str]]:
    """
    Validate all rules files in a directory.

    Returns:
        Dict containing lists of valid and invalid file names
    """
    results: Dict[str, List[str]] = {"valid": [], "invalid": []}
    if not os.path.isdir(dir_path):
        print(f"❌ Directory {dir_path} not found")
        return results

    print(f"Validating rules files in {dir_path}...")
    for name in sorted(os.listdir(dir_path)):
        if not name.endswith(".rules"):
            continue
        ok = validate_single_file(os.path.join(dir_path, name)) is not None
        results["valid" if ok else "invalid"].append(name)

    print("\nResults:")
    print(f"✅ Valid rules files: {len(results['valid'])}")
    print(f"❌ Invalid rules files: {len(results['invalid'])}")
    for name in results["invalid"]:
        print(f"  - {name}")
    return results


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the script."""
    parser = argparse.ArgumentParser(description="Validate rules files.")
    parser.add_argument("path", nargs="?", default=DEFAULT_RULES_DIR,
                        help="Path to a rules file or a directory of .rules files (default: builtin rules)")
    args = parser.parse_args(argv)

    path = os.path.abspath(args.path)
    if not os.path.exists(path):
        print(f"❌ {path} does not exist")
        return 1

    if os.path.isfile(path):
        return 0 if validate_single_file(path) is not None else 1
    results = validate_directory(path)
    return 0 if not results["invalid"] else 1


if __name__ == "__main__":
    sys.exit(main())
