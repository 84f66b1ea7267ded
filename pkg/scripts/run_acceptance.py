"""Run the acceptance checks and print one line per criterion.

    python scripts/run_acceptance.py [1 2 3 ...]
"""

import sys

from hillspec import acceptance

if __name__ == "__main__":
    nums = [int(a) for a in sys.argv[1:]] or None
    res = acceptance.run(nums)
    sys.exit(0 if all(r.passed for r in res) else 1)
