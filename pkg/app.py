"""
Entry point for the network formation lab

    python app.py run --config configs/small_data.cfg --out results/
"""

import sys

from netform.cli import main

if __name__ == "__main__":
    sys.exit(main())
