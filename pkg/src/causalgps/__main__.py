"""
Make causalgps runnable as a module.

Usage:
    python -m causalgps simulate --n 5000 --out data.csv --truth-out truth.json
    python -m causalgps pseudo-pop --input data.csv --exposure exposure --covariates c1,c2 ...
"""

from .cli import main

if __name__ == "__main__":
    main()
