"""Regenerate the golden MSA-Conv fixtures in tests/fixtures/."""
from pathlib import Path

from msaconv.fixtures import write_all

if __name__ == "__main__":
    target = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
    for path in write_all(target):
        print(path.relative_to(target.parent.parent))
