"""Fake OCR engine: prints a canned TSV regardless of the input image."""
import sys
from pathlib import Path

if not Path(sys.argv[1]).exists():
    sys.stderr.write(f"cannot open {sys.argv[1]}\n")
    sys.exit(1)
sys.stdout.write((Path(__file__).parent / "tesseract_page.tsv").read_text(encoding="utf-8"))
