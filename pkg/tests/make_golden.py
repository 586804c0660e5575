"""Regenerate the golden files under tests/data.

Run ``python3 tests/make_golden.py`` after an intentional change to the
estimator, the bundled data or the execution engine, and review the diff.
"""
import json
import shutil
import tempfile
from pathlib import Path

from qrlob import cli, fixtures

DATA = Path(__file__).parent / "data"
TCA_ARGS = ["tca", "--seed", "11", "--model", "fixture:i", "--schedule", "s2", "--tactic", "t2",
            "--benchmark", "arrival", "--n-total", "20", "--M", "4", "--T", "60", "--n-paths", "200"]


def estimate_model_i(root: Path) -> Path:
    cli.main(["ingest", "--in", str(fixtures.sample_l2_path()), "--k", "3", "--out", str(root / "ing")])
    cli.main(["estimate", "--events", str(root / "ing"), "--model", "i", "--out", str(root / "est")])
    return root / "est" / "model.json"


def tca_summary(root: Path) -> Path:
    cli.main(TCA_ARGS + ["--out", str(root / "tca")])
    return root / "tca" / "summary.json"


def main():
    DATA.mkdir(exist_ok=True)
    root = Path(tempfile.mkdtemp())
    try:
        shutil.copyfile(estimate_model_i(root), DATA / "golden_model_i.json")
        doc = json.loads(tca_summary(root).read_text())
        (DATA / "golden_tca_summary.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    finally:
        shutil.rmtree(root)


if __name__ == "__main__":
    main()
