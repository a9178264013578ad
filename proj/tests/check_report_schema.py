"""Runs synth + eval (untrained and trained) and validates both reports."""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def run(*args):
    subprocess.run(args, check=True, stdout=subprocess.DEVNULL)


def main():
    cli, schema_path = sys.argv[1], sys.argv[2]
    schema = json.loads(Path(schema_path).read_text())
    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        run(cli, "synth", "--out", str(data), "--classes", "4", "--per-class", "12")
        cfg = str(data / "config.toml")
        run(cli, "train", "-c", cfg, "--set", "epochs_stage1=1", "--set", "epochs_stage2=1",
            "-o", str(Path(tmp) / "m"), "-q")
        reports = []
        for extra in ([], ["--checkpoint", str(Path(tmp) / "m.final")], ["--macro"]):
            out = Path(tmp) / f"report{len(reports)}.json"
            run(cli, "eval", "-c", cfg, "-o", str(out), *extra)
            reports.append(json.loads(out.read_text()))
        for r in reports:
            jsonschema.validate(r, schema)
        assert reports[0]["checkpoint"] is None
        assert reports[2]["f1_averaging"] == "macro"
        assert reports[2]["base_f1"] == reports[2]["base_f1_macro"]
    print("report schema OK")


if __name__ == "__main__":
    main()
