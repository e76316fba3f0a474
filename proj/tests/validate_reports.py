"""Runs quick CLI scenarios and validates every report against docs/report.schema.json."""

import copy
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema


def main(cli: str, source_dir: str) -> int:
    src = pathlib.Path(source_dir)
    schema = json.loads((src / "docs" / "report.schema.json").read_text())
    validator = jsonschema.Draft202012Validator(schema)
    jsonschema.Draft202012Validator.check_schema(schema)
    failures = 0
    with tempfile.TemporaryDirectory() as tmp:
        out = pathlib.Path(tmp)
        runs = [
            ("kernel-identities", [], 0),
            ("kernel-identities", ["--flip-generator-sign"], 1),
            ("boson-commutators", [], 0),
            ("np-brackets", [], 0),
        ]
        for i, (suite, extra, want) in enumerate(runs):
            target = out / f"run{i}"
            code = subprocess.run(
                [cli, "run", str(src / "configs" / f"{suite}.json"), "--out", str(target), *extra],
                stdout=subprocess.DEVNULL,
            ).returncode
            if code != want:
                print(f"FAIL {suite} {extra}: exit {code}, expected {want}")
                failures += 1
            report = json.loads((target / f"{suite}_report.json").read_text())
            errors = list(validator.iter_errors(report))
            for e in errors:
                print(f"FAIL {suite}: {e.message} at {list(e.path)}")
            failures += len(errors)
            for table in report["tables"]:
                header = (target / table).read_text().splitlines()[0]
                if not header or header[0].isdigit() or header[0] == "-":
                    print(f"FAIL {table}: missing header row")
                    failures += 1
            print(f"{'PASS' if not errors else 'FAIL'} {suite} {' '.join(extra)} validates")

        # The validator must reject broken reports.
        good = json.loads((out / "run0" / "kernel-identities_report.json").read_text())
        broken = []
        b = copy.deepcopy(good)
        b["schema_version"] = "2.0.0"
        broken.append(b)
        b = copy.deepcopy(good)
        del b["checks"][0]["anchor"]
        broken.append(b)
        b = copy.deepcopy(good)
        b["checks"][0]["pass"] = "yes"
        broken.append(b)
        b = copy.deepcopy(good)
        b["scenario"]["potential"]["b"] = {"x": 1.0}
        broken.append(b)
        for k, b in enumerate(broken):
            if validator.is_valid(b):
                print(f"FAIL mutated report {k} was accepted")
                failures += 1
    print("schema validation:", "PASS" if failures == 0 else f"FAIL ({failures})")
    return 0 if failures == 0 else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2]))
