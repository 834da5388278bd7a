"""Validate inspector response samples against the published schema document."""

import json
import pathlib
import sys

import jsonschema


def main(sample_dir: str) -> int:
    root = pathlib.Path(sample_dir)
    doc = json.loads((root / "schema_document.json").read_text())
    jsonschema.Draft202012Validator.check_schema(doc)
    schemas = doc["schemas"]
    for name, schema in schemas.items():
        jsonschema.Draft202012Validator.check_schema(schema)

    failures = 0
    seen = set()
    for path in sorted(root.glob("*__*.json")):
        name = path.name.split("__")[0]
        seen.add(name)
        if name not in schemas:
            print(f"FAIL {path.name}: no schema named {name}")
            failures += 1
            continue
        errors = list(jsonschema.Draft202012Validator(schemas[name]).iter_errors(json.loads(path.read_text())))
        for e in errors:
            print(f"FAIL {path.name}: {e.json_path}: {e.message}")
        failures += len(errors)

    missing = sorted(set(schemas) - seen)
    if missing:
        print("FAIL no samples for: " + ", ".join(missing))
        failures += 1
    print(f"checked {len(list(root.glob('*__*.json')))} samples against {len(schemas)} schemas, {failures} failures")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1]))
