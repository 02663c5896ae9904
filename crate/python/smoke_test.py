"""Smoke test for the pymoldiff extension.

Build first:
    cargo build --release -p pymoldiff --features extension-module
then run this file with python3. The built library is picked up from
target/release when pymoldiff is not already importable.
"""

import importlib.util
import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    try:
        import pymoldiff

        return pymoldiff
    except ImportError:
        pass
    for name in ("libpymoldiff.so", "libpymoldiff.dylib", "pymoldiff.dll"):
        built = ROOT / "target" / "release" / name
        if built.exists():
            break
    else:
        sys.exit("pymoldiff is not built; run cargo build --release -p pymoldiff --features extension-module")
    tmp = Path(tempfile.mkdtemp())
    target = tmp / ("pymoldiff.pyd" if built.suffix == ".dll" else "pymoldiff.so")
    shutil.copy(built, target)
    spec = importlib.util.spec_from_file_location("pymoldiff", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    pm = load_module()

    assert pm.same_molecule("OCC", pm.normalize_smiles("CCO"))
    assert pm.is_valid("c1ccoc1")
    assert not pm.is_valid("C.C")
    assert pm.violations("CCO") == []
    try:
        pm.normalize_smiles("C1CC")
    except ValueError:
        pass
    else:
        raise AssertionError("unclosed ring accepted")

    s = pm.score(["CCO", "OCC", "C1CC1", "XX"], ["CCO"])
    assert s["validity"] == 75.0 and s["novelty"] == 50.0, s

    bars = pm.alpha_bars()
    assert len(bars) == 51 and abs(bars[1] - 0.9999) < 1e-15
    blurred = pm.heat_blur([1.0, 0.0, 0.0, 0.0], 1.0)
    assert abs(sum(blurred) - 1.0) < 1e-12

    with tempfile.TemporaryDirectory() as out:
        cfg = json.dumps(
            {
                "experiment": "flow_matching",
                "epochs": 1,
                "subset": 30,
                "sample_count": 20,
                "repetitions": 1,
                "dataset": str(ROOT / "data" / "qm9_micro.smi"),
                "output": out,
            }
        )
        metrics = pm.run_experiment(cfg)
        assert metrics["count"] == 20 and metrics["params"] > 0, metrics
        model = pm.Model.load(cfg)
        smiles = model.generate(10, 3)
        assert len(smiles) == 10 and smiles == model.generate(10, 3)
        assert model.parameter_count == metrics["params"]

    print("pymoldiff smoke test passed")


if __name__ == "__main__":
    main()
