# The command line, stage by stage, on a small city.
#
# Every stage reads its inputs from the work directory and writes its outputs
# plus a <stage>.manifest.json with content hashes, config and seed.

import json
import subprocess
import sys
import tempfile
from pathlib import Path

CONFIG = """\
seed = 3
grid.n_rows = 30
grid.n_cols = 30
synth.patch_size = 12
forest.n_trees = 100
"""


def cli(*args):
    cmd = [sys.executable, "-m", "landuse_cdr", *args]
    print("$ landuse-cdr", " ".join(args))
    out = subprocess.run(cmd, capture_output=True, text=True)
    print(f"  exit {out.returncode}; last log line: {out.stderr.strip().splitlines()[-1]}")
    return out.returncode


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    (tmp / "run.cfg").write_text(CONFIG)
    common = ["--config", str(tmp / "run.cfg"), "--workdir", str(tmp / "w")]
    cli("synth", *common)
    cli("pipeline", *common, "--threads", "0")
    print((tmp / "w" / "report.txt").read_text())

    man = json.loads((tmp / "w" / "evaluate.manifest.json").read_text())
    print("evaluate manifest inputs:", {k: v[:12] for k, v in man["inputs"].items()})

    # rerun from train onward with fixed uniform weights; --set wins over the config file
    cli("train", *common, "--set", "forest.tune=false", "--set", "forest.weights=1,1,1,1,1")
    cli("predict", *common)

    # failures map to exit codes: 2 missing input, 3 bad config, 4 inconsistent inputs
    (tmp / "w" / "features.csv").unlink()
    cli("train", *common)
    cli("train", *common, "--set", "forest.n_trees=lots")
    cli("features", *common, "--set", "grid.n_rows=29")
