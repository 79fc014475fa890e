# %% [markdown]
# # Command-line workflow
#
# The same pipeline driven through `latentrisk` subcommands.  Each call writes
# into its own output directory; files appear only if the command succeeds.

# %%
import json
import tempfile
from pathlib import Path

import yaml

from latentrisk.cli import main

work = Path(tempfile.mkdtemp())
config = {
    "seed": 0,
    "simulate": {"preset": "table1-C"},
    "fit": {"restarts": 2, "amplitudes": [0.5, 0.25, 0.125], "error_bars": False},
    "select": {"L_grid": [1, 2], "K_grid": [1]},
    "predict": {"bands": [{"covariate": 1, "band": "UQ"}, {"covariate": 1, "band": "LQ"}],
                "grid": {"t_max": 50, "n": 11}, "kinds": ["decontaminated", "crude"]},
}
(work / "run.yaml").write_text(yaml.safe_dump(config))
cfg = ["--config", str(work / "run.yaml")]

# %%
assert main(["simulate", "--out", str(work / "sim")] + cfg) == 0
assert main(["baseline", "--data", str(work / "sim" / "cohort.csv"), "--out", str(work / "cox")] + cfg) == 0
assert main(["select", "--data", str(work / "sim" / "cohort.csv"), "--out", str(work / "fit")] + cfg) == 0

# %%
selection = json.loads((work / "fit" / "selection.json").read_text())
print("chosen:", selection["chosen"])

# %%
model = str(work / "fit" / "model.json")
assert main(["predict", "--model", model, "--out", str(work / "curves")] + cfg) == 0
assert main(["classify", "--model", model, "--data", str(work / "sim" / "cohort.csv"),
             "--truth", str(work / "sim" / "truth.csv"), "--out", str(work / "classes")] + cfg) == 0
for f in sorted((work / "curves").iterdir()):
    print(f.name)
print((work / "curves" / "crude_risk1_cov1_UQ.csv").read_text())
