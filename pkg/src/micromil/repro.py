"""Reproduction scripts: CLI step sequences plus checks on their outputs.

Each script runs its steps through the same entry point as the command line,
so a script that passes here passes when typed by hand.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

log = logging.getLogger("micromil.repro")

# Full-size settings match the headline synthetic experiment; quick mode keeps
# every step but shrinks the data so the suite runs in seconds.
FULL = dict(bags=200, S=60, d=32, clusters=16, hidden=128, epochs=50, seed=1)
QUICK = dict(bags=40, S=16, d=8, clusters=4, hidden=16, epochs=4, seed=1)

Step = list[str] | Callable[[Path], None]
Check = Callable[[Path, bool], str | None]


@dataclass
class ReproScript:
    name: str
    steps: list[Step]
    checks: list[Check] = field(default_factory=list)


@dataclass
class ReproResult:
    name: str
    exit_code: int
    failures: list[str]
    seconds: float

    @property
    def ok(self) -> bool:
        return self.exit_code == 0 and not self.failures


def read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(value: str) -> float:
    return float("nan") if value == "undefined" else float(value)


# -- step builders -----------------------------------------------------------

def _synth(size: dict, out: str, **extra) -> list[str]:
    argv = ["synth", "--out-dir", out, "--bags", str(size["bags"]), "--images-per-bag", str(size["S"]),
            "--dim", str(size["d"]), "--seed", str(size["seed"])]
    for k, v in extra.items():
        argv += ["--" + k.replace("_", "-"), str(v)]
    return argv


def _train_flags(size: dict) -> list[str]:
    return ["--clusters", str(size["clusters"]), "--hidden", str(size["hidden"]),
            "--epochs", str(size["epochs"]), "--seed", str(size["seed"])]


def _expect_rows(name: str, n: int) -> Check:
    def check(work: Path, quick: bool) -> str | None:
        path = work / name
        if not path.exists():
            return f"{name} missing"
        rows = read_rows(path)
        return None if len(rows) == n else f"{name}: expected {n} rows, got {len(rows)}"
    return check


def _metric_at_least(name: str, row_filter: dict, column: str, floor: float) -> Check:
    def check(work: Path, quick: bool) -> str | None:
        if quick:
            return None
        rows = [r for r in read_rows(work / name) if all(r[k] == v for k, v in row_filter.items())]
        value = _num(rows[0][column])
        return None if value >= floor else f"{name} {row_filter} {column}={value} < {floor}"
    return check


def _not_worse(name: str, better: dict, worse: dict, column: str = "auc") -> Check:
    def check(work: Path, quick: bool) -> str | None:
        if quick:
            return None
        rows = read_rows(work / name)
        pick = lambda f: _num(next(r for r in rows if all(r[k] == v for k, v in f.items()))[column])
        a, b = pick(better), pick(worse)
        return None if a >= b else f"{name}: {better} {column}={a} < {worse} {column}={b}"
    return check


def _collect_shift(work: Path) -> None:
    lines = ["train,test,acc,auc,f1"]
    for tag, (tr, te) in SHIFT_DIRECTIONS.items():
        row = read_rows(work / f"shift_{tag}.csv")[0]
        lines.append(f"{tr},{te},{row['acc']},{row['auc']},{row['f1']}")
    (work / "shift.csv").write_text("\n".join(lines) + "\n")


SHIFT_DIRECTIONS = {"t2b": ("T10", "B10"), "b2t": ("B10", "T10"), "t2t": ("T10", "T10")}


def build_scripts(work: Path, quick: bool = False) -> list[ReproScript]:
    size = QUICK if quick else FULL
    w = str(work)
    data = f"{w}/data"
    train_flags = _train_flags(size)

    quickstart = ReproScript("quickstart", [
        _synth(size, data),
        ["split", "--manifest", f"{data}/manifest.csv", "--out-dir", f"{w}/holdout",
         "--holdout", "0.3", "--seed", str(size["seed"])],
        ["train", "--manifest", f"{w}/holdout/train.csv", "--out", f"{w}/model.bin",
         "--history", f"{w}/history.csv", *train_flags],
        ["train", "--manifest", f"{w}/holdout/train.csv", "--out", f"{w}/model_again.bin", *train_flags],
        ["train", "--baseline", "--manifest", f"{w}/holdout/train.csv", "--out", f"{w}/baseline.bin",
         *train_flags],
        ["eval", "--model", f"{w}/model.bin", "--manifest", f"{w}/holdout/test.csv",
         "--out", f"{w}/predictions.csv", "--metrics-out", f"{w}/metrics.csv"],
        ["eval", "--model", f"{w}/baseline.bin", "--manifest", f"{w}/holdout/test.csv",
         "--metrics-out", f"{w}/baseline_metrics.csv"],
    ], [
        _expect_rows("history.csv", size["epochs"]),
        _expect_rows("metrics.csv", 1),
        lambda work, q: None if (work / "model.bin").read_bytes() == (work / "model_again.bin").read_bytes()
        else "same-seed model files differ",
        _metric_at_least("metrics.csv", {}, "auc", 0.90),
        lambda work, q: None if q or _num(read_rows(work / "metrics.csv")[0]["auc"])
        >= _num(read_rows(work / "baseline_metrics.csv")[0]["auc"]) + 0.03
        else "MicroMIL AUC is not 0.03 above the mean-pool baseline",
    ])

    edges = ReproScript("edge_ablation", [
        _synth(size, data),
        ["ablate", "--manifest", f"{data}/manifest.csv", "--edge-method", "none,random,reverse,cosine",
         "--out", f"{w}/edge_ablation.csv", *train_flags],
    ], [
        _expect_rows("edge_ablation.csv", 4),
        _not_worse("edge_ablation.csv", {"edge_method": "cosine"}, {"edge_method": "none"}),
        _not_worse("edge_ablation.csv", {"edge_method": "cosine"}, {"edge_method": "reverse"}),
    ])

    rie = ReproScript("rie_ablation", [
        _synth(size, data),
        ["ablate", "--manifest", f"{data}/manifest.csv", "--rie-cluster", "kmeans,dce",
         "--rie-select", "random,mean,centroid,gumbel", "--out", f"{w}/rie_ablation.csv", *train_flags],
    ], [
        _expect_rows("rie_ablation.csv", 8),
        _not_worse("rie_ablation.csv", {"rie_cluster": "dce", "rie_select": "gumbel"},
                   {"rie_cluster": "kmeans", "rie_select": "random"}),
    ])

    shift_data = f"{w}/shift_data"
    shift_steps: list[Step] = [
        _synth(size, shift_data, redundancy=0.5, redundancy_jitter=0.45),
        ["analyze", "--manifest", f"{shift_data}/manifest.csv", "--heatmap-dir", f"{w}/heatmaps"],
        ["split", "--manifest", f"{shift_data}/manifest.csv", "--out-dir", f"{w}/shift", "--quantile", "0.1"],
        ["split", "--manifest", f"{w}/shift/high.csv", "--out-dir", f"{w}/shift/t10", "--holdout", "0.5",
         "--seed", str(size["seed"])],
        ["train", "--manifest", f"{w}/shift/high.csv", "--out", f"{w}/shift/t10.bin", *train_flags],
        ["train", "--manifest", f"{w}/shift/low.csv", "--out", f"{w}/shift/b10.bin", *train_flags],
        ["train", "--manifest", f"{w}/shift/t10/train.csv", "--out", f"{w}/shift/t10_half.bin", *train_flags],
        ["eval", "--model", f"{w}/shift/t10.bin", "--manifest", f"{w}/shift/low.csv",
         "--metrics-out", f"{w}/shift_t2b.csv"],
        ["eval", "--model", f"{w}/shift/b10.bin", "--manifest", f"{w}/shift/high.csv",
         "--metrics-out", f"{w}/shift_b2t.csv"],
        ["eval", "--model", f"{w}/shift/t10_half.bin", "--manifest", f"{w}/shift/t10/test.csv",
         "--metrics-out", f"{w}/shift_t2t.csv"],
        _collect_shift,
    ]
    shift = ReproScript("redundancy_shift", shift_steps, [
        _expect_rows("shift.csv", 3),
        lambda work, q: None if any((work / "heatmaps").glob("*.csv")) else "no heatmaps exported",
    ])

    gradcheck = ReproScript("gradcheck", [["gradcheck"]])
    return [quickstart, edges, rie, shift, gradcheck]


def run_script(script: ReproScript, work: Path, quick: bool = False) -> ReproResult:
    from .cli import run

    work.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    for step in script.steps:
        if callable(step):
            step(work)
            continue
        log.info("%s: micromil %s", script.name, " ".join(step))
        code = run(step)
        if code != 0:
            return ReproResult(script.name, code, [f"step failed with exit {code}: {' '.join(step)}"],
                               time.perf_counter() - start)
    failures = [msg for check in script.checks if (msg := check(work, quick))]
    return ReproResult(script.name, 0, failures, time.perf_counter() - start)


def run_all_repro(work_dir, quick: bool = False, only: str | None = None) -> int:
    """Run the scripts in order; returns the first nonzero exit code, 2 on a failed check."""
    work_dir = Path(work_dir)
    scripts = build_scripts(work_dir, quick)
    if only is not None:
        scripts = [s for s in scripts if s.name == only]
        if not scripts:
            from .cli import UsageError
            raise UsageError(f"unknown repro script {only!r}")
    status = 0
    for script in scripts:
        result = run_script(script, work_dir, quick)
        print(f"{'PASS' if result.ok else 'FAIL'} {script.name} ({result.seconds:.1f}s)")
        for msg in result.failures:
            print(f"  {msg}")
        if not result.ok and status == 0:
            status = result.exit_code or 2
    return status
