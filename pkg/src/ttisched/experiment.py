"""Policy sweeps over the MCC arrival probability, with CSV and gnuplot output."""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .estimators import make_scheduler
from .exceptions import BudgetExceededError, InvalidInputError
from .simulator import RunMetrics, SimConfig, run_simulation
from .validation import check_positive_int, check_probability

CSV_HEADER = (
    "policy",
    "r_mcc",
    "mean_mcc_arrivals",
    "pct_mcc_served",
    "pct_mbb_served",
    "mbb_throughput",
    "reps",
    "se_mcc",
    "se_mbb",
    "se_thr",
)
# Extra column, appended after the frozen ones.
FLAGS_COLUMN = "flags"


@dataclass(frozen=True)
class ExperimentSpec:
    base: SimConfig
    r_mcc_grid: tuple[float, ...]
    policies: tuple[str, ...]
    replications: int
    output_dir: Path
    jobs: int = 1

    def __post_init__(self):
        grid = tuple(check_probability(r, "r_mcc") for r in self.r_mcc_grid)
        if not grid:
            raise InvalidInputError("r_mcc grid must not be empty")
        if list(grid) != sorted(grid):
            raise InvalidInputError("r_mcc grid must be sorted ascending")
        object.__setattr__(self, "r_mcc_grid", grid)
        if not self.policies:
            raise InvalidInputError("at least one policy is required")
        labels = tuple(make_scheduler(p).label for p in self.policies)
        object.__setattr__(self, "policies", labels)
        check_positive_int(self.replications, "replications")
        check_positive_int(self.jobs, "jobs")
        object.__setattr__(self, "output_dir", Path(self.output_dir))


@dataclass(frozen=True)
class ResultRow:
    policy: str
    r_mcc: float
    mean_mcc_arrivals: float
    pct_mcc_served: Optional[float]
    pct_mbb_served: Optional[float]
    mbb_throughput: Optional[float]
    reps: int
    se_mcc: Optional[float]
    se_mbb: Optional[float]
    se_thr: Optional[float]
    flags: tuple[str, ...] = field(default_factory=tuple)

    def csv_line(self) -> str:
        cells = [self.policy] + [
            _g(getattr(self, name)) for name in CSV_HEADER[1:]
        ] + [";".join(self.flags)]
        return ",".join(cells)


def _g(x) -> str:
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return f"{x:.6g}"


def replication_seed(base_seed: int, grid_index: int, rep: int) -> int:
    """Seed for one replication; shared by every policy so arms are paired."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(grid_index, rep))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _run_one(args) -> Optional[RunMetrics]:
    config, policy = args
    try:
        return run_simulation(config, policy)
    except BudgetExceededError:
        return None


def _mean_se(values):
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def summarize(policy: str, r_mcc: float, mcc_sources: int, runs) -> ResultRow:
    """Aggregate replications of one cell; ``None`` entries mean a budget skip."""
    arrivals = mcc_sources * r_mcc
    if any(m is None for m in runs):
        return ResultRow(policy, r_mcc, arrivals, None, None, None, len(runs),
                         None, None, None, ("budget_exceeded",))
    flags = []
    pct = {}
    for cls in ("MCC", "MBB"):
        vals = [m.pct_served(cls) for m in runs]
        if any(v is None for v in vals):
            flags.append("no_traffic" if cls == "MCC" else "no_mbb_traffic")
        pct[cls] = _mean_se([100.0 if v is None else v for v in vals])
    thr = _mean_se([m.mbb_throughput for m in runs])
    return ResultRow(
        policy, r_mcc, arrivals,
        pct["MCC"][0], pct["MBB"][0], thr[0], len(runs),
        pct["MCC"][1], pct["MBB"][1], thr[1], tuple(flags),
    )


def plan(spec: ExperimentSpec):
    """Simulation jobs in deterministic (policy, r_mcc, replication) order."""
    jobs = []
    for policy in spec.policies:
        for g, r in enumerate(spec.r_mcc_grid):
            for rep in range(spec.replications):
                cfg = spec.base.replace(r_mcc=r, seed=replication_seed(spec.base.seed, g, rep))
                jobs.append((cfg, policy))
    return jobs


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    out = spec.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc

    jobs = plan(spec)
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    rows = []
    n = spec.replications
    i = 0
    for policy in spec.policies:
        for r in spec.r_mcc_grid:
            rows.append(summarize(policy, r, spec.base.num_mcc_sources, results[i:i + n]))
            i += n

    write_csv(out / "results.csv", rows)
    write_text(out / "plot.gp", gnuplot_script(spec.policies))
    return rows


def write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_csv(path: Path, rows) -> None:
    lines = [",".join(CSV_HEADER + (FLAGS_COLUMN,))] + [row.csv_line() for row in rows]
    write_text(path, "\n".join(lines) + "\n")


def gnuplot_script(policies) -> str:
    names = " ".join(policies)
    panels = [
        ("Percentage of MCC services served", 4),
        ("MBB throughput (bits/ms)", 6),
        ("Percentage of MBB services served", 5),
    ]
    lines = [
        "set datafile separator ','",
        "set terminal pngcairo size 800,1200",
        "set output 'results.png'",
        "set multiplot layout 3,1",
        "set key outside right",
        "set xlabel 'Mean MCC arrivals per time unit'",
        f'policies = "{names}"',
    ]
    for title, col in panels:
        lines.append(f"set ylabel '{title}'")
        lines.append(
            "plot for [p in policies] 'results.csv' every ::1 "
            f"using (strcol(1) eq p ? $3 : 1/0):{col} with linespoints title p"
        )
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"


# ---- key=value configuration -------------------------------------------------

_EXPERIMENT_KEYS = {"r_mcc_grid", "policies", "replications", "output_dir", "jobs"}


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text):
    text = text.strip()
    if "-" in text and "," not in text and " " not in text:
        lo, hi = (int(x) for x in text.split("-"))
        return tuple(range(lo, hi + 1))
    return tuple(int(x) for x in text.replace(",", " ").split())


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _validity(text):
    v = text.strip().lower()
    if v in ("", "none", "constant"):
        return None
    lo, hi = _ints(v.replace(":", ","))
    return lo, hi


def _optional_int(text):
    v = text.strip().lower()
    return None if v in ("", "none") else int(v)


_SIM_PARSERS = {
    "tti_menu": _ints,
    "csi_validity": _validity,
    "flat_csi": _bool,
    "service_cap": _optional_int,
}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into a dict of typed values.

    SimConfig fields plus the experiment keys ``r_mcc_grid``, ``policies``,
    ``replications``, ``output_dir`` and ``jobs`` are recognised.
    """
    sim_fields = {f.name: f for f in dataclasses.fields(SimConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not sep:
            raise InvalidInputError(f"{source}:{lineno}: expected key = value")
        try:
            if key in _SIM_PARSERS:
                out[key] = _SIM_PARSERS[key](value)
            elif key in sim_fields:
                default = sim_fields[key].default
                out[key] = int(value, 0) if isinstance(default, int) else float(value)
            elif key == "r_mcc_grid":
                out[key] = _floats(value)
            elif key == "policies":
                out[key] = tuple(value.replace(",", " ").split())
            elif key in ("replications", "jobs"):
                out[key] = int(value)
            elif key == "output_dir":
                out[key] = value
            else:
                raise InvalidInputError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise InvalidInputError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def split_config(values: dict) -> tuple[SimConfig, dict]:
    """SimConfig from the simulation keys; experiment keys returned separately."""
    sim = {k: v for k, v in values.items() if k not in _EXPERIMENT_KEYS}
    rest = {k: v for k, v in values.items() if k in _EXPERIMENT_KEYS}
    return SimConfig(**sim), rest


def seed_from_env(default: int) -> int:
    raw = os.environ.get("TTISCHED_SEED")
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw, 0)
    except ValueError:
        raise InvalidInputError(f"TTISCHED_SEED must be an integer, got {raw!r}") from None
