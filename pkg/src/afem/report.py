"""Experiment plans, CSV logs, rate fits and SVG convergence plots."""
from __future__ import annotations

import configparser
import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .driver import RunConfig, run_afem
from .estimator import estimate
from .fem import build_space
from .marking import MarkingStrategy, Strategy
from .mesh import read_mesh, write_mesh
from .problems import get_problem, singularity_exponent, variant_of

CSV_COLUMNS = ["step", "n_elements", "n_dofs", "eta", "h1_error", "energy_error", "cea_quotient",
               "solved", "h_max", "wall_ms"]
SUMMARY_COLUMNS = ["run", "problem", "kappa", "theta", "marking", "uniform", "steps", "final_elements",
                   "final_eta", "eta_slope", "h1_slope", "energy_slope", "corridor_entry"]
FIT_MIN_ELEMENTS = 1e3
CORRIDOR_FACTOR = 1.25


# -- rates ---------------------------------------------------------------------

def _get(r, name):
    return r[name] if isinstance(r, dict) else getattr(r, name)


def _fit_window(records, quantity: str, n_min: float):
    pts = [(_get(r, "n_elements"), _get(r, quantity)) for r in records
           if _get(r, "solved") and _get(r, "n_elements") >= n_min]
    pts = [(n, v) for n, v in pts if v is not None and v > 0]
    return np.array(pts, dtype=float).reshape(-1, 2)


def fit_rate(records, quantity: str = "eta", n_min: float = FIT_MIN_ELEMENTS,
             min_points: int = 6) -> float:
    """Least-squares slope of ``log quantity`` against ``log N`` for ``N >= n_min``."""
    pts = _fit_window(records, quantity, n_min)
    if len(pts) < min_points:
        raise ValueError(f"fit window holds {len(pts)} points, need {min_points}")
    return float(np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)[0])


def fit_rates(records, n_min: float = FIT_MIN_ELEMENTS, min_points: int = 6) -> dict:
    """Slopes of every available quantity; ``None`` where the window is too small."""
    out = {}
    for q in ("eta", "h1_error", "energy_error"):
        try:
            out[q] = fit_rate(records, q, n_min, min_points)
        except ValueError:
            out[q] = None
    return out


def corridor_entry(records, factor: float = CORRIDOR_FACTOR, n_min: float = FIT_MIN_ELEMENTS,
                   min_points: int = 6) -> int:
    """First step from which ``eta`` stays within ``factor`` of the fitted power law.

    The line is fitted on the window ``N >= n_min``; the corridor is
    ``[fit / factor, fit * factor]``.
    """
    pts = _fit_window(records, "eta", n_min)
    if len(pts) < min_points:
        raise ValueError(f"fit window holds {len(pts)} points, need {min_points}")
    slope, icpt = np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)
    steps = [_get(r, "step") for r in records]
    n = np.array([_get(r, "n_elements") for r in records], dtype=float)
    eta = np.array([_get(r, "eta") for r in records], dtype=float)
    dev = np.abs(np.log(eta) - (icpt + slope * np.log(n)))
    inside = dev <= math.log(factor)
    entry = len(records)
    for i in range(len(records) - 1, -1, -1):
        if not inside[i]:
            break
        entry = i
    return int(steps[entry]) if entry < len(records) else int(steps[-1]) + 1


def eta_deviation(a, b, n_min: float = FIT_MIN_ELEMENTS) -> float:
    """Max relative ``eta`` deviation at matched element counts, log-interpolated."""
    def arrays(r):
        n = np.array([_get(x, "n_elements") for x in r if _get(x, "solved")], dtype=float)
        e = np.array([_get(x, "eta") for x in r if _get(x, "solved")], dtype=float)
        return np.log(n), np.log(e)

    la, ea = arrays(a)
    lb, eb = arrays(b)
    lo = max(la[0], lb[0], math.log(n_min))
    hi = min(la[-1], lb[-1])
    worst = 0.0
    for (lx, ex), (ly, ey) in (((la, ea), (lb, eb)), ((lb, eb), (la, ea))):
        sel = (lx >= lo) & (lx <= hi)
        if sel.any():
            other = np.interp(lx[sel], ly, ey)
            worst = max(worst, float(np.max(np.abs(np.exp(ex[sel] - other) - 1.0))))
    return worst


# -- plans -------------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    """One concrete run of a plan (picklable; the problem is rebuilt by name)."""

    name: str
    problem: str
    kappa: float
    theta: float
    marking: str = "standard"
    uniform: bool = False
    max_elements: Optional[int] = None
    max_steps: Optional[int] = None
    eta_tol: Optional[float] = None
    expanded_n: int = 1
    figure: str = "convergence"
    cea: bool = False
    timing: bool = False
    snapshot_every: int = 0
    expect_slope: Optional[tuple] = None

    def config(self) -> RunConfig:
        return RunConfig(
            problem=get_problem(self.problem, self.kappa),
            strategy=MarkingStrategy(Strategy(self.marking), self.theta, self.expanded_n),
            uniform=self.uniform, max_elements=self.max_elements, max_steps=self.max_steps,
            eta_tol=self.eta_tol, cea=self.cea, timing=self.timing,
            snapshot_every=self.snapshot_every,
        )


@dataclass
class ExperimentPlan:
    name: str
    output: Path
    runs: list = field(default_factory=list)     # RunSpec, already expanded
    jobs: int = 1

    def __post_init__(self):
        names = [r.name for r in self.runs]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ValueError(f"duplicate run names: {sorted(dup)}")


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.replace(",", " ").split()]


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_RUN_KEYS = {"problem", "kappa", "theta", "marking", "uniform", "max_elements", "max_steps", "eta_tol",
             "expanded_n", "figure", "cea", "timing", "snapshot_every", "expect_slope"}


def expand_section(section: str, opts: dict, defaults: dict = None) -> list[RunSpec]:
    """Cross product of the ``kappa``/``theta``/``marking`` lists of one run section.

    ``uniform = both`` adds a uniform-refinement twin of every adaptive run.
    """
    o = dict(defaults or {})
    o.update(opts)
    unknown = set(o) - _RUN_KEYS
    if unknown:
        raise ValueError(f"[{section}]: unknown keys {sorted(unknown)}")
    if "problem" not in o:
        raise ValueError(f"[{section}]: 'problem' is required")
    kap = _floats(o.get("kappa", "2"))
    th = _floats(o.get("theta", "0.5"))
    mk = o.get("marking", "standard").replace(",", " ").split()
    uni = o.get("uniform", "false").strip().lower()
    modes = [False, True] if uni == "both" else [_bool(uni)]
    stop = dict(
        max_elements=int(float(o["max_elements"])) if "max_elements" in o else None,
        max_steps=int(o["max_steps"]) if "max_steps" in o else None,
        eta_tol=float(o["eta_tol"]) if "eta_tol" in o else None,
    )
    if all(v is None for v in stop.values()):
        raise ValueError(f"[{section}]: a stopping rule is required")
    expect = tuple(_floats(o["expect_slope"])) if "expect_slope" in o else None
    if expect is not None and len(expect) != 2:
        raise ValueError(f"[{section}]: expect_slope needs two numbers")
    specs = []
    for k, t, m, u in itertools.product(kap, th, mk, modes):
        label = f"{section}_{o['problem']}_k{k:g}_" + ("uniform" if u else f"t{t:g}_{m}")
        if u and any(s.name == label for s in specs):
            continue    # uniform runs do not depend on theta or marking
        specs.append(RunSpec(
            name=label, problem=o["problem"], kappa=k, theta=t, marking=Strategy(m).value,
            uniform=u, expanded_n=int(o.get("expanded_n", 1)), figure=o.get("figure", section),
            cea=_bool(o.get("cea", "false")), timing=_bool(o.get("timing", "false")),
            snapshot_every=int(o.get("snapshot_every", 0)), expect_slope=expect, **stop,
        ))
    return specs


def parse_plan(text: str, name: str = "plan", base: Path = Path(".")) -> ExperimentPlan:
    """``[plan]`` holds ``output`` and ``jobs`` (plus run defaults); ``[run NAME]`` sections define runs."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    head = dict(cp["plan"]) if cp.has_section("plan") else {}
    out = Path(head.pop("output", f"out/{name}"))
    if not out.is_absolute():
        out = (base / out).resolve()
    jobs = int(head.pop("jobs", 1))
    runs = []
    for sec in cp.sections():
        if sec == "plan":
            continue
        if not sec.startswith("run "):
            raise ValueError(f"unexpected section [{sec}]")
        runs += expand_section(sec[4:].strip(), dict(cp[sec]), head)
    if not runs:
        raise ValueError("plan defines no runs")
    return ExperimentPlan(name=name, output=out, runs=runs, jobs=jobs)


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    return parse_plan(path.read_text(), name=path.stem, base=path.parent)


# -- CSV -----------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_records_csv(path) -> list[dict]:
    ints = {"step", "n_elements", "n_dofs"}
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if k in ints:
                    rec[k] = int(v)
                elif k == "solved":
                    rec[k] = v == "true"
                else:
                    rec[k] = float(v) if v != "" else None
            rows.append(rec)
    return rows


def write_summary_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in SUMMARY_COLUMNS])


def write_manifest(plan: ExperimentPlan, path) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    for s in plan.runs:
        sec = {}
        for f in fields(s):
            v = getattr(s, f.name)
            if f.name != "name" and v is not None:
                sec[f.name] = " ".join(map(str, v)) if isinstance(v, tuple) else str(v)
        cp[s.name] = sec
    with open(path, "w") as fh:
        cp.write(fh)


def read_manifest(path) -> list[RunSpec]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path)
    types = {f.name: f.type for f in fields(RunSpec)}
    specs = []
    for sec in cp.sections():
        kw = {"name": sec}
        for k, v in cp[sec].items():
            t = types[k]
            if k == "expect_slope":
                kw[k] = tuple(_floats(v))
            elif "bool" in t:
                kw[k] = _bool(v)
            elif "int" in t:
                kw[k] = int(v)
            elif "float" in t:
                kw[k] = float(v)
            else:
                kw[k] = v
        specs.append(RunSpec(**kw))
    return specs


# -- SVG -------------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
            "#7f7f7f", "#bcbd22"]


def svg_loglog(series: Sequence[tuple], path, title: str = "", xlabel: str = "number of elements",
               ylabel: str = "estimator", slopes: Sequence[tuple] = ()) -> None:
    """Log-log line plot. ``series`` holds ``(label, x, y, dashed)``; ``slopes`` ``(label, slope)``."""
    W, H, L, R, T, B = 640, 480, 70, 170, 40, 50
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    ok = (xs > 0) & (ys > 0)
    xs, ys = xs[ok], ys[ok]
    x0, x1 = math.floor(math.log10(xs.min())), math.ceil(math.log10(xs.max()))
    y0, y1 = math.floor(math.log10(ys.min())), math.ceil(math.log10(ys.max()))
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)

    def px(x):
        return L + (math.log10(x) - x0) / (x1 - x0) * (W - L - R)

    def py(y):
        return H - B - (math.log10(y) - y0) / (y1 - y0) * (H - T - B)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{W / 2 - R / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
           f'font-size="15">{title}</text>',
           f'<rect x="{L}" y="{T}" width="{W - L - R}" height="{H - T - B}" fill="none" stroke="black"/>']
    for d in range(x0, x1 + 1):
        X = px(10.0 ** d)
        out.append(f'<line x1="{X:.1f}" y1="{T}" x2="{X:.1f}" y2="{H - B}" stroke="#ddd"/>')
        out.append(f'<text x="{X:.1f}" y="{H - B + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12">1e{d}</text>')
    for d in range(y0, y1 + 1):
        Y = py(10.0 ** d)
        out.append(f'<line x1="{L}" y1="{Y:.1f}" x2="{W - R}" y2="{Y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{L - 6}" y="{Y + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="12">1e{d}</text>')
    out.append(f'<text x="{(L + W - R) / 2:.1f}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13">{xlabel}</text>')
    out.append(f'<text x="16" y="{(T + H - B) / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13" transform="rotate(-90 16 {(T + H - B) / 2:.1f})">{ylabel}</text>')
    for i, (label, x, y, dashed) in enumerate(series):
        col = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if a > 0 and b > 0)
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.6"{dash}/>')
        ly = T + 16 + 18 * i
        out.append(f'<line x1="{W - R + 10}" y1="{ly}" x2="{W - R + 34}" y2="{ly}" stroke="{col}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text x="{W - R + 40}" y="{ly + 4}" font-family="sans-serif" font-size="11">{label}</text>')
    # slope triangles in the lower left quarter of the data range
    gx = 10 ** (x0 + 0.55 * (x1 - x0))
    for j, (label, s) in enumerate(slopes):
        xa, xb = gx, gx * 10 ** (0.25 * (x1 - x0))
        ya = 10 ** (y0 + (0.30 - 0.12 * j) * (y1 - y0)) if y1 > y0 else ys.min()
        yb = ya * (xb / xa) ** s
        P = [(px(xa), py(ya)), (px(xb), py(ya)), (px(xb), py(yb))] if s > 0 else \
            [(px(xa), py(ya)), (px(xb), py(yb)), (px(xa), py(yb))]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in P)
        out.append(f'<polygon points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{px(xb) + 6:.1f}" y="{(py(ya) + py(yb)) / 2 + 4:.1f}" font-family="sans-serif" '
                   f'font-size="11">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


# -- execution ---------------------------------------------------------------------

def _execute(spec: RunSpec, snapshot_dir: Optional[str]):
    res = run_afem(spec.config())
    if snapshot_dir is not None and res.snapshots:
        d = Path(snapshot_dir)
        d.mkdir(parents=True, exist_ok=True)
        for step, mesh, values in res.snapshots:
            write_mesh(mesh, d / f"step_{step:03d}.mesh")
            (d / f"step_{step:03d}.u").write_text("\n".join(repr(v) for v in values.tolist()) + "\n")
    return res.records


def summarize(spec: RunSpec, records) -> dict:
    rates = fit_rates(records)
    try:
        entry = corridor_entry(records)
    except ValueError:
        entry = None
    last = records[-1]
    return dict(run=spec.name, problem=spec.problem, kappa=spec.kappa, theta=spec.theta,
                marking=spec.marking, uniform=spec.uniform, steps=len(records),
                final_elements=_get(last, "n_elements"), final_eta=_get(last, "eta"),
                eta_slope=rates["eta"], h1_slope=rates["h1_error"], energy_slope=rates["energy_error"],
                corridor_entry=entry)


def plot_figures(specs: Sequence[RunSpec], runs: dict, out: Path) -> list[Path]:
    paths = []
    for fig in sorted({s.figure for s in specs}):
        members = [s for s in specs if s.figure == fig]
        series = []
        for s in members:
            recs = runs[s.name]
            series.append((s.name.split("_", 1)[-1], [_get(r, "n_elements") for r in recs],
                           [_get(r, "eta") for r in recs], s.uniform))
        betas = sorted({singularity_exponent(variant_of(s.problem)) for s in members})
        slopes = [("-1/2", -0.5)] + [(f"-beta/2 = {-b / 2:.3f}", -b / 2) for b in betas]
        p = out / f"{fig}.svg"
        svg_loglog(series, p, title=fig, slopes=slopes)
        paths.append(p)
    return paths


def threshold_violations(specs: Sequence[RunSpec], summary: Sequence[dict]) -> list[str]:
    """Runs whose estimator slope misses its ``expect_slope`` interval."""
    bad = []
    for s, row in zip(specs, summary):
        if s.expect_slope is None:
            continue
        lo, hi = s.expect_slope
        v = row["eta_slope"]
        if v is None or not (lo <= v <= hi):
            bad.append(f"{s.name}: eta slope {v} outside [{lo}, {hi}]")
    return bad


@dataclass
class ExperimentResult:
    output: Path
    runs: dict              # run name -> records
    summary: list
    figures: list
    violations: list


def run_experiment(plan: ExperimentPlan, jobs: Optional[int] = None,
                   log: Callable[[str], None] = print) -> ExperimentResult:
    out = Path(plan.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / ".write-test").write_text("")
        (out / ".write-test").unlink()
    except OSError as e:
        raise OSError(f"output directory {out} is not writable: {e}") from e
    log(f"plan {plan.name}: {len(plan.runs)} runs -> {out}")
    write_manifest(plan, out / "manifest.ini")
    jobs = plan.jobs if jobs is None else jobs
    snaps = [str(out / "snapshots" / s.name) if s.snapshot_every else None for s in plan.runs]
    if jobs > 1 and len(plan.runs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_execute, plan.runs, snaps))
    else:
        results = [_execute(s, d) for s, d in zip(plan.runs, snaps)]
    runs = {}
    for s, recs in zip(plan.runs, results):
        write_records_csv(recs, out / f"{s.name}.csv")
        runs[s.name] = recs
        log(f"  {s.name}: {len(recs)} steps, N = {recs[-1].n_elements}, eta = {recs[-1].eta:.4e}")
    return _finish(plan.runs, runs, out, log)


def _finish(specs, runs, out, log) -> ExperimentResult:
    summary = [summarize(s, runs[s.name]) for s in specs]
    write_summary_csv(summary, out / "summary.csv")
    figs = plot_figures(specs, runs, out)
    bad = threshold_violations(specs, summary)
    for b in bad:
        log(f"  threshold violated: {b}")
    return ExperimentResult(out, runs, summary, figs, bad)


def report_directory(path, log: Callable[[str], None] = print) -> ExperimentResult:
    """Re-fit and re-plot an existing output directory from its CSVs."""
    out = Path(path)
    mf = out / "manifest.ini"
    if not mf.exists():
        raise FileNotFoundError(f"{mf} not found; not an experiment directory")
    specs = read_manifest(mf)
    runs = {s.name: read_records_csv(out / f"{s.name}.csv") for s in specs}
    return _finish(specs, runs, out, log)


def compare_markings(specs: Sequence[RunSpec], runs: dict, n_min: float = FIT_MIN_ELEMENTS) -> list[dict]:
    """Pair runs differing only in marking strategy; report max relative eta deviation."""
    groups: dict = {}
    for s in specs:
        if s.uniform:
            continue
        key = (s.problem, s.kappa, s.theta, s.max_elements, s.max_steps, s.eta_tol)
        groups.setdefault(key, []).append(s)
    rows = []
    for key, members in groups.items():
        if len(members) < 2:
            raise ValueError(f"unpaired run {members[0].name}")
        ref = next((m for m in members if m.marking == "standard"), members[0])
        for m in members:
            if m is ref:
                continue
            rows.append(dict(reference=ref.name, other=m.name,
                             max_deviation=eta_deviation(runs[ref.name], runs[m.name], n_min)))
    return rows


def recompute_eta(snapshot_mesh, snapshot_values, problem_name: str, kappa: float) -> float:
    """Estimator of a dumped (mesh, vertex values) snapshot."""
    mesh = read_mesh(snapshot_mesh)
    vals = np.array([float(v) for v in Path(snapshot_values).read_text().split()])
    space = build_space(mesh)
    return estimate(space, get_problem(problem_name, kappa), space.from_vertex_values(vals)).total
