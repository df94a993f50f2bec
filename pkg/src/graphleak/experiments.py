"""Config-driven sweeps: grid expansion, per-cell pipelines and CSV output.

Every random stage of a cell draws from ``stream(master_seed, cell_key,
stage, replicate)`` where ``cell_key`` is built from the cell's own
coordinates, so adding or removing cells never changes another cell's
numbers. See ``docs/config.md`` for the config file grammar.
"""

from __future__ import annotations

import csv
import functools
import itertools
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attack import (
    AttackError,
    SimilarityKind,
    auroc,
    best_threshold,
    feature_baseline,
    feature_homophily,
    label_homophily,
    score_pairs,
)
from .defense import nag_bound
from .encoders import Arch, InitScheme, Mode, NagConfig, encode, init_weights, operator_norm
from .generators import ErSpec, SbmSpec, gen_er, gen_features, gen_inhomogeneous, gen_sbm
from .graph import DatasetBundle, NodeSubset, induced_subgraph, load_bundle
from .io import load_matrix
from .rng import stream
from .training import Scheme, TrainConfig, train

log = logging.getLogger(__name__)

CSV_HEADER = (
    "gen,n,K,p,q,d,L,arch,init,scheme,sigma,sim,trained,target,seed,auroc,best_err,fpr,fnr,"
    "acc_noisy,acc_clean,bound,opnorm_sq,h_label,h_feature,fs_auroc,ms_elapsed,status"
).split(",")
SUMMARY_METRICS = ("auroc", "best_err", "fpr", "fnr", "acc_noisy", "acc_clean", "bound", "fs_auroc")
NA = "NA"

GENERATORS = ("ER", "SBM", "INHOM", "BUNDLE")
TARGETS = ("AUTO", "FULL_GRAPH", "TEST_SUBGRAPH")
MODES = ("AUTO", "STANDARD", "NAG")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    gen: str
    n: int | None
    K: int | None
    p: float | None
    q: float | None
    d: int
    L: int
    arch: str
    init: str
    scheme: str
    sigma: float
    sim: str
    trained: bool
    target: str
    mode: str = "AUTO"

    def key(self) -> tuple:
        return tuple(repr(v) for v in asdict(self).values())


@dataclass(frozen=True)
class ExperimentConfig:
    gen: str = "ER"
    path: str | None = None  # BUNDLE directory or INHOM matrix file
    n: tuple = (100,)
    K: tuple = (1,)
    p: tuple = ("log",)  # "log" means log(n) / n
    q: tuple = (0.0,)
    d: tuple = (2048,)
    L: tuple = (1,)
    arch: tuple = ("LINEAR",)
    init: tuple = ("IDENTITY",)
    scheme: tuple = ("UNCONSTRAINED",)
    sigma: tuple = (0.0,)
    sim: tuple = ("COS",)
    trained: tuple = (False,)
    target: tuple = ("AUTO",)
    mode: tuple = ("AUTO",)
    seeds: int = 5
    master_seed: int = 0
    epochs: int = 1000
    learning_rate: float = 1e-3
    workers: int = 1
    output: str = "results.csv"

    def __post_init__(self):
        if self.gen not in GENERATORS:
            raise ConfigError(f"gen must be one of {GENERATORS}, got {self.gen!r}")
        if self.gen in ("BUNDLE", "INHOM") and not self.path:
            raise ConfigError(f"gen={self.gen} needs a path")
        for f in fields(self):
            if f.type == "tuple" and len(getattr(self, f.name)) == 0:
                raise ConfigError(f"grid axis {f.name!r} is empty")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        for t in self.target:
            if t not in TARGETS:
                raise ConfigError(f"target must be one of {TARGETS}, got {t!r}")
        for m in self.mode:
            if m not in MODES:
                raise ConfigError(f"mode must be one of {MODES}, got {m!r}")
        for a in self.arch:
            Arch.parse(a)
        for s in self.init:
            InitScheme(s)
        for s in self.scheme:
            Scheme(s)
        for s in self.sim:
            SimilarityKind(s)

    def cells(self) -> list[Cell]:
        if self.gen == "ER":
            struct = [(n, None, p, None) for n, p in itertools.product(self.n, self.p)]
        elif self.gen == "SBM":
            struct = list(itertools.product(self.n, self.K, self.p, self.q))
        else:
            struct = [(None, None, None, None)]
        out = []
        for (n, K, p, q), d, L, arch, init, scheme, sigma, sim, trained, target, mode in itertools.product(
            struct, self.d, self.L, self.arch, self.init, self.scheme, self.sigma,
            self.sim, self.trained, self.target, self.mode,
        ):
            if p == "log":
                p = math.log(n) / n
            out.append(Cell(
                self.gen, n, K, None if p is None else float(p), None if q is None else float(q),
                int(d), int(L), Arch.parse(arch).value, init, scheme, float(sigma), sim,
                bool(trained), target, mode,
            ))
        return out


_LIST_KEYS = {f.name for f in fields(ExperimentConfig) if f.type == "tuple"}
_UPPER_KEYS = {"gen", "arch", "init", "scheme", "sim", "target", "mode"}


def config_from_dict(raw: dict, base: Path | None = None) -> ExperimentConfig:
    flat = {}
    for section, body in raw.items():
        items = body.items() if isinstance(body, dict) else [(section, body)]
        for k, v in items:
            if k in flat:
                raise ConfigError(f"key {k!r} given twice")
            flat[k] = v
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(flat) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k, v in list(flat.items()):
        if k in _LIST_KEYS:
            v = tuple(v) if isinstance(v, list) else (v,)
            if k in _UPPER_KEYS:
                v = tuple(x.upper() if isinstance(x, str) else x for x in v)
            flat[k] = v
        elif k in _UPPER_KEYS and isinstance(v, str):
            flat[k] = v.upper()
    if base is not None:
        for k in ("path", "output"):
            if k in flat and not Path(flat[k]).is_absolute():
                flat[k] = str(base / flat[k])
    return ExperimentConfig(**flat)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, path.parent)


@dataclass
class ExperimentRow:
    cell: Cell
    seed: int
    auroc: float | None = None
    best_err: float | None = None
    fpr: float | None = None
    fnr: float | None = None
    acc_noisy: float | None = None
    acc_clean: float | None = None
    bound: float | None = None
    opnorm_sq: float | None = None
    h_label: float | None = None
    h_feature: float | None = None
    fs_auroc: float | None = None
    ms_elapsed: float = 0.0
    status: str = "ok"

    def values(self) -> dict:
        c = self.cell
        out = {
            "gen": c.gen, "n": c.n, "K": c.K, "p": c.p, "q": c.q, "d": c.d, "L": c.L,
            "arch": c.arch, "init": c.init, "scheme": c.scheme, "sigma": c.sigma, "sim": c.sim,
            "trained": int(c.trained), "target": c.target, "seed": self.seed,
        }
        for name in CSV_HEADER[15:]:
            out[name] = getattr(self, name)
        return out

    def csv_fields(self) -> list[str]:
        return [_fmt(self.values()[h]) for h in CSV_HEADER]


def _fmt(v) -> str:
    if v is None:
        return NA
    if isinstance(v, float):
        return NA if math.isnan(v) else repr(v)
    return str(v)


@functools.lru_cache(maxsize=4)
def _cached_bundle(path: str) -> DatasetBundle:
    return load_bundle(path)


def _alternating_split(n: int) -> dict[str, NodeSubset]:
    ids = np.arange(n)
    return {"train": NodeSubset.of(ids[0::2]), "test": NodeSubset.of(ids[1::2])}


def _build_data(cell: Cell, config: ExperimentConfig, rs) -> DatasetBundle:
    if cell.gen == "BUNDLE":
        return _cached_bundle(config.path)
    if cell.gen == "ER":
        g = gen_er(ErSpec(cell.n, cell.p), rs("graph"))
        labels = np.zeros(cell.n, dtype=np.int64)
    elif cell.gen == "SBM":
        g, labels = gen_sbm(SbmSpec(cell.n, cell.K, cell.p, cell.q), rs("graph"))
    else:
        P = load_matrix(config.path)
        g = gen_inhomogeneous(P, rs("graph"))
        labels = np.zeros(g.node_count, dtype=np.int64)
    X = gen_features(g.node_count, cell.d, rs("features"))
    return DatasetBundle(g, X, labels, _alternating_split(g.node_count))


def _resolve_target(cell: Cell) -> str:
    if cell.target != "AUTO":
        return cell.target
    return "TEST_SUBGRAPH" if cell.trained and cell.gen == "BUNDLE" else "FULL_GRAPH"


def _resolve_mode(cell: Cell, arch: Arch) -> Mode:
    if arch is Arch.LINEAR:
        return Mode.STANDARD
    if cell.mode != "AUTO":
        return Mode(cell.mode)
    return Mode.NAG if (cell.trained or cell.sigma > 0) else Mode.STANDARD


def run_cell(cell: Cell, seed: int, config: ExperimentConfig) -> ExperimentRow:
    """Generate or load, optionally train, encode, attack and measure."""
    start = time.perf_counter()
    row = ExperimentRow(cell, seed)
    key = cell.key()

    def rs(stage):
        return (config.master_seed, key, stage, seed)

    try:
        arch = Arch.parse(cell.arch)
        bundle = _build_data(cell, config, rs)
        mode = _resolve_mode(cell, arch)
        cfg = NagConfig() if arch is Arch.LINEAR else NagConfig(sigma=cell.sigma, mode=mode)
        if cell.trained:
            if cell.gen in ("ER", "INHOM"):
                raise ValueError(f"training needs class labels; gen={cell.gen} has none")
            tc = TrainConfig(
                epochs=config.epochs, learning_rate=config.learning_rate, scheme=Scheme(cell.scheme),
                sigma=cell.sigma, seed=int(stream(rs("train")).integers(2**62)), init=InitScheme(cell.init),
                mode=mode,
            )
            result = train(bundle, arch, cell.d, cell.L, tc)
            weights = result.weights
            row.acc_noisy, row.acc_clean = result.acc_noisy, result.acc_clean
        else:
            weights = init_weights(cell.d, cell.L, cell.init, rs("init"), arch, d_in=bundle.d)
        H = encode(bundle.graph, bundle.features, weights, arch, cfg, rs("encode-noise"))

        target = _resolve_target(cell)
        g, X, labels = bundle.graph, bundle.features, bundle.labels
        if target == "TEST_SUBGRAPH":
            if "test" not in bundle.masks:
                raise ValueError("TEST_SUBGRAPH target needs a test mask")
            ids = bundle.masks["test"].ids
            g, _ = induced_subgraph(g, bundle.masks["test"])
            H, X, labels = H[ids], X[ids], labels[ids]

        scores = score_pairs(H, g, SimilarityKind(cell.sim))
        row.auroc = auroc(scores)
        _, m = best_threshold(scores)
        row.best_err, row.fpr, row.fnr = m.err, m.fpr, m.fnr
        row.fs_auroc = auroc(feature_baseline(X, g))
        row.opnorm_sq = float(sum(operator_norm(W) ** 2 for W in weights.layers))
        if arch is not Arch.LINEAR and mode is Mode.NAG:
            row.bound = nag_bound(weights, cell.sigma, arch).bound
        if g.num_edges:
            row.h_feature = feature_homophily(g, X)
            if cell.gen in ("SBM", "BUNDLE"):
                row.h_label = label_homophily(g, labels)
    except (ValueError, ArithmeticError, OSError, AttackError) as exc:
        log.warning("cell %s seed %d failed: %s", cell, seed, exc)
        row = ExperimentRow(cell, seed, status=f"error: {exc}")
    row.ms_elapsed = round((time.perf_counter() - start) * 1000.0, 1)
    return row


def _run_job(job):
    cell, seed, config = job
    return run_cell(cell, seed, config)


@dataclass
class SweepResult:
    rows: list[ExperimentRow]
    summary: list[dict] = field(default_factory=list)
    csv_path: Path | None = None


def summarize(rows: list[ExperimentRow]) -> list[dict]:
    """Per-cell mean and sample std over seeds, skipping error rows."""
    groups: dict[Cell, list[ExperimentRow]] = {}
    for r in rows:
        groups.setdefault(r.cell, []).append(r)
    out = []
    for cell, rs in groups.items():
        ok = [r for r in rs if r.status == "ok"]
        coords = ExperimentRow(cell, 0).values()
        entry = {h: coords[h] for h in CSV_HEADER[:14]}
        entry["runs"] = len(ok)
        entry["errors"] = len(rs) - len(ok)
        for m in SUMMARY_METRICS:
            vals = [getattr(r, m) for r in ok if getattr(r, m) is not None]
            entry[f"{m}_mean"] = float(np.mean(vals)) if vals else None
            entry[f"{m}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if vals else None)
        out.append(entry)
    return out


def _write_csv(path: Path, header, lines) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(lines)


def run_sweep(config: ExperimentConfig, output: str | Path | None = None, workers: int | None = None) -> SweepResult:
    """Run every cell and seed; rows are written in grid order."""
    out = Path(output if output is not None else config.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.exists() and not out.is_file():
        raise OSError(f"output path is not a file: {out}")
    jobs = [(cell, s, config) for cell in config.cells() for s in range(config.seeds)]
    workers = config.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    _write_csv(out, CSV_HEADER, [r.csv_fields() for r in rows])
    summary = summarize(rows)
    if summary:
        cols = list(summary[0])
        _write_csv(out.with_suffix(".summary.csv"), cols, [[_fmt(e[c]) for c in cols] for e in summary])
    return SweepResult(rows, summary, out)
