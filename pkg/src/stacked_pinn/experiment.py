"""Experiment configuration and the simulate / train / evaluate / sweep steps."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import godunov, metrics, stacked, trainer
from .godunov import BoundaryTrace, DensityField, GridSpec, Measurements
from .metrics import ErrorReport
from .pde import GreenshieldsFlux
from .stacked import StackedPinn
from .trainer import TrainConfig, TrainHistory

log = logging.getLogger(__name__)

FIELD_FILE = "field.txt"
DATA_FILE = "measurements.txt"
RESOLVED_FILE = "resolved_config.json"


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    """Piecewise-constant initial density with constant boundary densities.

    ``breakpoints`` are absolute positions in ``(0, L)``; ``values`` has one
    more entry. A ``None`` boundary takes the adjacent initial value.
    """

    breakpoints: list[float] = field(default_factory=lambda: [1 / 3, 2 / 3])
    values: list[float] = field(default_factory=lambda: [0.8, 0.2, 0.6])
    left: float | None = None
    right: float | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    v_f: float = 1.0

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = GridSpec(**self.grid)
        if len(self.values) != len(self.breakpoints) + 1:
            raise ConfigError("scenario needs one more value than breakpoints")
        if list(self.breakpoints) != sorted(self.breakpoints):
            raise ConfigError("breakpoints must be increasing")
        if any(not 0 < b < self.grid.length_L for b in self.breakpoints):
            raise ConfigError("breakpoints must lie inside the road")
        for v in [*self.values, self.left, self.right]:
            if v is not None and not 0 <= v <= 1:
                raise ConfigError(f"density {v} outside [0, 1]")
        if not self.v_f > 0:
            raise ConfigError("v_f must be positive")

    @property
    def flux(self) -> GreenshieldsFlux:
        return GreenshieldsFlux(self.v_f)

    def initial_profile(self) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, self.grid.x_centers, side="right")
        return np.asarray(self.values, dtype=np.float64)[idx]

    def boundary(self) -> BoundaryTrace:
        left = self.values[0] if self.left is None else self.left
        right = self.values[-1] if self.right is None else self.right
        return BoundaryTrace.constant(left, right)


@dataclass
class ExperimentConfig:
    scenario: Scenario = field(default_factory=Scenario)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: list[int] = field(default_factory=lambda: [0, 1, 3, 5])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    noise_sigma: float = 0.0
    data_seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if any(n < 0 for n in self.sweep) or not self.sweep:
            raise ConfigError("sweep must list non-negative block counts")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, doc: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(doc: dict[str, Any]) -> ExperimentConfig:
    doc = dict(doc)
    scen = dict(doc.pop("scenario", {}))
    if "grid" in scen:
        scen["grid"] = _build(GridSpec, scen["grid"], "scenario.grid")
    doc["scenario"] = _build(Scenario, scen, "scenario")
    doc["train"] = _build(TrainConfig, doc.pop("train", {}), "train")
    return _build(ExperimentConfig, doc, "config")


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(doc)


def write_resolved(cfg: ExperimentConfig, out: Path) -> None:
    (out / RESOLVED_FILE).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def simulate(cfg: ExperimentConfig) -> tuple[DensityField, Measurements]:
    sc = cfg.scenario
    field_ = godunov.simulate(sc.initial_profile(), sc.boundary(), sc.grid, sc.flux)
    data = godunov.sample_measurements(field_, cfg.noise_sigma, cfg.data_seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    godunov.write_field(field_, out / FIELD_FILE)
    godunov.write_measurements(data, out / DATA_FILE)
    write_resolved(cfg, out)
    return field_, data


def load_inputs(cfg: ExperimentConfig) -> tuple[DensityField, Measurements]:
    out = Path(cfg.out_dir)
    for name in (FIELD_FILE, DATA_FILE):
        if not (out / name).exists():
            raise FileNotFoundError(f"{out / name} missing; run `simulate` first")
    field_ = godunov.read_field(out / FIELD_FILE, cfg.scenario.grid.cfl)
    return field_, godunov.read_measurements(out / DATA_FILE)


def cell_name(n: int, seed: int) -> str:
    return f"n{n}_s{seed}"


@dataclass
class CellResult:
    n: int
    seed: int
    model: StackedPinn
    history: TrainHistory
    report: ErrorReport
    stages: list[tuple[int, float]]


def train_cell(cfg: ExperimentConfig, field_: DensityField, data: Measurements,
               n: int, seed: int) -> CellResult:
    """Train one model and write its checkpoint, history and report."""
    tc = dataclasses.replace(cfg.train, n_blocks=n, seed=seed)
    g = cfg.scenario.grid
    colloc = trainer.sample_collocation(g.time_T, g.length_L, tc.n_collocation, seed)
    model, history = trainer.train(tc, data, colloc, m=cfg.scenario.flux)
    out = Path(cfg.out_dir)
    name = cell_name(n, seed)
    stacked.save_checkpoint(model, out / f"checkpoint_{name}.json")
    trainer.write_history(history, n, out / f"history_{name}.csv")
    result = evaluate_model(field_, model, n, seed, history)
    write_report(result, out / f"report_{name}.txt")
    return result


def evaluate_model(field_: DensityField, model: StackedPinn, n: int, seed: int,
                   history: TrainHistory | None = None) -> CellResult:
    report = metrics.error_distribution(field_, model, model.n)
    stages = metrics.stage_error_table(field_, model)
    return CellResult(n, seed, model, history or TrainHistory(), report, stages)


def write_report(result: CellResult, path: Path) -> None:
    lines = [f"n = {result.n}", f"seed = {result.seed}",
             f"stop_reason = {result.history.stop_reason}",
             f"stop_iteration = {result.history.stop_iteration}"]
    text = "\n".join(lines) + "\n" + result.report.as_text()
    text += "".join(f"stage{i}_relative_l2 = {e!r}\n" for i, e in result.stages)
    path.write_text(text)


def evaluate_checkpoint(cfg: ExperimentConfig, n: int, seed: int) -> CellResult:
    field_, _ = load_inputs(cfg)
    path = Path(cfg.out_dir) / f"checkpoint_{cell_name(n, seed)}.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} missing; run `train` first")
    return evaluate_model(field_, stacked.load_checkpoint(path), n, seed)


def _write_grid(values: np.ndarray, path: Path) -> None:
    np.savetxt(path, values, fmt="%.17g", delimiter=",")


def sweep(cfg: ExperimentConfig) -> list[CellResult]:
    """Train every (n, seed) cell; write the summary tables and heatmap grids."""
    field_, data = load_inputs(cfg)
    out = Path(cfg.out_dir)
    maps = out / "heatmaps"
    maps.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    results = []
    T, X = field_.mesh()
    for n in cfg.sweep:
        for seed in cfg.seeds:
            res = train_cell(cfg, field_, data, n, seed)
            log.info("n=%d seed=%d relative_l2=%.4g", n, seed, res.report.relative_l2)
            name = cell_name(n, seed)
            pred = metrics.predict(field_, res.model, n)
            _write_grid(pred, maps / f"pred_{name}.csv")
            _write_grid(pred - field_.values, maps / f"error_{name}.csv")
            if n >= 1:
                _write_grid(stacked.block_contribution(res.model, 1, T, X), maps / f"block1_{name}.csv")
            results.append(res)

    table = ["n,seed,relative_l2,stop_iteration"]
    table += [f"{r.n},{r.seed},{r.report.relative_l2:.17g},{r.history.stop_iteration}" for r in results]
    (out / "table.csv").write_text("\n".join(table) + "\n")
    box = ["n,seed," + ErrorReport.csv_header()]
    box += [f"{r.n},{r.seed},{r.report.csv_row()}" for r in results]
    (out / "boxplot.csv").write_text("\n".join(box) + "\n")
    stages = ["n,seed,stage,relative_l2"]
    stages += [f"{r.n},{r.seed},{i},{e:.17g}" for r in results for i, e in r.stages]
    (out / "stage_errors.csv").write_text("\n".join(stages) + "\n")
    return results
