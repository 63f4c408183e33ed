"""
Configuration-driven experiments.

An ExperimentConfig names a construction, a projection policy, the
quantities to measure and the checks to certify. run_experiment writes a
trajectory CSV, a quantities JSON and a certification JSON into the output
directory; sweep repeats it over a parameter grid and aggregates the scalars.
"""
import copy
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.artifacts import to_jsonable, write_json, write_trajectory_csv
from app.config import settings
from app.errors import CertificationFailed, ConfigError, ProjLabError
from app.lab import certify as cert
from app.lab.constructions import (
    BakersParams,
    BlockConstruction,
    Construction,
    block_analytic_norms,
    block_decomposition,
    build_preset,
)
from app.lab.hilbert import family_from_spanning, family_hash, family_to_dict, membership_residual, vector_norm
from app.lab.iterates import Dictionary, Policy, Trajectory, greedy_run, run
from app.lab.quantities import (
    FULL_SPHERE,
    RESTRICTED,
    decomposition_value,
    dictionary_rho,
    friedrichs_number,
    greedy_direction,
    nu_decomposition,
    quantity_report,
    rho_estimate,
    s_norm,
)

Quantity = Literal[
    "friedrichs", "rho", "rho_star", "quantity_report", "snorm", "nu", "greedy_direction",
    "bounds", "rate_fit", "analytic_rate_fit", "dictionary_rho", "membership",
]
Certification = Literal[
    "step_identities", "bakers_agreement", "cyclic_rate_ledger", "remotest_geometric_bound",
    "remotest_sqrt_bound", "alternating_sqrt_bound", "s_monotonicity", "membership_preserved",
    "analytic_agreement", "witness_floor", "greedy_rate_bound",
]
RANDOMIZED = {"rho", "rho_star", "quantity_report", "dictionary_rho"}
STAGES = ("simulate", "measure", "certify")


# ========== CONFIG SCHEMA ==========

class InlineMember(BaseModel):
    model_config = ConfigDict(extra="forbid")
    basis: list[list[float]] = Field(description="spanning vectors of the member, one per row")


class InlineFamily(BaseModel):
    model_config = ConfigDict(extra="forbid")
    ambient_dim: int = Field(ge=1)
    members: list[InlineMember] = Field(min_length=2)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    construction: str | InlineFamily = Field(description="preset name or inline family")
    params: dict[str, Any] = Field(default_factory=dict, description="preset parameters")
    x0: list[float] | None = None
    dictionary: list[list[float]] | None = Field(None, description="explicit atoms for the greedy policy")
    policy: Literal["cyclic", "remotest", "explicit", "greedy"] = "remotest"
    schedule: list[int] | None = None
    weakness: list[float] = Field(default_factory=list)
    wga_choice: Literal["max", "first"] = "max"
    n_steps: int = Field(100, ge=1)
    stop_norm: float = Field(settings.STOP_NORM, ge=0)
    keep_iterates: bool = True
    quantities: list[Quantity] = Field(default_factory=list)
    certify: list[Certification] = Field(default_factory=list)
    out: str = "out"
    trajectory_file: str = "trajectory.csv"
    quantities_file: str = "quantities.json"
    certification_file: str = "certification.json"
    seed: int | None = Field(None, ge=0)
    restarts: int = Field(settings.SPHERE_RESTARTS, ge=1)
    fit_window: tuple[int, int] | None = None
    ledger_steps: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.seed is None and (RANDOMIZED.intersection(self.quantities) or self.construction == "random"):
            raise ValueError("seed is required when a randomized estimator or construction is requested")
        if (self.policy == "explicit") != (self.schedule is not None):
            raise ValueError("schedule is required for, and only for, the explicit policy")
        if self.dictionary is not None and self.policy != "greedy":
            raise ValueError("an explicit dictionary is only used by the greedy policy")
        if self.weakness and self.policy != "greedy":
            raise ValueError("weakness parameters are only used by the greedy policy")
        return self


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    template: dict[str, Any]
    grid: dict[str, list[Any]] = Field(min_length=1, description="dotted config path -> values")
    workers: int = Field(settings.SWEEP_WORKERS, ge=1)
    out: str = "sweep"

    @model_validator(mode="after")
    def _nonempty(self) -> "SweepConfig":
        empty = [k for k, v in self.grid.items() if not v]
        if empty:
            raise ValueError(f"grid axes without values: {empty}")
        return self


def _validate(model, data: dict):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def parse_config(data: dict) -> ExperimentConfig:
    return _validate(ExperimentConfig, data)


def load_json_config(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def schemas() -> dict:
    return {
        "experiment": ExperimentConfig.model_json_schema(),
        "sweep": SweepConfig.model_json_schema(),
    }


# ========== PIPELINE ==========

def build_construction(config: ExperimentConfig) -> Construction:
    try:
        if isinstance(config.construction, str):
            built = build_preset(config.construction, config.params, config.seed)
        else:
            inline = config.construction
            F = family_from_spanning([m.basis for m in inline.members], inline.ambient_dim)
            built = Construction(F, None, {"construction": "inline"})
    except (ProjLabError, TypeError, ValueError) as e:
        raise ConfigError(f"cannot build construction: {e}") from e
    if config.x0 is not None:
        if len(config.x0) != built.family.ambient_dim:
            raise ConfigError(f"x0 has length {len(config.x0)}, family lives in R^{built.family.ambient_dim}")
        built = Construction(built.family, np.asarray(config.x0, dtype=float), built.provenance,
                             built.params, built.extras)
    if built.x0 is None:
        raise ConfigError("x0 is required for this construction")
    return built


def simulate(config: ExperimentConfig, built: Construction) -> Trajectory:
    F = built.family
    if config.policy == "greedy":
        source = F if config.dictionary is None else Dictionary.from_vectors(config.dictionary)
        return greedy_run(source, built.x0, config.weakness, config.n_steps, config.stop_norm,
                          config.keep_iterates, config.wga_choice)
    policy = Policy(config.policy, tuple(config.schedule) if config.schedule else None)
    return run(F, built.x0, policy, config.n_steps, config.stop_norm, config.keep_iterates)


def _fit_norms(t: Trajectory) -> np.ndarray:
    return t.per_T_norms if t.policy == "cyclic" else t.norms


def _default_window(length: int) -> tuple[int, int]:
    return max(1, length // 10), max(10, length - 1)


def measure(config: ExperimentConfig, built: Construction, t: Trajectory) -> dict:
    F, x0 = built.family, built.x0
    seed = config.seed
    out: dict[str, Any] = {}
    for name in config.quantities:
        if name == "friedrichs":
            out[name] = friedrichs_number(F)
        elif name == "rho":
            out[name] = rho_estimate(F, FULL_SPHERE, config.restarts, seed)
        elif name == "rho_star":
            out[name] = rho_estimate(F, RESTRICTED, config.restarts, seed)
        elif name == "quantity_report":
            out[name] = quantity_report(F, config.restarts, seed)
        elif name == "snorm":
            out[name] = s_norm(F, x0)
        elif name == "nu":
            nu = nu_decomposition(F, x0)
            out[name] = {"nu": nu.nu, "image_norm": vector_norm(nu.image)}
        elif name == "greedy_direction":
            g = greedy_direction(F, x0)
            out[name] = {"g": g.g, "rho_x": g.rho_x, "achieving_index": g.achieving_index}
        elif name == "bounds":
            out[name] = cert.bound_report(F, t)
        elif name == "rate_fit":
            norms = _fit_norms(t)
            out[name] = cert.rate_fit(norms, config.fit_window or _default_window(len(norms)))
        elif name == "analytic_rate_fit":
            if not isinstance(built.params, BlockConstruction):
                raise ConfigError("analytic_rate_fit needs the slow_blocks construction")
            lo, hi = config.fit_window or (100, 10_000)
            ns = np.unique(np.geomspace(lo, hi, 200).astype(int))
            out[name] = cert.rate_fit(block_analytic_norms(built.params, ns), (lo, hi), ns)
        elif name == "dictionary_rho":
            if config.dictionary is None:
                raise ConfigError("dictionary_rho needs an explicit dictionary")
            out[name] = dictionary_rho(Dictionary.from_vectors(config.dictionary), config.restarts, seed)
        elif name == "membership":
            out[name] = {"residual": membership_residual(F, x0)}
    return out


def _block_s_ub(built: Construction, x) -> float | None:
    if not isinstance(built.params, BlockConstruction):
        return None
    return decomposition_value(built.family, x, block_decomposition(built.params, x))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def certify(config: ExperimentConfig, built: Construction, t: Trajectory) -> cert.CertificationReport:
    F, x0 = built.family, built.x0
    explicit_dictionary = config.policy == "greedy" and config.dictionary is not None
    report = cert.CertificationReport()
    for name in config.certify:
        if name == "step_identities":
            report.extend(cert.step_identities(t, None if explicit_dictionary else F))
        elif name == "bakers_agreement":
            _require(isinstance(built.params, BakersParams), "bakers_agreement needs the non_cyclic construction")
            _require(config.policy == "remotest" and t.iterates is not None,
                     "bakers_agreement needs a remotest run with iterates")
            report.extend(cert.bakers_agreement(t, built.params))
        elif name == "cyclic_rate_ledger":
            report.extend(cert.cyclic_rate_ledger(F, x0, config.ledger_steps).checks)
        elif name == "remotest_geometric_bound":
            _require(config.policy == "remotest", "remotest_geometric_bound needs a remotest run")
            report.extend([cert.remotest_geometric_bound(t, F)])
        elif name == "remotest_sqrt_bound":
            _require(config.policy == "remotest" and F.K == 2, "remotest_sqrt_bound needs a remotest run with K = 2")
            x1 = t.iterates[1] if t.iterates is not None else run(F, x0, Policy.remotest(), 1).iterates[1]
            report.extend([cert.remotest_sqrt_bound(t, F, _block_s_ub(built, x1))])
        elif name == "alternating_sqrt_bound":
            _require(F.K == 2, "alternating_sqrt_bound needs K = 2")
            p1, _ = F.split(0, x0)
            report.extend([cert.alternating_sqrt_bound(F, x0, config.n_steps, _block_s_ub(built, p1))])
        elif name == "s_monotonicity":
            _require(F.K == 2 and t.iterates is not None, "s_monotonicity needs K = 2 and iterates")
            report.extend([cert.s_monotonicity(t, F)])
        elif name == "membership_preserved":
            _require(t.iterates is not None, "membership_preserved needs iterates")
            report.extend([cert.membership_preserved(t, F)])
        elif name == "analytic_agreement":
            _require(isinstance(built.params, BlockConstruction) and config.policy == "cyclic",
                     "analytic_agreement needs a cyclic run on the slow_blocks construction")
            report.extend([cert.analytic_agreement(built.params, t)])
        elif name == "witness_floor":
            _require("target" in built.extras, "witness_floor needs the slow_witness construction")
            report.extend([cert.witness_floor(t, built.extras["target"])])
        elif name == "greedy_rate_bound":
            _require(explicit_dictionary, "greedy_rate_bound needs an explicit dictionary")
            estimate = dictionary_rho(Dictionary.from_vectors(config.dictionary), config.restarts, config.seed)
            _require(estimate.lower_bound is not None, "greedy_rate_bound needs a certified rho(D) lower bound (d = 2)")
            report.extend([cert.greedy_rate_bound(t, estimate.lower_bound, config.weakness)])
    return report


# ========== RUN ==========

@dataclass
class ExperimentResult:
    trajectory: Trajectory
    quantities: dict
    certification: cert.CertificationReport | None
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.certification is None or self.certification.passed


def run_experiment(config: ExperimentConfig, stages: tuple[str, ...] = STAGES,
                   raise_on_failure: bool = True) -> ExperimentResult:
    """Simulate, measure and certify one configuration, writing its artifacts."""
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}")
    built = build_construction(config)
    out = Path(config.out)
    logger.info(f"🚀 experiment {built.provenance.get('construction')} / {config.policy}, {config.n_steps} steps")

    t = simulate(config, built)
    result = ExperimentResult(t, {}, None)
    result.paths["trajectory"] = write_trajectory_csv(out / config.trajectory_file, t)

    if "measure" in stages:
        result.quantities = measure(config, built, t)
        payload = {
            "config": config.model_dump(mode="json"),
            "family": {
                "family_hash": family_hash(built.family),
                "K": built.family.K,
                "ambient_dim": built.family.ambient_dim,
                "provenance": built.provenance,
            },
            "run": t.describe(),
            "quantities": result.quantities,
            "tolerances": settings.tolerances(),
        }
        result.paths["quantities"] = write_json(out / config.quantities_file, payload)

    if "certify" in stages and config.certify:
        result.certification = certify(config, built, t)
        payload = {
            "family_hash": family_hash(built.family),
            "run": t.describe(),
            **result.certification.to_dict(),
            "tolerances": settings.tolerances(),
        }
        result.paths["certification"] = write_json(out / config.certification_file, payload)
        if result.certification.passed:
            logger.info(f"✅ all {len(result.certification.checks)} checks passed")
        else:
            logger.error(f"❌ failed checks: {', '.join(result.certification.failed)}")

    logger.info(f"📊 outputs in {out}")
    if raise_on_failure and not result.passed:
        raise CertificationFailed(result.certification.failed)
    return result


def write_family(config: ExperimentConfig, path: Path) -> Path:
    built = build_construction(config)
    payload = family_to_dict(built.family, built.provenance)
    payload["x0"] = built.x0
    return write_json(path, payload)


# ========== SWEEP ==========

def _set_path(data: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"grid path {dotted!r} crosses a non-object value")
    node[keys[-1]] = value


def _flatten(prefix: str, value: Any, out: dict) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(value, (bool, int, float, np.floating, np.integer)):
        out[prefix] = value


@dataclass
class SweepResult:
    cells: list[dict]
    path: Path

    @property
    def complete(self) -> bool:
        return all(c["status"] != "error" for c in self.cells)


def sweep_cells(config: SweepConfig) -> list[tuple[dict, ExperimentConfig]]:
    keys = sorted(config.grid)
    out = Path(config.out)
    cells = []
    for i, values in enumerate(itertools.product(*(config.grid[k] for k in keys))):
        data = copy.deepcopy(config.template)
        for key, value in zip(keys, values):
            _set_path(data, key, value)
        data["out"] = str(out / f"cell_{i:03d}")
        cells.append((dict(zip(keys, values)), parse_config(data)))
    return cells


def _run_cell(cell: ExperimentConfig) -> dict:
    try:
        result = run_experiment(cell, raise_on_failure=False)
    except ProjLabError as e:
        logger.warning(f"⚠️ sweep cell {cell.out} failed: {e}")
        return {"status": "error", "error": str(e)}
    except Exception as e:
        logger.error(f"❌ sweep cell {cell.out} crashed: {e!r}")
        return {"status": "error", "error": repr(e)}
    summary: dict = {"final_norm": float(result.trajectory.norms[-1]), "n_steps": result.trajectory.n_steps}
    _flatten("quantities", to_jsonable(result.quantities), summary)
    if result.certification is not None:
        summary["passed"] = result.certification.passed
    return {"status": "ok" if result.passed else "certification_failed", "summary": summary}


def sweep(config: SweepConfig) -> SweepResult:
    """Run every grid cell (concurrently) and aggregate scalar outputs into sweep.json."""
    cells = sweep_cells(config)
    logger.info(f"🚀 sweep over {len(cells)} cells with {config.workers} workers")
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        outcomes = list(pool.map(_run_cell, [c for _, c in cells]))
    rows = [{"index": i, "params": params, **outcome} for i, ((params, _), outcome) in enumerate(zip(cells, outcomes))]
    path = write_json(Path(config.out) / "sweep.json", {"grid": config.grid, "cells": rows,
                                                        "complete": all(r["status"] != "error" for r in rows)})
    logger.info(f"📊 sweep table written to {path}")
    return SweepResult(rows, path)


def rho_k_search(K: int, d: int, families: int, seed: int = 0, out: str = "rho_k_search",
                 workers: int | None = None) -> dict:
    """Largest rho estimate over random K-member families in R^d."""
    config = SweepConfig(
        template={"construction": "random", "params": {"d": d, "K": K}, "policy": "remotest",
                  "n_steps": 1, "keep_iterates": False, "quantities": ["rho"]},
        grid={"seed": [seed + i for i in range(families)]},
        workers=workers or settings.SWEEP_WORKERS,
        out=out,
    )
    result = sweep(config)
    values = [(c["summary"]["quantities.rho.value"], c["index"]) for c in result.cells if c["status"] == "ok"]
    best, index = max(values) if values else (None, None)
    logger.info(f"📊 rho_{K} search in R^{d}: max {best} over {len(values)} families")
    return {"K": K, "d": d, "families": len(values), "max_rho": best, "argmax_cell": index}
