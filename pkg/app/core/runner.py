"""Time loop, artifact output and post-run checks for one configured run."""
import datetime as dt
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

from app.core.config import (RunConfig, ValidatedConfig, apply_environment, config_to_text,
                             parse_config_values, validate_config, with_overrides)
from app.core.errors import AcceptanceFailure, ConfigError
from app.core.phase import ParticleEnsemble
from app.core.presets import (CheckContext, CheckResult, ExperimentPreset, checks_for,
                              get_preset, run_checks)
from app.core.snapshots import write_ensemble, write_field
from app.core.stores import HistoryStore
from app.core.utils import APP_VERSION, format_bytes, sha256_file
from app.physics.diagnostics import DiagnosticsRecorder, bootstrap_monitor
from app.physics.egc import EgcQuery, verify_egc
from app.physics.fields import PrescribedField, VelocitySampler, ZeroField
from app.physics.fluid import (FieldHistory, FluidField, GridFieldSampler, TruncationMonitor,
                               build_brinkman, decaying_force_experiment, ns_step)
from app.physics.kinetic import InitialDataSpec, advance_ensemble, deposit_moments, sample_initial
from app.physics.series import DiagnosticsSeries

logger = logging.getLogger(__name__)

ProgressFn = Callable[[int, int], None]

HISTORY_BYTES_CAP = 256 * 1024 * 1024
EGC_MONITOR_SAMPLES = 1000
SERIES_FILE = "series.csv"
MANIFEST_FILE = "manifest.json"


@dataclass
class RunResult:
    out_dir: Path
    series: DiagnosticsSeries
    manifest: Dict
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed_checks(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]


def resolve_config(preset: Optional[str] = None, config_path: Optional[Union[str, Path]] = None) -> tuple:
    """Preset overrides first, then the explicit keys of the config file, then the environment."""
    chosen: Optional[ExperimentPreset] = get_preset(preset) if preset else None
    cfg = chosen.config() if chosen else RunConfig()
    if config_path is not None:
        p = Path(config_path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"Cannot read config {p}: {exc}") from exc
        values = parse_config_values(text)
        if not values and chosen is None:
            raise ConfigError(f"Config {p} is empty.")
        cfg = with_overrides(cfg, **values)
    elif chosen is None:
        raise ConfigError("Nothing to run: give a preset or a config file.")
    return apply_environment(cfg), chosen


class Simulation:
    """Owns the state of one run so a failure can still flush what was computed."""

    def __init__(self, cfg: ValidatedConfig) -> None:
        self.cfg = cfg
        self.spec: Optional[InitialDataSpec] = None
        self.ensemble: Optional[ParticleEnsemble] = None
        self.fluid: Optional[FluidField] = None
        self.sampler: VelocitySampler = ZeroField()
        self.history: Optional[FieldHistory] = None
        self.recorder = DiagnosticsRecorder(cfg.g, cfg.grid, cfg.domain, cfg.viscosity, cfg.threads,
                                            cfg.deterministic, cfg.weighted_d2_norms)
        self.truncation = TruncationMonitor(cfg.domain)
        self.series: DiagnosticsSeries = self.recorder.series
        self.snapshots: List[Path] = []
        self.time = 0.0
        self.steps_done = 0

    # --- setup -------------------------------------------------------------

    def setup(self) -> None:
        cfg = self.cfg
        if cfg.mode == "fluid_only":
            return
        self.spec = InitialDataSpec.from_config(cfg)
        self.ensemble = sample_initial(self.spec, cfg.particle_count, cfg.rng_seed)

        if cfg.mode == "prescribed_field":
            if cfg.field_budget is not None:
                self.sampler = PrescribedField.for_budget(cfg.field_profile, cfg.field_budget, cfg.t_end,
                                                          decay=cfg.field_decay, Lx=cfg.Lx, Ly=cfg.Ly)
            else:
                self.sampler = PrescribedField(cfg.field_profile, cfg.field_amplitude, cfg.field_decay,
                                               cfg.Lx, cfg.Ly)
        elif cfg.mode == "coupled":
            self.fluid = FluidField.shear_mode(cfg.u0_amplitude, cfg.grid, cfg.domain)
            per_field = 8 * 4 * (cfg.grid[0] * cfg.grid[1] * (cfg.grid[2] + 1))
            capacity = max(2, min(cfg.steps + 1, HISTORY_BYTES_CAP // per_field))
            self.history = FieldHistory(capacity)
            self.history.push(self.fluid)

        u_sup, grad_sup = self._sup_norms(0.0)
        h1_sq = 0.0
        if self.fluid is not None:
            h1_sq = self.fluid.l2_norm_sq() + self.fluid.grad_l2_sq()
        self.recorder.start(0.0, u_sup, grad_sup, 0.0, initial_h1_sq=h1_sq)
        logger.info("Run set up: mode=%s family=%s N=%d grid=%s dt=%g t_end=%g",
                    cfg.mode, cfg.family, cfg.particle_count, cfg.grid, cfg.dt, cfg.t_end)

    def _sup_norms(self, t: float):
        if self.fluid is not None:
            return self.fluid.sup_norm(), self.fluid.grad_sup_norm()
        return self.sampler.sup_norm(t), self.sampler.grad_sup_norm(t)

    # --- stepping ----------------------------------------------------------

    def step(self) -> None:
        cfg = self.cfg
        t = self.time
        tol_exit = cfg.tolerances["exit"]
        force_l2 = 0.0
        if cfg.mode == "coupled":
            moments = deposit_moments(self.ensemble, cfg.grid, cfg.domain, threads=cfg.threads,
                                      deterministic=cfg.deterministic)
            force = build_brinkman(moments, self.fluid)
            force_l2 = force.lp_norm(2.0)
            advance_ensemble(self.ensemble, t, cfg.dt, GridFieldSampler(self.fluid), cfg.g, cfg.domain,
                             tol_exit, cfg.threads, cfg.deterministic)
            self.fluid = ns_step(self.fluid, force, cfg.dt, cfg.viscosity, cfg.tolerances["div"])
            self.history.push(self.fluid)
        else:
            advance_ensemble(self.ensemble, t, cfg.dt, self.sampler, cfg.g, cfg.domain,
                             tol_exit, cfg.threads, cfg.deterministic)
        self.steps_done += 1
        self.time = self.steps_done * cfg.dt
        u_sup, grad_sup = self._sup_norms(self.time)
        self.recorder.track(self.time, u_sup, grad_sup, force_l2)
        if cfg.mode == "prescribed_field":
            self.recorder.set_budgets(self.sampler.budget(0.0, self.time, "u"),
                                      self.sampler.budget(0.0, self.time, "grad"))

    def sample(self) -> Dict[str, float]:
        cfg = self.cfg
        if cfg.mode == "prescribed_field":
            fluid = FluidField.from_sampler(self.sampler, self.time, cfg.grid, cfg.domain)
            u_sampler: Optional[VelocitySampler] = self.sampler
        else:
            fluid = self.fluid
            u_sampler = None
        row = self.recorder.sample(self.ensemble, fluid, self.time, u_sampler)
        self.truncation.check(self.time, fluid, self.ensemble)
        return row

    def snapshot(self, out_dir: Path, tag: str) -> None:
        snap_dir = out_dir / "snapshots"
        if self.ensemble is not None:
            self.snapshots.append(write_ensemble(snap_dir / f"ensemble_{tag}.vnse", self.ensemble))
        if self.fluid is not None:
            self.snapshots.append(write_field(snap_dir / f"field_{tag}.vnsf", self.fluid))

    def run(self, out_dir: Path, progress: Optional[ProgressFn] = None) -> DiagnosticsSeries:
        cfg = self.cfg
        if cfg.mode == "fluid_only":
            self.series = decaying_force_experiment(
                cfg.force_C, cfg.force_exponent, cfg.t_end, cfg.grid, cfg.domain, cfg.dt, cfg.viscosity,
                cfg.u0_amplitude, cfg.diag_every, tol_div=cfg.tolerances["div"],
            )
            self.time = cfg.t_end
            self.steps_done = cfg.steps
            if progress:
                progress(cfg.steps, cfg.steps)
            return self.series

        self.setup()
        self.sample()
        total = cfg.steps
        last_absorbed = 0
        for n in range(total):
            before = self.time
            self.step()
            due = (n + 1) % cfg.diag_every == 0 or n + 1 == total or before < cfg.T0 <= self.time
            if due:
                self.sample()
                dead = len(self.ensemble) - self.ensemble.alive_count
                logger.debug("t=%.4g: %d absorbed since last sample", self.time, dead - last_absorbed)
                last_absorbed = dead
            if cfg.snapshot_every and (n + 1) % cfg.snapshot_every == 0 and n + 1 < total:
                self.snapshot(out_dir, f"{n + 1:06d}")
            if progress:
                progress(n + 1, total)
        self.snapshot(out_dir, "final")
        return self.series

    # --- monitors ----------------------------------------------------------

    def monitors(self) -> Dict:
        cfg = self.cfg
        out: Dict = {"truncation_flagged_steps": self.truncation.flagged_steps}
        if len(self.series) and "budget_grad" in self.series and cfg.mode != "fluid_only":
            report = bootstrap_monitor(self.series, cfg.delta0, cfg.T0)
            out["bootstrap"] = {"holds": report.holds, "first_violation": report.first_violation,
                                "margin_grad": report.margin_grad, "margin_u": report.margin_u}
            lhs = float(self.series["strong_time_lhs"][-1])
            out["strong_time_lhs"] = lhs
            if cfg.strong_time_threshold is not None:
                out["strong_time_small"] = lhs < cfg.strong_time_threshold
                if lhs >= cfg.strong_time_threshold:
                    logger.warning("Strong-time quantity %.4g reaches the threshold %.4g", lhs,
                                   cfg.strong_time_threshold)
        if cfg.mode == "coupled" and cfg.family == "box" and self.history is not None:
            lo, hi = self.history.window
            if lo <= 0.0 and hi >= cfg.t_end - 1e-12:
                report = verify_egc(EgcQuery(cfg.box_L, cfg.box_R, cfg.t_end), "coupled",
                                    self.history.sampler(), EGC_MONITOR_SAMPLES, cfg.rng_seed, cfg.g, cfg.dt,
                                    cfg.Lx, cfg.Ly, cfg.tolerances["exit"], cfg.threads)
                out["egc"] = {"satisfied": report.satisfied, "max_exit_time": report.max_exit_time,
                              "budget_used": report.budget_used}
        return out


def _outputs(out_dir: Path, paths: List[Path]) -> List[Dict]:
    items = []
    for p in paths:
        if p.exists():
            items.append({"path": p.relative_to(out_dir).as_posix(), "sha256": sha256_file(p),
                          "bytes": p.stat().st_size})
    return items


def _write_manifest(out_dir: Path, manifest: Dict) -> Path:
    path = out_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path


def run(config: Union[RunConfig, ValidatedConfig], out_dir: Union[str, Path],
        preset: Optional[ExperimentPreset] = None, history: Optional[HistoryStore] = None,
        progress: Optional[ProgressFn] = None, enforce_checks: bool = True) -> RunResult:
    """Execute one run and write series.csv, snapshots and manifest.json into out_dir.

    On any error the partial series is flushed with ``truncated`` set in the
    manifest and the error is re-raised. Failed checks raise AcceptanceFailure
    after every output is written, unless ``enforce_checks`` is off.
    """
    cfg = validate_config(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim = Simulation(cfg)
    started = dt.datetime.now(dt.timezone.utc)
    clock = time.perf_counter()
    manifest: Dict = {
        "version": APP_VERSION,
        "preset": preset.name if preset else None,
        "config": config_to_text(cfg.config),
        "seed": cfg.rng_seed,
        "mode": cfg.mode,
        "started_utc": started.isoformat(),
        "truncated": False,
        "error": None,
        "checks": [],
    }
    label = preset.name if preset else cfg.mode

    try:
        series = sim.run(out_dir, progress)
    except Exception as exc:
        manifest["truncated"] = True
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["wall_time_s"] = time.perf_counter() - clock
        paths = [sim.series.to_csv(out_dir / SERIES_FILE)] if len(sim.series) else []
        manifest["stopped_at"] = sim.time
        manifest["outputs"] = _outputs(out_dir, paths + sim.snapshots)
        _write_manifest(out_dir, manifest)
        logger.error("Run %s stopped at t=%.4g: %s", label, sim.time, exc)
        if history is not None:
            history.append("run", "truncated", f"{label}: {exc}")
        raise

    manifest["wall_time_s"] = time.perf_counter() - clock
    paths = [series.to_csv(out_dir / SERIES_FILE)] + sim.snapshots
    manifest["outputs"] = _outputs(out_dir, paths)
    manifest["monitors"] = sim.monitors()

    ctx = CheckContext(cfg=cfg, series=series, ensemble=sim.ensemble, fluid=sim.fluid, spec=sim.spec)
    results = run_checks(checks_for(cfg, preset), ctx)
    manifest["checks"] = [r.as_dict() for r in results]
    _write_manifest(out_dir, manifest)

    result = RunResult(out_dir=out_dir, series=series, manifest=manifest, checks=results)
    written = sum(item["bytes"] for item in manifest["outputs"])
    status = "ok" if result.passed else "failed"
    logger.info("Run %s finished in %.1f s, %s written, checks %s", label, manifest["wall_time_s"],
                format_bytes(written), status)
    if history is not None:
        details = label if result.passed else f"{label}: failed {', '.join(result.failed_checks)}"
        history.append("run", status, details, written)
    if enforce_checks and not result.passed:
        raise AcceptanceFailure(result.failed_checks)
    return result


def run_preset(name: str, out_dir: Union[str, Path], history: Optional[HistoryStore] = None,
               progress: Optional[ProgressFn] = None, enforce_checks: bool = True) -> RunResult:
    cfg, preset = resolve_config(preset=name)
    return run(cfg, out_dir, preset, history, progress, enforce_checks)
