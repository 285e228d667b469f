"""Simulate bath-induced exciton transfer on a noisy two-qubit circuit and check it against HEOM.

Every run is described by one JSON configuration; flags override its fields.
Outputs go to ``--out`` (or ``$GATEBATH_OUT``, or ``./runs``) together with a
``manifest.json`` holding the resolved configuration and sha256 checksums of
every output, so ``gatebath replay manifest.json`` can reproduce the run.

Sites are 1-based on the command line and in config files.

Exit codes: 0 success, 2 configuration error, 3 engine error, 4 acceptance
threshold failed (prediction rms too large, or replay mismatch).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as _dist_version
from pathlib import Path

import numpy as np

from .analysis import (
    CalibrationCurve,
    HeomFitSettings,
    build_calibration,
    calibrate_noise,
    fit_lambda,
    predict_dynamics,
    rate_curve,
)
from .engine import DEFAULT_SEED, DEFAULT_SHOTS, circuit_trace
from .errors import BoundaryWarning, ConfigError, ExtrapolationWarning, FitError, GatebathError
from .exciton import EnergyScale, ExcitonSystem, build_one_exciton_hamiltonian, reference_propagate
from .heom import BathSpec, HierarchySpec, convergence_check, heom_propagate
from .noisegen import SEQUENCE_WORDS, NoiseModel, build_schedule

try:
    __version__ = _dist_version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

log = logging.getLogger("gatebath")

EXIT_OK, EXIT_CONFIG, EXIT_ENGINE, EXIT_THRESHOLD = 0, 2, 3, 4
COMMANDS = ("coherent", "dissipative", "heom", "calibrate", "predict")
ENGINES = {"coherent": ("circuit", "oracle"), "dissipative": ("circuit",), "heom": ("heom",),
           "calibrate": ("circuit",), "predict": ("circuit",)}


@dataclass
class RunConfig:
    command: str = "coherent"
    engine: str | None = None
    system: dict = field(default_factory=lambda: ExcitonSystem.symmetric_dimer().to_dict())
    energy_scale: dict = field(default_factory=lambda: {"J0": 100.0, "dt_fs": 2.0})
    noise: object = "calibrated"
    sequence: str = "SWAP2"
    d: list = field(default_factory=list)
    lam: float | None = None
    bath: dict = field(default_factory=lambda: {"gamma_ps": 100.0, "temperature": 300.0})
    hierarchy: dict = field(default_factory=lambda: {"L": 8, "K": 1})
    n_steps: int = 150
    shots: int | None = None
    seed: int = DEFAULT_SEED
    initial_site: int = 1
    output_dir: str | None = None
    rms_threshold: float = 0.05
    calibration: str | None = None
    lambda_bounds: list = field(default_factory=lambda: [0.0, 400.0])
    convergence: bool = True
    tune_noise: bool = False
    workers: int = 1

    # -- typed views ---------------------------------------------------------

    def exciton_system(self) -> ExcitonSystem:
        return ExcitonSystem(int(self.system["n_sites"]), tuple(self.system["site_energies"]),
                             tuple(tuple(r) for r in self.system["couplings"]))

    def scale(self) -> EnergyScale:
        return EnergyScale(float(self.energy_scale["J0"]), float(self.energy_scale["dt_fs"]))

    def noise_model(self) -> NoiseModel:
        if self.noise == "calibrated":
            return NoiseModel.calibrated()
        if self.noise == "default":
            return NoiseModel()
        if self.noise in ("ideal", None):
            return NoiseModel.ideal()
        if isinstance(self.noise, dict):
            return NoiseModel.from_dict(self.noise)
        raise ConfigError(f"noise: expected 'calibrated', 'default', 'ideal' or an object, got {self.noise!r}")

    def heom_settings(self) -> HeomFitSettings:
        return HeomFitSettings(float(self.bath.get("gamma_ps", 100.0)), float(self.bath.get("temperature", 300.0)),
                               int(self.hierarchy.get("L", 8)), int(self.hierarchy.get("K", 1)))

    def resolved_shots(self) -> int | None:
        """``None`` means exact probabilities.  ``coherent`` defaults to exact."""
        if self.shots is None:
            return None if self.command == "coherent" else DEFAULT_SHOTS
        return None if self.shots == 0 else int(self.shots)

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown {self.command!r}")
        allowed = ENGINES[self.command]
        if self.engine is None:
            self.engine = allowed[0]
        if self.engine not in allowed:
            raise ConfigError(f"engine: {self.command} supports {list(allowed)}, got {self.engine!r}")
        if self.sequence not in SEQUENCE_WORDS:
            raise ConfigError(f"sequence: unknown {self.sequence!r}; choose from {sorted(SEQUENCE_WORDS)}")
        if isinstance(self.d, (int, float)):
            self.d = [self.d]
        try:
            self.d = [float(v) for v in self.d]
        except (TypeError, ValueError):
            raise ConfigError(f"d: expected numbers, got {self.d!r}") from None
        if any(not (v >= 0) for v in self.d):
            raise ConfigError(f"d: damping coefficients must be >= 0, got {self.d}")
        if self.shots is not None and int(self.shots) < 0:
            raise ConfigError("shots: must be >= 1 (or 0 for exact probabilities)")
        if int(self.n_steps) < 1:
            raise ConfigError("n_steps: must be >= 1")
        self.n_steps = int(self.n_steps)
        self.seed = int(self.seed)
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        try:
            system = self.exciton_system()
            self.scale()
            self.noise_model()
            self.heom_settings()
            HierarchySpec(int(self.hierarchy.get("L", 8)), int(self.hierarchy.get("K", 1)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed field: {exc}") from None
        except GatebathError as exc:
            raise ConfigError(str(exc)) from None
        if not 1 <= self.initial_site <= system.n_sites:
            raise ConfigError(f"initial_site: must be in 1..{system.n_sites}")
        if self.command in ("dissipative", "calibrate", "predict", "coherent") and self.engine == "circuit" \
                and system.n_sites != 2:
            raise ConfigError("system: the circuit engine only supports the two-site dimer")
        if self.command == "dissipative" and not self.d:
            raise ConfigError("d: dissipative runs need at least one damping coefficient (--d)")
        if self.command == "calibrate":
            if not self.d:
                self.d = [2.0, 6.0, 10.0, 14.0, 18.0]
            if len(set(self.d)) < 2:
                raise ConfigError("d: calibration needs at least two distinct values")
        if self.command == "heom" and self.lam is None:
            raise ConfigError("lam: heom runs need a reorganization energy (--lambda)")
        if self.command == "predict":
            if self.lam is None:
                raise ConfigError("lam: predict needs a target reorganization energy (--lambda)")
            if not self.calibration:
                raise ConfigError("calibration: predict needs a calibration JSON (--calibration)")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["noise"] = self.noise_model().to_dict()
        out["shots"] = self.resolved_shots() or 0
        return out


def _field_names():
    return {f.name for f in fields(RunConfig)}


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if "lambda" in data:
        data["lam"] = data.pop("lambda")
    unknown = set(data) - _field_names()
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {sorted(unknown)}")
    return data


def resolve_config(args) -> RunConfig:
    data = load_config(args.config) if getattr(args, "config", None) else {}
    data["command"] = args.command
    overrides = {
        "seed": args.seed, "output_dir": args.out, "d": args.d, "lam": args.lam, "sequence": args.sequence,
        "engine": args.engine, "n_steps": args.steps, "shots": args.shots, "workers": args.workers,
        "calibration": getattr(args, "calibration", None), "rms_threshold": getattr(args, "rms_threshold", None),
        "initial_site": args.initial_site,
    }
    for key, val in overrides.items():
        if val is not None:
            data[key] = val
    if getattr(args, "noise", None):
        data["noise"] = args.noise
    if getattr(args, "no_convergence", False):
        data["convergence"] = False
    if getattr(args, "tune_noise", False):
        data["tune_noise"] = True
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir or os.environ.get("GATEBATH_OUT") or "runs")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir: cannot create {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output_dir: {out} is not writable")
    return out


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json_atomic(path: Path, payload) -> str:
    data = (json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n").encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _fmt_d(d: float) -> str:
    return format(d, "g")


# ---------------------------------------------------------------------------
# commands; each returns (outputs {name: sha256}, info dict, exit code)
# ---------------------------------------------------------------------------

def cmd_coherent(cfg: RunConfig, out: Path):
    scale = cfg.scale()
    system = cfg.exciton_system()
    steps = np.arange(cfg.n_steps + 1)
    H = build_one_exciton_hamiltonian(system) / scale.J0
    oracle = reference_propagate(H, cfg.initial_site - 1, scale.theta(steps), scale)
    if cfg.engine == "oracle":
        trace = oracle
    else:
        trace = circuit_trace(cfg.sequence, 0.0, None, cfg.n_steps, scale, cfg.resolved_shots(), cfg.seed,
                              cfg.initial_site - 1)
    name = f"coherent_{cfg.engine}.csv"
    dev = float(np.max(np.abs(trace.P1 - oracle.P1)))
    print(f"max |P1 - oracle| = {dev:.3e}")
    return {name: trace.write_csv(out / name)}, {"max_deviation_from_oracle": dev}, EXIT_OK


def _dissipative_task(args):
    seq, d, noise_dict, n_steps, scale_dict, shots, seed, site = args
    scale = EnergyScale(**scale_dict)
    return circuit_trace(seq, d, NoiseModel.from_dict(noise_dict), n_steps, scale, shots, seed, site)


def _circuit_sweep(cfg: RunConfig, noise: NoiseModel, ds) -> list:
    tasks = [(cfg.sequence, d, noise.to_dict(), cfg.n_steps, cfg.energy_scale, cfg.resolved_shots(), cfg.seed,
              cfg.initial_site - 1) for d in ds]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_dissipative_task, tasks))
    return [_dissipative_task(t) for t in tasks]


def cmd_dissipative(cfg: RunConfig, out: Path):
    noise = cfg.noise_model()
    traces = _circuit_sweep(cfg, noise, cfg.d)
    outputs, runs = {}, []
    for d, tr in zip(cfg.d, traces):
        name = f"dissipative_{cfg.sequence}_d{_fmt_d(d)}.csv"
        outputs[name] = tr.write_csv(out / name)
        n_i = build_schedule(d, cfg.n_steps).total_insertions
        runs.append({"d": d, "N_I": n_i, "file": name, "final_P1": float(tr.P1[-1])})
        print(f"d={_fmt_d(d)}  N_I={n_i}  final P1={tr.P1[-1]:.4f}  -> {name}")
    info = {"runs": runs}
    if len(cfg.d) >= 3:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                rc = rate_curve(cfg.d, traces)
                info["rates"] = [{"d": d, "k_per_ps": k} for d, k in rc.table()]
                info["turnover"] = rc.turnover
                print(f"rate maximum at d={_fmt_d(rc.argmax_d)}; turnover {'present' if rc.turnover else 'absent'}")
            except FitError as exc:
                info["rates_error"] = str(exc)
    return outputs, info, EXIT_OK


def cmd_heom(cfg: RunConfig, out: Path):
    system = cfg.exciton_system()
    st = cfg.heom_settings()
    bath = BathSpec(float(cfg.lam), st.gamma_ps, st.temperature)
    spec = HierarchySpec(st.L, st.K)
    scale = cfg.scale()
    trace = heom_propagate(system, bath, spec, cfg.initial_site - 1, scale.dt_fs, cfg.n_steps, scale=scale)
    name = f"heom_lambda{_fmt_d(cfg.lam)}.csv"
    outputs = {name: trace.write_csv(out / name)}
    info = {"n_ados": trace.provenance["n_ados"], "max_trace_error": trace.provenance["max_trace_error"]}
    if cfg.convergence:
        rep = convergence_check(system, bath, spec, cfg.initial_site - 1, scale.dt_fs, cfg.n_steps, base=trace)
        info["convergence"] = rep.to_dict()
        print(f"convergence (L,K)=({spec.L},{spec.K}) vs ({rep.refined.L},{rep.refined.K}): "
              f"max deviation {rep.max_deviation:.2e} -> {'converged' if rep.converged else 'NOT converged'}")
    print(f"wrote {name} ({info['n_ados']} ADOs)")
    return outputs, info, EXIT_OK


def cmd_calibrate(cfg: RunConfig, out: Path):
    noise = cfg.noise_model()
    outputs, info = {}, {}
    if cfg.tune_noise:
        cal = calibrate_noise(noise, seq=cfg.sequence, n_steps=cfg.n_steps)
        noise = cal.noise
        payload = {"scale": cal.scale, "noise": noise.to_dict(), "anchor_fits": cal.fitted,
                   "objective": cal.objective}
        outputs["noise.json"] = write_json_atomic(out / "noise.json", payload)
        info["tuned_noise_scale"] = cal.scale
        print(f"tuned two-qubit noise scale: {cal.scale:.4f}  anchor fits {cal.fitted}")
    traces = _circuit_sweep(cfg, noise, cfg.d)
    points, failures = [], []
    lo, hi = cfg.lambda_bounds
    for d, tr in zip(cfg.d, traces):
        name = f"calibrate_{cfg.sequence}_d{_fmt_d(d)}.csv"
        outputs[name] = tr.write_csv(out / name)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", BoundaryWarning)
                fit = fit_lambda(tr, cfg.exciton_system(), cfg.heom_settings(), (lo, hi))
        except (FitError, GatebathError) as exc:
            failures.append({"d": d, "error": str(exc)})
            print(f"d={_fmt_d(d)}  fit failed: {exc}")
            continue
        points.append((d, fit.lam, fit.rms))
        print(f"d={_fmt_d(d):>5}  lambda={fit.lam:8.2f} cm^-1  rms={fit.rms:.4f}")
    if len(points) < 2:
        raise FitError(f"only {len(points)} calibration point(s) succeeded", {"failures": failures})
    curve = build_calibration(points)
    outputs["calibration.json"] = write_json_atomic(out / "calibration.json", curve.to_dict())
    print(f"lambda(d) = {curve.slope:.4f} d + {curve.intercept:.4f}   r^2 = {curve.r_squared:.4f}")
    info.update({"slope": curve.slope, "intercept": curve.intercept, "r_squared": curve.r_squared,
                 "failures": failures})
    return outputs, info, EXIT_OK


def cmd_predict(cfg: RunConfig, out: Path):
    try:
        curve = CalibrationCurve.from_dict(json.loads(Path(cfg.calibration).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"calibration: cannot load {cfg.calibration}: {exc}") from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExtrapolationWarning)
        pred = predict_dynamics(curve, float(cfg.lam), cfg.noise_model(), cfg.sequence, cfg.n_steps,
                                cfg.resolved_shots(), cfg.seed, cfg.heom_settings(), cfg.exciton_system())
    extrapolated = any(issubclass(w.category, ExtrapolationWarning) for w in caught)
    if extrapolated:
        print(f"warning: lambda={cfg.lam} lies outside the calibrated span", file=sys.stderr)
    cname = f"predict_circuit_d{_fmt_d(pred.d)}.csv"
    hname = f"predict_heom_lambda{_fmt_d(cfg.lam)}.csv"
    outputs = {cname: pred.circuit.write_csv(out / cname), hname: pred.heom.write_csv(out / hname)}
    summary = {"lambda": pred.lam_target, "d_exact": pred.d_exact, "d": pred.d, "rms": pred.rms,
               "threshold": cfg.rms_threshold, "extrapolated": extrapolated,
               "circuit_csv": cname, "heom_csv": hname}
    outputs["predict.json"] = write_json_atomic(out / "predict.json", summary)
    print(f"lambda={pred.lam_target:g} -> d={pred.d_exact:.3f} (run at d={_fmt_d(pred.d)})  rms={pred.rms:.4f}")
    code = EXIT_OK if pred.rms <= cfg.rms_threshold else EXIT_THRESHOLD
    if code:
        print(f"rms {pred.rms:.4f} exceeds threshold {cfg.rms_threshold}", file=sys.stderr)
    return outputs, summary, code


HANDLERS = {"coherent": cmd_coherent, "dissipative": cmd_dissipative, "heom": cmd_heom,
            "calibrate": cmd_calibrate, "predict": cmd_predict}


def execute(cfg: RunConfig, out: Path) -> int:
    start = time.time()
    outputs, info, code = HANDLERS[cfg.command](cfg, out)
    manifest = {
        "tool": "gatebath", "version": __version__, "command": cfg.command, "config": cfg.to_dict(),
        "duration_s": round(time.time() - start, 3), "outputs": outputs, "info": info, "exit_code": code,
    }
    write_json_atomic(out / "manifest.json", manifest)
    return code


def cmd_replay(manifest_path, out_arg) -> int:
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        data = dict(manifest["config"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read manifest {manifest_path}: {exc}") from None
    out = Path(out_arg) if out_arg else Path(tempfile.mkdtemp(prefix="gatebath-replay-"))
    data["output_dir"] = str(out)
    try:
        cfg = RunConfig(**data).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    execute(cfg, output_dir(cfg))
    mismatched = []
    for name, digest in manifest["outputs"].items():
        path = out / name
        if not path.exists() or sha256_file(path) != digest:
            mismatched.append(name)
    for name in manifest["outputs"]:
        print(f"{'MISMATCH' if name in mismatched else 'ok      '}  {name}")
    print(f"replayed into {out}")
    return EXIT_THRESHOLD if mismatched else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatebath", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"gatebath {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags below override its fields")
    common.add_argument("--seed", type=int, help=f"64-bit sampling seed (default {DEFAULT_SEED})")
    common.add_argument("--out", help="output directory (default $GATEBATH_OUT or ./runs)")
    common.add_argument("--d", type=float, nargs="+", help="damping coefficient(s)")
    common.add_argument("--lambda", dest="lam", type=float, help="reorganization energy in cm^-1")
    common.add_argument("--sequence", choices=sorted(SEQUENCE_WORDS), help="decoherence-inducing word")
    common.add_argument("--engine", help="engine: circuit, oracle or heom (depends on the command)")
    common.add_argument("--steps", type=int, help="number of time steps (default 150)")
    common.add_argument("--shots", type=int, help="shots per time point; 0 uses exact probabilities")
    common.add_argument("--initial-site", type=int, help="initially excited site, 1-based (default 1)")
    common.add_argument("--noise", choices=("calibrated", "default", "ideal"),
                        help="named noise model (default calibrated)")
    common.add_argument("--workers", type=int, help="worker processes for d sweeps (default 1)")

    sub.add_parser("coherent", parents=[common], help="noiseless dynamics, compared with the exact oracle")
    sub.add_parser("dissipative", parents=[common], help="circuit runs with inserted noise words, one CSV per d")
    p = sub.add_parser("heom", parents=[common], help="HEOM reference trace and convergence report")
    p.add_argument("--no-convergence", action="store_true", help="skip the (L+2, K+1) convergence run")
    p = sub.add_parser("calibrate", parents=[common], help="fit lambda at each d and build the calibration line")
    p.add_argument("--tune-noise", action="store_true",
                   help="first tune the two-qubit noise scale to the (2, 15) and (18, 227) anchors")
    p = sub.add_parser("predict", parents=[common], help="choose d for a target lambda and compare with HEOM")
    p.add_argument("--calibration", help="calibration JSON written by 'calibrate'")
    p.add_argument("--rms-threshold", type=float, help="fail with exit code 4 above this rms (default 0.05)")
    p = sub.add_parser("replay", help="re-run a manifest and verify its checksums")
    p.add_argument("manifest", help="manifest.json of an earlier run")
    p.add_argument("--out", help="directory for the replayed outputs (default: a new temp dir)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args.manifest, args.out)
        cfg = resolve_config(args)
        return execute(cfg, output_dir(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GatebathError as exc:
        print(f"engine error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
