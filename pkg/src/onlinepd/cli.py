"""Command-line frontend: config parsing, experiment runs, self tests.

Subcommands:
    run <config>                     one predictor, metrics.csv + PGM dumps
    compare <config> -p A B ...      several predictors on one frame sequence
    selftest                         quick property suites, pass/fail output

Config files are plain text, one `section.key = value` per line; see
docs/config.md.  Exit codes: 0 success, 1 usage/config error, 2 infeasible
step parameters, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .core import SeededRng, inner, poisson_sample
from .diagnostics import solve_static, duality_gap, tv_preservation_residual
from .engine import FrameProblem, StepParams, make_unaccelerated_params, run_online
from .experiments import (
    PSNR_CAP,
    PetScenario,
    StabilisationScenario,
    make_pet_frames,
    make_stabilisation_frames,
    psnr,
    ssim,
    write_pgm,
)
from .operators import Displacement, GradOp, RadonOp, WarpOp
from .predictors import PREDICTOR_NAMES, PredictContext, Rotation, StrictGreedy, make_predictor
from .proxops import (
    DataTermL2,
    DataTermPoisson,
    TVRegulariser,
    grad_poisson,
    poisson_objective,
    prox_l2_data,
    prox_nonneg,
    prox_tv_conjugate,
)

__all__ = ["RunConfig", "ConfigError", "cmd_run", "cmd_compare", "cmd_selftest", "main"]


class ConfigError(Exception):
    pass


_COMMON_KEYS = {
    "experiment": str,
    "scale": str,
    "run.seed": int,
    "diagnostics": str,
    "output.dir": str,
    "output.dump_every": int,
    "output.timings": str,
    "compare.burn_in": int,
    "predictor.name": str,
    "predictor.mode": str,
    "predictor.activation": str,
    "predictor.chi": float,
    "predictor.rho_tilde": float,
    "predictor.eps_tol": float,
    "predictor.tol": float,
    "predictor.max_iter": int,
    "step.tau": float,
    "step.kappa": float,
    "step.L": float,
    "step.alpha": float,
}

_STABILISE_KEYS = {
    "scenario.source": str,
    "scenario.crop_h": int,
    "scenario.crop_w": int,
    "scenario.n_frames": int,
    "scenario.brownian_std": float,
    "scenario.stop_intervals": str,
    "scenario.data_noise_std": float,
    "scenario.displacement_noise_std": float,
}

_PET_KEYS = {
    "scenario.phantom": str,
    "scenario.image_size": int,
    "scenario.n_angles": int,
    "scenario.n_bins": int,
    "scenario.n_frames": int,
    "scenario.subsample_fraction": float,
    "scenario.rotation_angle_std": float,
    "scenario.center_offset_std": float,
    "scenario.angle_noise_std": float,
    "scenario.center_noise_std": float,
    "scenario.background": float,
    "scenario.intensity": float,
    "scenario.stop_intervals": str,
}


def _parse_lines(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e.strerror}")
    entries = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        if key in entries:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = (value, lineno)
    return entries


def _parse_intervals(text: str, path: str, lineno: int):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            a, b = part.split("-")
            out.append((int(a), int(b)))
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad interval {part!r}, expected 'start-end'")
    return tuple(out)


def read_pgm(path: str) -> np.ndarray:
    """Read a binary 8-bit PGM into a [0, 1] float image."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 10:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pixels = np.frombuffer(data[i + 1:i + 1 + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).astype(np.float64) / maxval


@dataclasses.dataclass
class RunConfig:
    experiment: str
    scenario: object
    predictor_name: str
    predictor_kwargs: dict
    step: dict
    output_dir: str
    dump_every: int
    diagnostics: str
    timings: bool
    seed: int
    burn_in: int

    @staticmethod
    def from_file(path: str) -> "RunConfig":
        entries = _parse_lines(path)
        exp_entry = entries.get("experiment")
        experiment = exp_entry[0] if exp_entry else "stabilise"
        if experiment not in ("stabilise", "pet"):
            lineno = exp_entry[1] if exp_entry else 0
            raise ConfigError(f"{path}:{lineno}: experiment must be 'stabilise' or 'pet'")
        known = dict(_COMMON_KEYS)
        known.update(_STABILISE_KEYS if experiment == "stabilise" else _PET_KEYS)
        values = {}
        for key, (text, lineno) in entries.items():
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for experiment {experiment!r}")
            caster = known[key]
            try:
                values[key] = caster(text)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: cannot parse {text!r} as {caster.__name__}")

        seed = values.get("run.seed", 0)
        scale = values.get("scale", "desk")
        if scale not in ("desk", "paper"):
            raise ConfigError(f"{path}: scale must be 'desk' or 'paper'")

        if experiment == "stabilise":
            source = None
            if "scenario.source" in values:
                source = read_pgm(values["scenario.source"])
            if scale == "paper":
                if source is None:
                    raise ConfigError(f"{path}: paper scale needs scenario.source (a PGM image)")
                scenario = StabilisationScenario.paper_scale(source, seed=seed)
            else:
                scenario = StabilisationScenario(source=source, seed=seed)
            overrides = {}
            if "scenario.crop_h" in values or "scenario.crop_w" in values:
                ch = values.get("scenario.crop_h", scenario.crop_size[0])
                cw = values.get("scenario.crop_w", scenario.crop_size[1])
                overrides["crop_size"] = (ch, cw)
            for key, fld in (("scenario.n_frames", "n_frames"),
                             ("scenario.brownian_std", "brownian_std"),
                             ("scenario.data_noise_std", "data_noise_std"),
                             ("scenario.displacement_noise_std", "displacement_noise_std")):
                if key in values:
                    overrides[fld] = values[key]
            if "scenario.stop_intervals" in values:
                overrides["stop_intervals"] = _parse_intervals(
                    values["scenario.stop_intervals"], path, entries["scenario.stop_intervals"][1])
            if "step.alpha" in values:
                overrides["alpha"] = values["step.alpha"]
            scenario = dataclasses.replace(scenario, **overrides)
            step = {"tau": values.get("step.tau", 0.01),
                    "L": values.get("step.L", 0.0),
                    "kappa": values.get("step.kappa", 1.0),
                    "alpha": scenario.alpha,
                    "gamma_F": 1.0}
        else:
            scenario = PetScenario.paper_scale(seed=seed) if scale == "paper" else PetScenario(seed=seed)
            overrides = {}
            for key, fld in (("scenario.phantom", "phantom"),
                             ("scenario.image_size", "image_size"),
                             ("scenario.n_angles", "n_angles"),
                             ("scenario.n_bins", "n_bins"),
                             ("scenario.n_frames", "n_frames"),
                             ("scenario.subsample_fraction", "subsample_fraction"),
                             ("scenario.rotation_angle_std", "rotation_angle_std"),
                             ("scenario.center_offset_std", "center_offset_std"),
                             ("scenario.angle_noise_std", "angle_noise_std"),
                             ("scenario.center_noise_std", "center_noise_std"),
                             ("scenario.background", "background"),
                             ("scenario.intensity", "intensity")):
                if key in values:
                    overrides[fld] = values[key]
            if "scenario.stop_intervals" in values:
                overrides["stop_intervals"] = _parse_intervals(
                    values["scenario.stop_intervals"], path, entries["scenario.stop_intervals"][1])
            if "step.alpha" in values:
                overrides["alpha"] = values["step.alpha"]
            if "step.L" in values:
                overrides["L"] = values["step.L"]
            scenario = dataclasses.replace(scenario, **overrides)
            step = {"tau": values.get("step.tau", 0.003),
                    "L": scenario.L,
                    "kappa": values.get("step.kappa", 1.0),
                    "alpha": scenario.alpha,
                    "gamma_F": 0.0}

        predictor_name = values.get("predictor.name", "dual_scaling")
        if predictor_name not in PREDICTOR_NAMES:
            raise ConfigError(f"{path}: unknown predictor {predictor_name!r}")
        predictor_kwargs = dict(default_predictor_kwargs(predictor_name, experiment))
        for key, kw in (("predictor.mode", "mode"), ("predictor.activation", "activation"),
                        ("predictor.chi", "chi"), ("predictor.rho_tilde", "rho_tilde"),
                        ("predictor.eps_tol", "eps_tol"), ("predictor.tol", "tol"),
                        ("predictor.max_iter", "max_iter")):
            if key in values:
                predictor_kwargs[kw] = values[key]

        diagnostics = values.get("diagnostics", "off")
        if diagnostics not in ("off", "gaps", "full"):
            raise ConfigError(f"{path}: diagnostics must be off, gaps or full")
        return RunConfig(
            experiment=experiment, scenario=scenario,
            predictor_name=predictor_name, predictor_kwargs=predictor_kwargs,
            step=step, output_dir=values.get("output.dir", "out"),
            dump_every=values.get("output.dump_every", 100),
            diagnostics=diagnostics,
            timings=values.get("output.timings", "off") == "on",
            seed=seed, burn_in=values.get("compare.burn_in", 500))


def default_predictor_kwargs(name: str, experiment: str) -> dict:
    """Per-study defaults where a predictor has experiment-specific knobs."""
    if name == "dual_scaling":
        # both desk-scale scenes are dominated by flat plateaus, where the
        # steep sigmoid activation is the appropriate choice; the power
        # activation with chi = 0.75 suits finely textured natural footage
        # and stays available through the config file
        return {"activation": "sigmoid", "chi": 1.0}
    if name == "greedy":
        # the componentwise gradient ratio is heavy-tailed under noise, so
        # the experiments run with a coarse activity tolerance; the class
        # default 1e-12 is only safe on noiseless piecewise-constant images
        return {"eps_tol": 1e-2}
    return {}


def _make_params(cfg: RunConfig) -> StepParams:
    return make_unaccelerated_params(
        tau=cfg.step["tau"], L=cfg.step["L"], kappa=cfg.step["kappa"],
        K_norm_bound=np.sqrt(8.0), alpha=cfg.step["alpha"],
        gamma_F=cfg.step["gamma_F"])


def _make_frames(cfg: RunConfig):
    if cfg.experiment == "stabilise":
        return make_stabilisation_frames(cfg.scenario)
    return make_pet_frames(cfg.scenario)


def _csv_float(v: float) -> str:
    return f"{v:.9g}"


def _frame_gap(problem: FrameProblem, state, params: StepParams) -> float:
    saddle = solve_static(problem, max_iters=2000, gap_tol=1e-10)
    return duality_gap(problem, (state.x, state.y), (saddle.x_opt, saddle.y_opt),
                       eta=params.eta)


def _run_one(cfg: RunConfig, predictor_name: str, predictor_kwargs: dict,
             problems, truths, params: StepParams, metrics_path: str,
             dump_dir: str | None = None):
    """Run one predictor over the frame sequence, writing metrics as we go."""
    predictor = make_predictor(predictor_name, **predictor_kwargs)
    records = []

    with open(metrics_path, "w", encoding="utf-8") as f:
        f.write("frame,psnr,ssim,gap,wall_time\n")

        def sink(k, state, problem, wall):
            p = min(psnr(state.x, truths[k]), PSNR_CAP)
            s = ssim(state.x, truths[k])
            gap_text = ""
            if cfg.diagnostics == "full" or (
                    cfg.diagnostics == "gaps" and cfg.dump_every > 0
                    and (k + 1) % cfg.dump_every == 0):
                gap_text = _csv_float(_frame_gap(problem, state, params))
            wall_text = _csv_float(wall) if cfg.timings else "0"
            f.write(f"{k},{_csv_float(p)},{_csv_float(s)},{gap_text},{wall_text}\n")
            records.append((k, p, s))
            if dump_dir is not None and cfg.dump_every > 0 and (k + 1) % cfg.dump_every == 0:
                write_pgm(os.path.join(dump_dir, f"frame_{k:06d}.pgm"), state.x)

        run_online(problems, predictor, params, sinks=(sink,))
    return records


def _write_resolved_config(cfg: RunConfig, params: StepParams, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"experiment = {cfg.experiment}\n")
        f.write(f"run.seed = {cfg.seed}\n")
        f.write(f"diagnostics = {cfg.diagnostics}\n")
        f.write(f"predictor.name = {cfg.predictor_name}\n")
        for k, v in sorted(cfg.predictor_kwargs.items()):
            f.write(f"predictor.{k} = {v}\n")
        for k in ("tau", "sigma", "eta", "phi", "psi", "gamma", "rho", "kappa",
                  "L", "alpha", "K_norm_bound"):
            f.write(f"step.{k} = {float(getattr(params, k))!r}\n")
        for fld in dataclasses.fields(cfg.scenario):
            if fld.name == "source":
                continue
            f.write(f"scenario.{fld.name} = {getattr(cfg.scenario, fld.name)!r}\n")
        f.write(f"output.dump_every = {cfg.dump_every}\n")


def cmd_run(config_path: str) -> int:
    try:
        cfg = RunConfig.from_file(config_path)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        params = _make_params(cfg)
    except ValueError as e:
        tau, L, kappa = cfg.step["tau"], cfg.step["L"], cfg.step["kappa"]
        print(f"error: infeasible step parameters: {e}\n"
              f"  tau = {tau}, L = {L}, kappa = {kappa}, ||K||^2 = 8\n"
              f"  need tau*L/kappa + tau*sigma*||K||^2 <= 1 with sigma > 0; "
              f"tau*L/kappa = {tau * L / kappa:.6g}", file=sys.stderr)
        return 2
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
        _write_resolved_config(cfg, params, os.path.join(cfg.output_dir, "resolved_config"))
        problems, truths = _make_frames(cfg)
        _run_one(cfg, cfg.predictor_name, cfg.predictor_kwargs, problems, truths,
                 params, os.path.join(cfg.output_dir, "metrics.csv"),
                 dump_dir=cfg.output_dir)
    except Exception as e:
        print(f"error: run failed: {e}", file=sys.stderr)
        return 3
    return 0


def _mean_ci(values: np.ndarray):
    m = float(np.mean(values))
    if values.size < 2:
        return m, m, m
    half = 1.96 * float(np.std(values, ddof=1)) / np.sqrt(values.size)
    return m, m - half, m + half


def cmd_compare(config_path: str, predictors, burn_in: int | None = None) -> int:
    if len(predictors) < 2:
        print("error: compare needs at least two predictors", file=sys.stderr)
        return 1
    for name in predictors:
        if name not in PREDICTOR_NAMES:
            print(f"error: unknown predictor {name!r}", file=sys.stderr)
            return 1
    try:
        cfg = RunConfig.from_file(config_path)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        params = _make_params(cfg)
    except ValueError as e:
        print(f"error: infeasible step parameters: {e}", file=sys.stderr)
        return 2
    burn = cfg.burn_in if burn_in is None else burn_in
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
        problems, truths = _make_frames(cfg)
        rows = []
        for name in predictors:
            kwargs = default_predictor_kwargs(name, cfg.experiment)
            metrics_path = os.path.join(cfg.output_dir, f"metrics_{name}.csv")
            records = _run_one(cfg, name, kwargs, problems, truths, params, metrics_path)
            ps = np.array([r[1] for r in records])
            ss = np.array([r[2] for r in records])
            pb, pl, ph = _mean_ci(ps[burn:]) if burn < len(ps) else _mean_ci(ps)
            sb, sl, sh = _mean_ci(ss[burn:]) if burn < len(ss) else _mean_ci(ss)
            rows.append((name, float(np.mean(ps)), pb, pl, ph,
                         float(np.mean(ss)), sb, sl, sh))
        with open(os.path.join(cfg.output_dir, "summary.csv"), "w", encoding="utf-8") as f:
            f.write("predictor,avg_psnr_full,avg_psnr_burnin,psnr_ci_lo,psnr_ci_hi,"
                    "avg_ssim_full,avg_ssim_burnin,ssim_ci_lo,ssim_ci_hi\n")
            for name, pf, pb, pl, ph, sf, sb, sl, sh in rows:
                f.write(f"{name},{_csv_float(pf)},{_csv_float(pb)},{_csv_float(pl)},"
                        f"{_csv_float(ph)},{_csv_float(sf)},{_csv_float(sb)},"
                        f"{_csv_float(sl)},{_csv_float(sh)}\n")
    except Exception as e:
        print(f"error: compare failed: {e}", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# selftest

def _selftest_adjoints(inject_fault) -> list:
    rng = SeededRng(7)
    results = []
    ops = []
    for boundary in ("neumann", "dirichlet"):
        D = GradOp(boundary=boundary)
        ops.append((f"adjoint gradient {boundary}", D.apply, D.adjoint, (8, 8), (8, 8, 2)))
    R = RadonOp((12, 12), 8, 10)
    ops.append(("adjoint radon", R.apply, R.adjoint, (12, 12), (8, 10)))
    W = WarpOp(Displacement.translation((0.7, -1.3)), (9, 9))
    ops.append(("adjoint warp", W.apply, W.adjoint, (9, 9), (9, 9)))
    for name, apply, adjoint, shx, shy in ops:
        worst = 0.0
        for _ in range(20):
            x = rng.standard_normal(shx)
            y = rng.standard_normal(shy)
            lhs = inner(apply(x), y)
            rhs = inner(x, adjoint(y))
            if inject_fault == "adjoint":
                rhs += 1.0
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
        results.append((name, worst <= 1e-10, f"max rel err {worst:.3g}"))
    return results


def _selftest_prox(inject_fault) -> list:
    rng = SeededRng(11)
    results = []
    z = rng.standard_normal((6, 6))
    dt = DataTermL2(z=z)
    x = rng.standard_normal((6, 6))
    tau = 0.7
    p = prox_l2_data(dt, tau, x)
    resid = np.max(np.abs((p - x) / tau + (p - z)))
    results.append(("prox quadratic optimality", resid <= 1e-10, f"residual {resid:.3g}"))

    pn = prox_nonneg(tau, x)
    ok = np.all(pn >= 0) and np.allclose(pn[x >= 0], x[x >= 0])
    results.append(("prox nonnegativity projection", bool(ok), "projection identities"))

    reg = TVRegulariser(0.25)
    y = rng.standard_normal((6, 6, 2))
    py = prox_tv_conjugate(reg, 1.0, y)
    feas = float(np.max(np.sqrt(py[..., 0] ** 2 + py[..., 1] ** 2)))
    idem = float(np.max(np.abs(prox_tv_conjugate(reg, 1.0, py) - py)))
    if inject_fault == "prox":
        feas += 1.0
    results.append(("prox dual-ball projection", feas <= reg.alpha + 1e-12 and idem <= 1e-12,
                    f"max norm {feas:.3g}, idempotency {idem:.3g}"))
    return results


def _selftest_preservation(inject_fault) -> list:
    results = []
    x = np.zeros((16, 16))
    x[4:10, 5:12] = 1.0
    D = GradOp()
    alpha = 0.25
    dx = D.apply(x)
    norms = np.sqrt(dx[..., 0] ** 2 + dx[..., 1] ** 2)
    y = np.zeros_like(dx)
    nz = norms > 0
    y[nz] = alpha * dx[nz] / norms[nz][:, None]
    ctx = PredictContext(x=x, y=y, displacement=Displacement.translation((2.0, -3.0)),
                         D=D, alpha=alpha)
    for name, predictor in (("rotation", Rotation()), ("strict greedy", StrictGreedy())):
        xp, yp = predictor(ctx)
        attain, feas = tv_preservation_residual(D, alpha, xp, yp)
        if inject_fault == "preservation":
            attain += 1.0
        results.append((f"preservation {name}", abs(attain) <= 1e-8 and feas <= 1e-12,
                        f"attainment {attain:.3g}, feasibility excess {feas:.3g}"))
    return results


def _selftest_gradient(inject_fault) -> list:
    rng = SeededRng(13)
    A = RadonOp((8, 8), 8, 4)
    x0 = 0.5 + rng.uniform((8, 8))
    z = poisson_sample(rng, A.apply(x0) + 0.5)
    dt = DataTermPoisson(A=A, z=z, c=np.full((8, 4), 0.5), L=300.0)
    x = 0.5 + rng.uniform((8, 8))
    g = grad_poisson(dt, x)
    if inject_fault == "gradient":
        g = g + 1.0
    eps = 1e-5
    worst = 0.0
    for _ in range(5):
        v = rng.standard_normal((8, 8))
        v /= np.sqrt(inner(v, v))
        fd = (poisson_objective(dt, x + eps * v) - poisson_objective(dt, x - eps * v)) / (2 * eps)
        an = inner(g, v)
        worst = max(worst, abs(fd - an) / max(1.0, abs(an)))
    return [("gradient poisson fd check", worst <= 1e-5, f"max rel err {worst:.3g}")]


def cmd_selftest(inject_fault: str | None = None) -> int:
    suites = (_selftest_adjoints, _selftest_prox, _selftest_preservation, _selftest_gradient)
    failed = 0
    for suite in suites:
        for name, ok, detail in suite(inject_fault):
            print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
            failed += 0 if ok else 1
    if failed:
        print(f"{failed} propert{'y' if failed == 1 else 'ies'} failed")
    return 0 if failed == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="onlinepd",
                                     description="online predictive primal-dual reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")
    p_cmp = sub.add_parser("compare", help="run several predictors on one frame sequence")
    p_cmp.add_argument("config")
    p_cmp.add_argument("-p", "--predictors", nargs="+", required=True)
    p_cmp.add_argument("--burn-in", type=int, default=None)
    p_self = sub.add_parser("selftest", help="quick property checks")
    p_self.add_argument("--inject-fault", default=None,
                        choices=("adjoint", "prox", "preservation", "gradient"))
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "compare":
        return cmd_compare(args.config, args.predictors, burn_in=args.burn_in)
    return cmd_selftest(inject_fault=args.inject_fault)


if __name__ == "__main__":
    sys.exit(main())
