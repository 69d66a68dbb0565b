"""Command-line experiment runner.

Every subcommand reads a TOML config, runs a sweep, writes ``<command>.json``
and/or ``<command>.csv`` into the output directory and checks a small suite
of invariants.  Exit status: 0 on success, 1 on input error, 2 when an
invariant fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .barycenter import ConvergenceError, MeanConfig
from .closing import (
    SubexponentialWarning,
    conjugate_to_stabilizer,
    nonperturbative_conjugate,
    perturb_cocycle,
    perturbation_bound,
    pipeline_stage,
    verify_displacement_bound,
)
from .config import ConfigError, ExperimentConfig, load_config
from .dynamics import (
    BaseMismatchError,
    CompatibilityError,
    FiniteBase,
    ZdBase,
    ZdCocycle,
    drift_along_orbit,
    maximal_drift_estimate,
    subadditivity_gap,
    subexponential_diagnostic,
)
from .fixtures import (
    Fixture,
    constant_fixture,
    fixture_to_json,
    hyperbolic_coboundary_fixture,
    identity_fixture,
    load_fixture,
    random_bounded_fixture,
    rotation_coboundary_fixture,
    translation_fixture,
    zd_translation_fixture,
)
from .geometry import GeometryError, Isometry, SpaceDescriptor, make_space
from .sections import (
    FolnerFamily,
    ball_defect_bound,
    ball_growth_constant,
    barycenter_bound,
    constant_section,
    cube_defect_bound,
    displacement,
    dyadic_sections,
    power_displacement,
    section_barycenter,
    zd_section,
)

log = logging.getLogger("cocyclone")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2
COMMANDS = ("drift", "section", "dyadic", "zd-section", "perturb", "conjugate", "pipeline", "verify", "fixtures")
PERTURB_COLUMNS = ["N", "displacement", "perturbation_size", "stabilizer_residual", "orthogonality_defect"]


class InputError(ValueError):
    """Config is well-formed but cannot be turned into an experiment."""


class Outcome:
    """Rows, a JSON payload and the failed invariant checks of one run."""

    def __init__(self, command: str, columns: Sequence[str]):
        self.command = command
        self.columns = list(columns)
        self.rows: list[dict[str, Any]] = []
        self.payload: dict[str, Any] = {}
        self.failures: list[str] = []

    def check(self, ok: bool, message: str) -> None:
        if not ok:
            self.failures.append(message)
            log.warning("invariant failed: %s", message)


# ---------------------------------------------------------------------------
# building experiments from a config


def _space(cfg: ExperimentConfig):
    desc = {"kind": cfg.space.kind, "dim": cfg.space.dim}
    if cfg.space.kappa is not None:
        desc["kappa"] = cfg.space.kappa
    return make_space(SpaceDescriptor.from_json(desc))


def _finite_base(cfg: ExperimentConfig) -> FiniteBase:
    b = cfg.base
    if b.kind == "cyclic":
        return FiniteBase.cyclic(b.size)
    if b.kind == "map":
        return FiniteBase(len(b.successor), tuple(b.successor))
    raise InputError("base.kind: a torus base needs the zd-section command")


def _mean_config(cfg: ExperimentConfig) -> MeanConfig:
    t = cfg.tolerances
    return MeanConfig(tol=t.tol, max_iter=t.max_iter, step=t.step)


def build_fixture(cfg: ExperimentConfig, config_dir: Path) -> Fixture:
    cc = cfg.cocycle
    if cc.kind == "from_file":
        path = Path(cc.path)
        return load_fixture(path if path.is_absolute() else config_dir / path)
    space = _space(cfg)
    base = _finite_base(cfg)
    if cc.kind == "identity":
        return identity_fixture(space, base)
    if cc.kind == "constant":
        m = np.array(cc.matrix, dtype=float)
        if space.kind == "spd":
            g = Isometry.spd(m, cond_cap=cfg.tolerances.cond_cap)
        elif space.kind == "hyperbolic":
            g = Isometry.hyperbolic(m)
        else:
            g = Isometry.euclidean(m, np.zeros(space.dim) if cc.shift is None else np.array(cc.shift, dtype=float))
        return constant_fixture(space, base, g)
    if cc.kind == "translation":
        if space.kind != "euclidean":
            raise InputError("cocycle.kind: translation fixtures need a euclidean space")
        return translation_fixture(base, space.dim, cc.seed, cc.scale, cc.mean)
    if cc.kind == "rotation_coboundary":
        if space.kind == "spd":
            return rotation_coboundary_fixture(base, space.dim, cc.seed, cc.scale)
        if space.kind == "hyperbolic":
            return hyperbolic_coboundary_fixture(base, cc.seed, space.kappa, cc.scale)
        raise InputError("cocycle.kind: rotation_coboundary needs an spd or hyperbolic space")
    return random_bounded_fixture(space, base, cc.seed, cc.scale)


def build_zd(cfg: ExperimentConfig) -> ZdCocycle:
    if cfg.base.kind != "torus":
        raise InputError("base.kind: zd-section needs a torus base")
    space = _space(cfg)
    cc = cfg.cocycle
    if cc.kind == "translation":
        if space.kind != "euclidean":
            raise InputError("cocycle.kind: translation fixtures need a euclidean space")
        c, _ = zd_translation_fixture(cfg.base.shape, space.dim, cc.seed, cc.scale, cc.means)
        return c
    if cc.kind == "identity":
        base = ZdBase.torus(cfg.base.shape)
        return ZdCocycle(base, [[space.identity()] * base.size for _ in range(base.d)], space)
    raise InputError(f"cocycle.kind: '{cc.kind}' is not available for Z^d actions")


# ---------------------------------------------------------------------------
# subcommands


def run_drift(cfg, fx: Fixture, threads: int) -> Outcome:
    out = Outcome("drift", ["N", "drift", "min_orbit_drift", "subadditivity_gap"])
    c, p0 = fx.cocycle, fx.p0
    for n in cfg.sweep.N:
        est = maximal_drift_estimate(c, n, p0)
        lo = min(drift_along_orbit(c, w, n, p0) for w in c.base.states())
        gap = subadditivity_gap(c, n, n, p0)
        out.rows.append({"N": n, "drift": est, "min_orbit_drift": lo, "subadditivity_gap": gap})
        out.check(lo <= est + 1e-12, f"N={n}: orbit drift exceeds the maximum")
        out.check(gap <= 1e-9 * max(1.0, 2 * n * est), f"N={n}: estimates are not subadditive")
    return out


def run_section(cfg, fx: Fixture, threads: int) -> Outcome:
    out = Outcome("section", ["N", "displacement", "bound", "slack"])
    mc = _mean_config(cfg)
    sections = {}
    for n in cfg.sweep.N:
        phi = section_barycenter(fx.cocycle, n, fx.p0, mc, threads)
        d, b = displacement(fx.cocycle, phi), barycenter_bound(fx.cocycle, n, fx.p0)
        out.rows.append({"N": n, "displacement": d, "bound": b, "slack": b - d})
        out.check(d <= b + cfg.tolerances.contract_slack, f"N={n}: displacement {d:.3g} above bound {b:.3g}")
        sections[str(n)] = phi.to_json()
    out.payload["sections"] = sections
    return out


def run_dyadic(cfg, fx: Fixture, threads: int) -> Outcome:
    out = Outcome("dyadic", ["k", "n", "initial", "displacement", "bound", "worst_step_slack"])
    c = fx.cocycle
    if not c.base.invertible:
        raise InputError("base: the dyadic construction needs an invertible base map")
    levels = cfg.sweep.k or [k for k in range(1, 6)]
    slack = cfg.tolerances.dyadic_slack
    phi0 = constant_section(c.space, c.size, fx.p0)
    for k in levels:
        n = 1 << k
        chain = dyadic_sections(c, k, phi0)
        initial = power_displacement(c, phi0, n)
        worst = math.inf
        for j in range(1, k + 1):
            h = n >> j
            before = power_displacement(c, chain[j - 1], 2 * h)
            after = power_displacement(c, chain[j], h)
            worst = min(worst, 0.5 * before - after)
        final = displacement(c, chain[-1])
        bound = initial / n
        out.rows.append({"k": k, "n": n, "initial": initial, "displacement": final, "bound": bound,
                         "worst_step_slack": worst if k else 0.0})
        out.check(k == 0 or worst >= -slack, f"k={k}: a halving step fails by {-worst:.3g}")
        out.check(final <= bound + slack * max(1, k), f"k={k}: final displacement above 2^-k bound")
    return out


def run_zd_section(cfg, zc: ZdCocycle, p0, threads: int) -> Outcome:
    family = FolnerFamily(cfg.zd.family, tuple(cfg.sweep.N))
    out = Outcome("zd-section", ["N", "generator", "defect", "bound"])
    mc = _mean_config(cfg)
    growth = ball_growth_constant(zc.d, cfg.sweep.N) if family.shape == "l1ball" else None
    for n in cfg.sweep.N:
        phi = zd_section(zc, family, n, p0, mc, threads=threads)
        ball_bound = ball_defect_bound(zc, n, p0, growth) if growth is not None else None
        for i in range(zc.d):
            e = tuple(1 if j == i else 0 for j in range(zc.d))
            defect = max(zc.space.distance(zc.step(i, 1, w)(phi[w]), phi[zc.base.act(e, w)])
                         for w in zc.base.states())
            bound = cube_defect_bound(zc, i, n, p0) if ball_bound is None else ball_bound
            out.rows.append({"N": n, "generator": i + 1, "defect": defect, "bound": bound})
            out.check(defect <= bound + cfg.tolerances.contract_slack, f"N={n}, e{i + 1}: defect above bound")
    if growth is not None:
        out.payload["growth_constant"] = growth
    return out


def _stage_rows(cfg, fx: Fixture, threads: int, out: Outcome, conjugate: bool) -> None:
    mc = _mean_config(cfg)
    c, p0 = fx.cocycle, fx.p0
    for n in cfg.sweep.N:
        phi = section_barycenter(c, n, p0, mc, threads)
        tilde, rep = perturb_cocycle(c, phi, p0, n=n)
        _, crep = conjugate_to_stabilizer(tilde, phi, p0, n)
        rep = rep.merged(crep)
        row = {"N": n, "displacement": rep.displacement_before, "perturbation_size": rep.perturbation_size,
               "stabilizer_residual": rep.stabilizer_residual, "orthogonality_defect": rep.orthogonality_defect}
        if conjugate:
            _, nrep = nonperturbative_conjugate(c, phi, p0, n)
            row["nonperturbative_residual"] = nrep.stabilizer_residual
            out.check(nrep.stabilizer_residual <= rep.displacement_before + 1e-8,
                      f"N={n}: unperturbed conjugate moves p0 more than the displacement")
        else:
            row["perturbation_bound"] = perturbation_bound(c, phi, p0)
            out.check(rep.perturbation_size <= row["perturbation_bound"] + 1e-9,
                      f"N={n}: perturbation size above its a priori bound")
        out.rows.append(row)
        out.payload.setdefault("reports", []).append(rep.to_json())
    _final_checks(cfg, out)


def _final_checks(cfg, out: Outcome) -> None:
    t = cfg.tolerances
    rep = out.payload["reports"][-1]
    n = rep["N"]
    out.check(rep["invariance_residual"] <= t.invariance, f"N={n}: invariance residual {rep['invariance_residual']:.3g}")
    out.check(rep["stabilizer_residual"] <= t.stabilizer, f"N={n}: stabilizer residual {rep['stabilizer_residual']:.3g}")
    if t.orthogonality is not None and rep["orthogonality_defect"] is not None:
        out.check(rep["orthogonality_defect"] <= t.orthogonality,
                  f"N={n}: orthogonality defect {rep['orthogonality_defect']:.3g}")


def run_perturb(cfg, fx: Fixture, threads: int) -> Outcome:
    out = Outcome("perturb", PERTURB_COLUMNS + ["perturbation_bound"])
    _stage_rows(cfg, fx, threads, out, conjugate=False)
    return out


def run_conjugate(cfg, fx: Fixture, threads: int) -> Outcome:
    out = Outcome("conjugate", PERTURB_COLUMNS + ["nonperturbative_residual"])
    _stage_rows(cfg, fx, threads, out, conjugate=True)
    return out


def run_pipeline(cfg, fx: Fixture, threads: int) -> Outcome:
    c, p0 = fx.cocycle, fx.p0
    if c.space.kind != "spd":
        raise InputError("space.kind: the matrix pipeline needs the spd backend")
    out = Outcome("pipeline", PERTURB_COLUMNS + ["drift"])
    diag = subexponential_diagnostic(c, cfg.sweep.N)
    out.payload["growth_diagnostic"] = [{"N": n, "value": v} for n, v in diag]
    values = [v for _, v in diag]
    decreasing = len(values) < 2 or values[-1] < values[0] or values[0] == 0
    out.check(decreasing, "growth diagnostic does not decrease; the cocycle looks like it has positive drift")
    if not decreasing:
        warnings.warn("growth diagnostic does not decrease", SubexponentialWarning, stacklevel=2)
    mc = _mean_config(cfg)
    for n in cfg.sweep.N:
        try:
            stage = pipeline_stage(c, n, p0, mc, threads)
        except (GeometryError, ConvergenceError) as exc:
            out.check(False, f"N={n}: closing construction broke down ({exc})")
            out.rows.append({"N": n, "drift": maximal_drift_estimate(c, n, p0)})
            continue
        rep = stage.report
        out.rows.append({"N": n, "displacement": rep.displacement_before,
                         "perturbation_size": rep.perturbation_size,
                         "stabilizer_residual": rep.stabilizer_residual,
                         "orthogonality_defect": rep.orthogonality_defect,
                         "drift": maximal_drift_estimate(c, n, p0)})
        out.payload.setdefault("reports", []).append(rep.to_json())
        out.payload.setdefault("perturbed_matrices", {})[str(n)] = [g.tolist() for g in stage.perturbed_matrices]
    if "reports" in out.payload:
        _final_checks(cfg, out)
    return out


def run_verify(space, trials: int, seed: int) -> Outcome:
    out = Outcome("verify", ["kind", "trials", "min_slack", "passed"])
    rep = verify_displacement_bound(space, trials, seed)
    out.rows.append({"kind": rep.kind, "trials": rep.trials, "min_slack": rep.min_slack, "passed": rep.passed})
    out.payload["report"] = rep.to_json()
    out.check(rep.passed, f"displacement bound check failed (min slack {rep.min_slack:.3g})")
    return out


def run_fixtures(cfg, fx: Fixture) -> Outcome:
    out = Outcome("fixtures", ["state", "displacement_of_origin"])
    c = fx.cocycle
    for w in c.base.states():
        out.rows.append({"state": w, "displacement_of_origin": c.space.distance(c.generators[w](fx.p0), fx.p0)})
    out.payload["fixture"] = fixture_to_json(fx, cfg.cocycle.seed)
    if "raw" in fx.extras:
        out.payload["fixture"]["raw"] = [g.tolist() for g in fx.extras["raw"]]
    return out


# ---------------------------------------------------------------------------
# output


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(out: Outcome) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(out.columns)
    for row in out.rows:
        w.writerow([_cell(row.get(k)) for k in out.columns])
    return buf.getvalue()


def render_json(out: Outcome, meta: dict) -> str:
    doc = {"command": out.command, **meta, "rows": out.rows, "failures": out.failures,
           "passed": not out.failures, **out.payload}
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def write_outputs(out: Outcome, directory: Path, formats: Sequence[str], meta: dict) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    stem = out.command.replace("-", "_")
    written = []
    if "csv" in formats:
        p = directory / f"{stem}.csv"
        p.write_text(render_csv(out))
        written.append(p)
    if "json" in formats:
        p = directory / f"{stem}.json"
        p.write_text(render_json(out, meta))
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config")
    common.add_argument("--seed", type=int, help="override the fixture seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--format", choices=("json", "csv", "both"), help="report formats (overrides output.formats)")
    common.add_argument("--threads", type=int, help="worker threads; falls back to COCYCLONE_THREADS, then 1")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="cocyclone", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "verify":
            p.add_argument("--space", choices=("euclidean", "hyperbolic", "spd"))
            p.add_argument("--dim", type=int)
            p.add_argument("--kappa", type=float)
            p.add_argument("--trials", type=int)
    return parser


def _threads(arg: int | None) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get("COCYCLONE_THREADS", "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise InputError(f"COCYCLONE_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise InputError("thread count must be positive")
    return n


def _formats(args, cfg: ExperimentConfig | None) -> list[str]:
    if args.format == "both":
        return ["json", "csv"]
    if args.format:
        return [args.format]
    return list(cfg.output.formats) if cfg else ["json", "csv"]


def _verify(args, cfg: ExperimentConfig | None, seed: int | None) -> Outcome:
    kind = args.space or (cfg.space.kind if cfg else None)
    if kind is None:
        raise InputError("verify needs --space or a config with a [space] table")
    desc = {"kind": kind}
    dim = args.dim if args.dim is not None else (cfg.space.dim if cfg and cfg.space.kind == kind else None)
    kappa = args.kappa if args.kappa is not None else (cfg.space.kappa if cfg and cfg.space.kind == kind else None)
    if dim is not None:
        desc["dim"] = dim
    if kappa is not None:
        desc["kappa"] = kappa
    trials = args.trials if args.trials is not None else (cfg.verify.trials if cfg else 10_000)
    if seed is None:
        raise InputError("verify needs --seed or cocycle.seed in the config")
    return run_verify(make_space(SpaceDescriptor.from_json(desc)), trials, seed)


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args.threads)
        cfg = load_config(args.config) if args.config else None
        if cfg is None and args.command != "verify":
            raise InputError(f"{args.command} needs --config")
        if args.seed is not None and not 0 <= args.seed < 1 << 64:
            raise InputError("--seed must be an unsigned 64-bit integer")
        if cfg is not None and args.seed is not None:
            cfg = cfg.model_copy(update={"cocycle": cfg.cocycle.model_copy(update={"seed": args.seed})})
        seed = args.seed if args.seed is not None else (cfg.cocycle.seed if cfg else None)
        out_dir = args.out or Path(cfg.output.dir if cfg else "out")
        formats = _formats(args, cfg)

        if args.command == "verify":
            outcome = _verify(args, cfg, seed)
        elif args.command == "zd-section":
            zc = build_zd(cfg)
            outcome = run_zd_section(cfg, zc, zc.space.origin(), threads)
        else:
            fx = build_fixture(cfg, args.config.parent)
            log.info("fixture %s on %s over %d states", fx.name, fx.space.kind, fx.cocycle.size)
            runner = {"drift": run_drift, "section": run_section, "dyadic": run_dyadic, "perturb": run_perturb,
                      "conjugate": run_conjugate, "pipeline": run_pipeline}.get(args.command)
            outcome = run_fixtures(cfg, fx) if runner is None else runner(cfg, fx, threads)
    except (ConfigError, InputError, GeometryError, BaseMismatchError, CompatibilityError, ConvergenceError,
            FileNotFoundError, KeyError, ValueError) as exc:
        print(f"cocyclone: error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    meta = {"seed": seed}
    if cfg is not None:
        meta["config"] = cfg.model_dump(mode="json")
    for p in write_outputs(outcome, out_dir, formats, meta):
        log.info("wrote %s", p)
    if outcome.failures:
        for msg in outcome.failures:
            print(f"cocyclone: invariant failed: {msg}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
