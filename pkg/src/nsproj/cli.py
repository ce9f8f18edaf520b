"""Command-line driver.

    nsproj <command> [--config PATH] [--seed U64] [--workers N] [--out DIR]
                     [--format {csv,json}]

Commands: simulate, saturate, density, jacobian, tv, stationary, support.
Exit codes: 0 success or affirmative finding, 1 negative finding, 2 input
error, 3 numerical failure.

The config is YAML (JSON also parses) with the blocks ``model``, ``physics``,
``law``, ``projection`` and ``run``, plus an optional block named after the
command.  Its text is echoed verbatim into ``manifest.json``.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .control import (ball_grid, bad_time_scan, jacobian, rank_report, smallest_surjective_k)
from .density import (EnsembleDivergence, ForcingModel, _rows_forcing, atom_test,
                      ball_mass_curve, kde, run_ensemble, stationary_ensemble, support_table,
                      tv_continuity_curve)
from .dynamics import (DivergenceError, ForcingSignal, SimParams, Trajectory, resolve_coeffs,
                       substituted_resolve)
from .forcing import LAWS, CoefficientLaw, RngStream, b_rule
from .fourier_torus import BasisId, SubspaceSpec, basis, basis_manifest
from .io import dumps_json, table_csv, write_ensemble, write_text
from .saturation import SetLiteralError, SymmetricSet, saturating_within, subspace_of

log = logging.getLogger("nsproj")

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
_U64 = (1 << 64) - 1


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _ids(spec, what: str) -> SubspaceSpec:
    """Ids from a list of labels, ``{first_n: N}`` or ``{generator: literal}``."""
    if isinstance(spec, dict):
        if "first_n" in spec:
            return SubspaceSpec.first_n(int(spec["first_n"]), bool(spec.get("include_mean", False)))
        if "generator" in spec:
            return subspace_of(SymmetricSet.parse(str(spec["generator"])), 10 ** 6,
                               bool(spec.get("include_mean", False)))
        raise ConfigError(f"{what}: expected 'first_n' or 'generator'")
    if isinstance(spec, str):
        spec = [s for s in spec.replace(" ", "").replace("),(", ");(").split(";") if s]
    if not isinstance(spec, list):
        raise ConfigError(f"{what}: expected a list of basis ids")
    try:
        return SubspaceSpec.of([str(s) for s in spec])
    except ValueError as e:
        raise ConfigError(f"{what}: {e}") from None


@dataclass
class ExperimentConfig:
    params: SimParams
    model: ForcingModel
    F: SubspaceSpec
    run: dict
    extra: dict = field(default_factory=dict)
    text: str = ""

    @property
    def M(self) -> int:
        return self.params.M

    def u0(self) -> np.ndarray:
        spec = self.run.get("u0", "zero")
        c = np.zeros(basis(self.M).size)
        if spec in (None, "zero", 0):
            return c
        if not isinstance(spec, dict):
            raise ConfigError("run.u0 must be 'zero' or a map from basis id to value")
        b = basis(self.M)
        for key, val in spec.items():
            bid = BasisId.parse(str(key))
            if bid.radius > self.M:
                raise ConfigError(f"run.u0: basis id {bid} outside truncation M={self.M}")
            c[b.idx(bid)] = float(val)
        return c

    def section(self, name: str) -> dict:
        sec = self.extra.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"block '{name}' must be a mapping")
        return sec


def _law(block: dict) -> CoefficientLaw:
    ids = _ids(block.get("ids", {"first_n": 4}), "law.ids")
    name = block.get("law", "gaussian")
    if name not in LAWS:
        raise ConfigError(f"law.law: unknown scalar law {name!r}")
    if "b" in block:
        b = np.asarray(block["b"], dtype=np.float64)
        if b.shape != (ids.dim,):
            raise ConfigError("law.b: need one amplitude per id")
        return CoefficientLaw(ids, b, (LAWS[name],), "explicit")
    rule = block.get("rule", "ones")
    try:
        b = b_rule(rule, ids.dim, float(block.get("scale", 1.0)))
    except ValueError as e:
        raise ConfigError(f"law.rule: {e}") from None
    return CoefficientLaw(ids, b, (LAWS[name],), rule)


def _block(raw: dict, name: str) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"block '{name}' must be a mapping")
    return dict(sec)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of blocks")
    phys = _block(raw, "physics")
    try:
        params = SimParams(nu=float(phys.pop("nu", 0.1)), M=int(phys.pop("M", 4)),
                           dt=float(phys.pop("dt", 0.01)),
                           integrator=str(phys.pop("integrator", "exp_rk4")),
                           nonlinearity=str(phys.pop("nonlinearity", "direct_convolution")))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"physics: {e}") from None
    if phys:
        raise ConfigError(f"physics: unknown keys {sorted(phys)}")
    law = _law(_block(raw, "law"))
    mblock = _block(raw, "model")
    try:
        model = ForcingModel(str(mblock.get("kind", "kick")), law, T=float(mblock.get("T", 1.0)),
                             tau=float(mblock.get("tau", 1.0)),
                             noise_dt=float(mblock.get("noise_dt", 0.01)))
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None
    proj = raw.get("projection") or {}
    F = _ids(proj.get("F", {"first_n": 2}) if isinstance(proj, dict) else proj, "projection.F")
    cfg = ExperimentConfig(params, model, F, _block(raw, "run"),
                           {k: v for k, v in raw.items()
                            if k not in ("physics", "law", "model", "projection", "run")}, text)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    M = cfg.M
    for what, spec in (("projection.F", cfg.F), ("law.ids", cfg.model.law.ids)):
        for bid in spec:
            if bid.radius > M:
                raise ConfigError(f"{what}: basis id {bid} outside truncation M={M}")
    cfg.u0()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

class Output:
    def __init__(self, out: Path, fmt: str, manifest: dict):
        self.out = out
        self.fmt = fmt
        self.manifest = manifest
        out.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, text: str):
        write_text(self.out / name, text)
        self.manifest.setdefault("files", []).append(name)

    def report(self, name: str, obj: dict, table=None):
        """JSON report, or CSV table when ``--format csv`` and a table exists."""
        if self.fmt == "csv" and table is not None:
            self.text(name + ".csv", table_csv(*table))
        else:
            self.text(name + ".json", dumps_json(obj))

    def finish(self, status: int):
        self.manifest["exit_code"] = status
        write_text(self.out / "manifest.json", dumps_json(self.manifest))


def _t_end(cfg: ExperimentConfig) -> float:
    run = cfg.run
    if "t" in run:
        return float(run["t"])
    if "k" in run:
        return float(run["k"]) * cfg.model.T
    raise ConfigError("run: need 't' or 'k'")


def cmd_simulate(cfg, args, out: Output) -> int:
    p = cfg.params
    t = _t_end(cfg)
    snaps = int(cfg.run.get("snapshots", 11))
    rec = list(np.linspace(0.0, t, max(snaps, 2)))
    f = _rows_forcing(cfg.model, p.M, t, [RngStream(args.seed, 0)])
    f = ForcingSignal(p.M, f.kind, f.times, f.values[:, 0])
    traj = Trajectory(p.M)
    if cfg.model.kind == "white":
        # the shifted solve only returns its end state, so restart per snapshot
        traj.times.extend(rec)
        traj.states.extend(substituted_resolve(cfg.u0(), None, f, s, p).coeffs for s in rec)
    else:
        resolve_coeffs(cfg.u0(), f, t, p, record=rec, trajectory=traj)
    b = basis(p.M)
    header = ["t", "energy"] + [str(i) for i in b.ids]
    rows = [[float(s), 0.5 * float(c @ c)] + [float(x) for x in c]
            for s, c in zip(traj.times, traj.states)]
    out.text("trajectory.csv", table_csv(header, rows))
    final = np.asarray(traj.states[-1])
    out.report("summary", {"t": t, "energy_final": 0.5 * float(final @ final),
                           "projection": dict(zip(cfg.F.labels(), final[cfg.F.indices(p.M)].tolist()))},
               (["t", "energy"], [r[:2] for r in rows]))
    return EXIT_OK


def cmd_saturate(cfg, args, out: Output) -> int:
    sec = cfg.section("saturate") if cfg is not None else {}
    lit = args.set or sec.get("set")
    if not lit:
        raise ConfigError("saturate: need a set literal")
    try:
        K = SymmetricSet.parse(str(lit))
    except (SetLiteralError, ValueError) as e:
        raise ConfigError(str(e)) from None
    R = args.R if args.R is not None else int(sec.get("R", 5))
    it = args.max_iter if args.max_iter is not None else int(sec.get("max_iter", 10))
    rep = saturating_within(K, R, it)
    d = rep.to_dict()
    out.report("coverage", d, (["iteration", "new_points"], list(enumerate(rep.frontier_sizes))))
    if rep.fixed_point and not rep.covered:
        print(f"fixed point reached at iteration {rep.iters}: no growth", file=sys.stderr)
    print(f"{rep.status}: R={R} iters={rep.iters} missing={len(rep.missing)}")
    return EXIT_OK if rep.covered else EXIT_NEGATIVE


def _ensemble(cfg, args, t):
    n = int(cfg.run.get("n", 1000))
    return run_ensemble(cfg.model, cfg.u0(), cfg.F, t, n, cfg.params, args.seed,
                        chunk=int(cfg.run.get("chunk", 2048)), workers=args.workers)


def _density_report(S, sec) -> tuple[dict, bool]:
    q = float(sec.get("q", 1e-6))
    tol = float(sec.get("slope_tol", 0.2))
    mult = atom_test(S, q)
    bm = ball_mass_curve(S, standardize=bool(sec.get("standardize", True)))
    lo, hi = (1 - tol) * S.d, (1 + tol) * S.d
    rep = {"n": S.n, "d": S.d, "q": q, "atom_multiplicity": mult, "atom_flag": mult > 1,
           "ball_slope": bm.slope, "slope_window": [lo, hi],
           "slope_ok": lo <= bm.slope <= hi, "ball_mass": bm.to_dict()}
    if S.d <= 3:
        rep["kde_integral"] = kde(S).integral()
    ok = (mult == 1) and rep["slope_ok"]
    rep["absolutely_continuous_indicators"] = ok
    return rep, ok


def _ball_table(rep):
    return (["r", "hits", "mass", "ci_lo", "ci_hi"],
            [list(r.values()) for r in rep["ball_mass"]["table"]])


def cmd_density(cfg, args, out: Output) -> int:
    S = _ensemble(cfg, args, _t_end(cfg))
    S.save(out.out / "ensemble.bin")
    out.manifest.setdefault("files", []).extend(["ensemble.bin", "ensemble.bin.json"])
    rep, ok = _density_report(S, cfg.section("density"))
    out.report("density", rep, _ball_table(rep))
    print(f"atom multiplicity {rep['atom_multiplicity']}, ball slope {rep['ball_slope']:.3f}")
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_stationary(cfg, args, out: Output) -> int:
    sec = cfg.section("stationary")
    S = stationary_ensemble(cfg.model, cfg.u0(), cfg.F, int(sec.get("burn_in", 200)),
                            int(sec.get("k_max", 2200)), int(sec.get("stride", 2)),
                            cfg.params, args.seed)
    S.save(out.out / "ensemble.bin")
    out.manifest.setdefault("files", []).extend(["ensemble.bin", "ensemble.bin.json"])
    rep, ok = _density_report(S, sec)
    rep["dependent_rows"] = True
    out.report("stationary", rep, _ball_table(rep))
    print(f"atom multiplicity {rep['atom_multiplicity']}, ball slope {rep['ball_slope']:.3f}")
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_jacobian(cfg, args, out: Output) -> int:
    sec = cfg.section("jacobian")
    p = cfg.params
    T = float(sec.get("T", cfg.model.T))
    k = int(sec.get("k", cfg.run.get("k", 1)))
    tol = float(sec.get("tol_rel", 1e-6))
    law = cfg.model.law
    H0 = law.forced()
    if "k_max" in sec:
        kmin, table = smallest_surjective_k(T, cfg.u0(), law, cfg.F, p, int(sec["k_max"]),
                                            args.seed, tol)
        out.report("k_sweep", {"smallest_surjective_k": kmin, "table": table},
                   (["k", "rank", "surjective"], [list(r.values()) for r in table]))
        print(f"smallest surjective k: {kmin}")
        return EXIT_OK if kmin is not None else EXIT_NEGATIVE
    if "T_grid" in sec:
        rows = bad_time_scan([float(x) for x in sec["T_grid"]], cfg.u0(), law, cfg.F, p, k,
                             int(sec.get("n_draws", 1)), args.seed, tol)
        out.report("bad_times", {"rows": rows},
                   (["T", "max_rank", "dim_F", "flagged"],
                    [[r["T"], r["max_rank"], r["dim_F"], r["flagged"]] for r in rows]))
        flagged = [r["T"] for r in rows if r["flagged"]]
        print(f"flagged T values: {flagged}")
        return EXIT_NEGATIVE if flagged else EXIT_OK
    kicks = law.draw(RngStream(args.seed, 0).generator(), p.M, (k,))
    J = jacobian(T, cfg.u0(), kicks, H0, cfg.F, p, str(sec.get("method", "tangent")),
                 float(sec.get("eps_fd", 1e-4)))
    rr = rank_report(J, tol)
    out.text("jacobian.csv", J.to_csv())
    out.report("rank", {"meta": J.meta, **rr.to_dict()},
               (["index", "singular_value"], list(enumerate(rr.singular_values))))
    print(f"rank {rr.rank} of dim F = {rr.dim_F}")
    return EXIT_OK if rr.surjective else EXIT_NEGATIVE


def cmd_tv(cfg, args, out: Output) -> int:
    sec = cfg.section("tv")
    p = cfg.params
    amps = [float(a) for a in sec.get("amplitudes", [0.4, 0.2, 0.1, 0.05])]
    b = basis(p.M)
    e = np.zeros(b.size)
    direction = sec.get("direction", str(cfg.F.ids[0]))
    bid = BasisId.parse(str(direction))
    if bid.radius > p.M:
        raise ConfigError(f"tv.direction: basis id {bid} outside truncation M={p.M}")
    e[b.idx(bid)] = 1.0
    res = tv_continuity_curve(cfg.model, cfg.u0(), e, amps, cfg.F, _t_end(cfg),
                              int(cfg.run.get("n", 1000)), p, args.seed,
                              int(sec.get("bins", 16)), int(sec.get("n_boot", 200)),
                              args.workers)
    thr = float(sec.get("threshold", 0.1))
    res["threshold"] = thr
    res["smallest_below_threshold"] = res["rows"][-1]["tv"] < thr
    keys = ["amplitude", "tv", "ci_lo", "ci_hi"]
    out.report("tv", res, (keys, [[r[k] for k in keys] for r in res["rows"]]))
    for r in res["rows"]:
        print(f"a={r['amplitude']:g} tv={r['tv']:.4f} [{r['ci_lo']:.4f}, {r['ci_hi']:.4f}]")
    ok = res["monotone_within_ci"] and res["smallest_below_threshold"]
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_support(cfg, args, out: Output) -> int:
    sec = cfg.section("support")
    if cfg.F.dim > 3:
        raise ConfigError("support: target grid needs dim F <= 3")
    S = _ensemble(cfg, args, _t_end(cfg))
    radius = float(sec.get("radius", 1.0))
    per = int(sec.get("per_axis", 5))
    # square grid inscribed in the ball
    ax = np.linspace(-radius / math.sqrt(cfg.F.dim), radius / math.sqrt(cfg.F.dim), per)
    Y = np.stack(np.meshgrid(*([ax] * cfg.F.dim), indexing="ij"), -1).reshape(-1, cfg.F.dim)
    if sec.get("grid") == "ball":
        Y = ball_grid(cfg.F.dim, radius, per)
    eps = float(sec.get("eps", 0.25))
    table = support_table(S, Y, eps)
    allpos = all(r["hits"] > 0 for r in table)
    out.report("support", {"eps": eps, "n": S.n, "all_positive": allpos, "targets": table},
               (["target", "hits", "ci_lo", "ci_hi"],
                [[" ".join(repr(v) for v in r["target"]), r["hits"], r["ci"][0], r["ci"][1]]
                 for r in table]))
    print(f"{sum(r['hits'] > 0 for r in table)}/{len(table)} targets hit")
    return EXIT_OK if allpos else EXIT_NEGATIVE


COMMANDS = {
    "simulate": cmd_simulate,
    "saturate": cmd_saturate,
    "density": cmd_density,
    "jacobian": cmd_jacobian,
    "tv": cmd_tv,
    "stationary": cmd_stationary,
    "support": cmd_support,
}


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= _U64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so flags given before the command survive
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=d(None),
                        help="YAML or JSON experiment config")
    common.add_argument("--seed", type=_u64, default=d(None), metavar="U64",
                        help="base seed (overrides run.seed)")
    common.add_argument("--workers", type=_positive, default=d(1), metavar="N",
                        help="worker processes for ensembles")
    common.add_argument("--out", metavar="DIR", default=d("out"), help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default=d("json"),
                        help="report format")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsproj", description=__doc__.split("\n\n")[0],
                                 parents=[_common(False)])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[_common(True)])
        if name == "saturate":
            sp.add_argument("set", nargs="?", default=None, help='set literal like "(1,0),(1,1)"')
            sp.add_argument("--R", type=int, default=None, help="box radius")
            sp.add_argument("--max-iter", type=int, default=None)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        text = Path(args.config).read_text() if args.config else ""
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = parse_config(text) if (text or args.command != "saturate") else None
        if cfg is not None and args.seed is None:
            args.seed = _u64(str(cfg.run.get("seed", 0)))
        if args.seed is None:
            args.seed = 0
        manifest = {"command": args.command, "version": __version__, "seed": args.seed,
                    "workers": args.workers, "format": args.format, "config_text": text}
        if cfg is not None:
            manifest["params"] = cfg.params.to_dict()
            manifest["model"] = cfg.model.to_config()
            manifest["F"] = cfg.F.labels()
        out = Output(Path(args.out), args.format, manifest)
        if cfg is not None:
            basis_manifest(cfg.M, out.out / "basis.json")
            manifest.setdefault("files", []).append("basis.json")
        status = COMMANDS[args.command](cfg, args, out)
    except (ConfigError, ValueError, argparse.ArgumentTypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergenceError, EnsembleDivergence, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        try:
            out.finish(EXIT_NUMERIC)
        except NameError:
            pass
        return EXIT_NUMERIC
    out.finish(status)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
