"""Command line driver: decompose, build, certify, orbit, equidist, dim."""
from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
import json
import math
import os
from pathlib import Path
import sys

import mpmath as mp
import numpy as np

from . import algebra, certify, modular, tessellation, tree as tr

EXIT_OK, EXIT_USAGE, EXIT_STEP, EXIT_INTEGRITY, EXIT_CHECK = 0, 2, 3, 4, 1

NAMED_ALPHAS = {"phi": lambda: (1 + mp.sqrt(5)) / 2, "sqrt2": lambda: mp.sqrt(2), "sqrt3": lambda: mp.sqrt(3)}


@dataclass
class RunConfig:
    preset: str = "sl2"
    epsilon: float = 0.3
    margin: float = 0.01
    r: float = 0.05
    t: float = 4.0
    depth: int = 6
    n0: int = 4
    approach_levels: list = None
    eps_seq: list = None
    sigma: float = 0.05
    targets: list = field(default_factory=lambda: [math.sqrt(2)])
    x0: list = None
    beam: int = 8
    seed: int = 20240601
    mc_samples: int = 1_000_000
    limit_samples: int = 2000
    certify_dt: float = 0.01

    def schedule(self):
        if self.approach_levels is None:
            s = tr.Schedule.default(self.t, self.depth, self.n0, 4 * self.sigma, tuple(self.targets))
            if self.eps_seq is not None:
                s = tr.Schedule(s.t, s.depth, s.approach_levels, tuple(self.eps_seq), s.sigma, s.targets)
            return s
        eps = self.eps_seq if self.eps_seq is not None else [2.0 ** -n for n in range(1, len(self.approach_levels) + 1)]
        return tr.Schedule(self.t, self.depth, tuple(self.approach_levels), tuple(eps), self.sigma,
                           tuple(self.targets))

    def base_point(self):
        if self.x0 is None:
            # hexagonal lattice, the point of largest systole
            g = np.array([[1, 0.5], [0, 1]]) @ np.diag([3 ** 0.25 / 2 ** 0.5, 2 ** 0.5 / 3 ** 0.25])
        else:
            g = np.array(self.x0, dtype=float)
        return modular.reduce(g)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


def load_config(path):
    """A file path, or the name of a shipped config such as ``sl2_demo``."""
    p = Path(path)
    if not p.exists():
        name = p.name if p.suffix == ".json" else p.name + ".json"
        res = resources.files("orbittree") / "configs" / name
        if not res.is_file():
            raise FileNotFoundError(path)
        return RunConfig.from_json(res.read_text())
    return RunConfig.from_json(p.read_text())


def _write(path, text):
    Path(path).write_text(text)


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False, default=float)


def _finite(d):
    """Replace non-finite floats by None so reports stay valid JSON."""
    if isinstance(d, dict):
        return {k: _finite(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_finite(v) for v in d]
    if isinstance(d, float) and not math.isfinite(d):
        return None
    return d


def parse_alpha(text):
    """Real number as an mpf at the current precision; also accepts phi, sqrt2, sqrt3."""
    if text in NAMED_ALPHAS:
        return NAMED_ALPHAS[text]()
    try:
        return mp.mpf(text)
    except (ValueError, TypeError) as exc:
        raise ValueError(f"cannot parse alpha {text!r}") from exc


# ---------------------------------------------------------------- commands

def cmd_decompose(preset):
    d = algebra.weight_decomposition(algebra.get_preset(preset))
    h, n, hm = d.dims
    return (f"dim h={h} n={n} h−={hm}, χ={d.chi:g}, λ_min={d.lambda_min:g}, "
            f"budget={tr.dimension_budget(d)}")


def cmd_build(cfg, out, threads=None, log=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    decomp = algebra.weight_decomposition(algebra.get_preset(cfg.preset))
    if cfg.preset not in modular.SUPPORTED_PRESETS:
        raise modular.UnsupportedPreset(f"build supports {modular.SUPPORTED_PRESETS} only")
    tess = tessellation.make_tessellation(decomp, cfg.r)
    window = modular.CompactWindow(cfg.epsilon, cfg.margin)
    tree = tr.build_tree(cfg.base_point(), cfg.schedule(), tess, window, beam=cfg.beam,
                         threads=threads, log=log)
    _write(out / "tree.json", tr.export_tree(tree))
    if tree.diagnosis is not None:
        _write(out / "diagnosis.json", _dumps(tree.diagnosis))
        return EXIT_STEP
    _write(out / "report.json", _dumps(_finite(build_report(tree, cfg, decomp, threads))))
    return EXIT_OK


def build_report(tree, cfg, decomp, threads=None):
    budget = tr.dimension_budget(decomp)
    est = modular.measure_estimate(modular.CompactWindow(cfg.epsilon), cfg.mc_samples, cfg.seed,
                                   threads=threads)
    rep = {"treelike": tr.verify_treelike(tree), "levels": [len(l) for l in tree.levels],
           "Times": tree.Times, "pruned": len(tree.pruned), "m_hat": est.value, "m_hat_stderr": est.stderr}
    if tree.depth >= 1:
        box = math.nan
        pts, reached = certify.sample_limit_random(tree, cfg.limit_samples, cfg.seed)
        try:
            box = certify.box_counting_estimate(pts, certify.auto_scales(pts, 2 * tree.r))
        except ValueError:
            pass
        try:
            dim = tr.dimension_report(tree, budget, box, est.value)
            rep["dimension"] = dim.to_dict()
        except ValueError as exc:
            rep["dimension"] = {"error": str(exc), "budget": budget}
        rep["limit_sample_level"] = reached
    return rep


def cmd_certify(tree_path, cfg, out=None):
    text = Path(tree_path).read_text()
    tree = tr.load_tree(text)
    dt = cfg.certify_dt if cfg is not None else 0.01
    rep = {"treelike": tr.verify_treelike(tree),
           "bounded": certify.check_bounded(tree, dt=dt, strict_margin=tree.margin / max(tree.epsilon, 1e-300)),
           "approach": certify.check_approach(tree)}
    ok = rep["treelike"]["passed"] and rep["bounded"]["passed"] and rep["approach"]["passed"]
    rep["passed"] = ok
    text = _dumps(_finite(rep))
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        _write(Path(out) / "certify.json", text)
    return (EXIT_OK if ok else EXIT_CHECK), text


def cmd_orbit(alpha, t_max, dt, matrix=None, target=None):
    if not dt > 0:
        raise ValueError("dt must be positive")
    with mp.workdps(modular.mp_workdps(t_max)):
        if matrix is not None:
            basis = modular.mp_from_matrix(np.array(matrix, dtype=float))
        else:
            a = parse_alpha(alpha)
            basis = ((mp.mpf(1), mp.mpf(0)), (a, mp.mpf(1)))
        y = None if target is None else modular.point_from_alpha(float(parse_alpha(target)))
        prof = certify.orbit_profile(basis, t_max, dt, target=y)
    return prof.to_csv()


def cmd_equidist(alpha, t, r, eps_q, samples, seed, mc_samples):
    x = modular.point_from_alpha(float(parse_alpha(alpha)))
    obs, m, se = certify.equidistribution_check(x, t, r, modular.CompactWindow(eps_q), samples, seed,
                                                mc_samples)
    return {"observed": obs, "m_hat": m, "stderr": se, "passed": abs(obs - m) < 3 * se + 0.02}


def cmd_dim(tree_path, preset="sl2"):
    tree = tr.load_tree(Path(tree_path).read_text())
    rep = tr.dimension_report(tree, tr.dimension_budget(algebra.weight_decomposition(algebra.get_preset(preset))))
    return rep, tr.report_csv(rep)


# -------------------------------------------------------------------- main

def _parser():
    p = argparse.ArgumentParser(prog="orbittree", description=__doc__)
    p.add_argument("--threads", type=int, default=os.cpu_count())
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("decompose")
    s.add_argument("--preset", default="sl2")

    s = sub.add_parser("build")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--preset")

    s = sub.add_parser("certify")
    s.add_argument("tree")
    s.add_argument("--config")
    s.add_argument("--out")

    s = sub.add_parser("orbit")
    s.add_argument("--alpha", default="0")
    s.add_argument("--matrix", type=json.loads)
    s.add_argument("--target")
    s.add_argument("--t-max", type=float, required=True)
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--out")

    s = sub.add_parser("equidist")
    s.add_argument("--alpha", default="0.37")
    s.add_argument("--t", type=float, default=8.0)
    s.add_argument("--r", type=float, default=0.05)
    s.add_argument("--eps", type=float, default=0.5)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--mc-samples", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("dim")
    s.add_argument("tree")
    s.add_argument("--preset", default="sl2")
    s.add_argument("--out")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "decompose":
            print(cmd_decompose(args.preset))
            return EXIT_OK
        if args.cmd == "build":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            if args.preset is not None:
                cfg.preset = args.preset
            code = cmd_build(cfg, args.out, args.threads, log=lambda m: print(m, file=sys.stderr))
            if code == EXIT_STEP:
                print((Path(args.out) / "diagnosis.json").read_text(), file=sys.stderr)
            return code
        if args.cmd == "certify":
            cfg = load_config(args.config) if args.config else None
            code, text = cmd_certify(args.tree, cfg, args.out)
            print(text)
            return code
        if args.cmd == "orbit":
            text = cmd_orbit(args.alpha, args.t_max, args.dt, args.matrix, args.target)
            if args.out:
                _write(args.out, text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        if args.cmd == "equidist":
            rep = cmd_equidist(args.alpha, args.t, args.r, args.eps, args.samples, args.seed, args.mc_samples)
            print(_dumps(rep))
            return EXIT_OK if rep["passed"] else EXIT_CHECK
        if args.cmd == "dim":
            rep, csv = cmd_dim(args.tree, args.preset)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                _write(Path(args.out) / "dimension.json", _dumps(_finite(rep.to_dict())))
                _write(Path(args.out) / "dimension.csv", csv)
            print(_dumps(_finite(rep.to_dict())))
            return EXIT_OK
    except tr.IntegrityError as exc:
        print(f"integrity: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE
