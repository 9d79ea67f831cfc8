"""Inductive construction of a strongly tree-like family of horocycle windows.

Level-k nodes are boxes E = Phi_{-T_k}(closure V) p in the coordinate s of H,
stored through their integer index paths: the centre of a node with path
(m_1, ..., m_k) is c = sum_j e^{-2 T_j} 2 r m_j.  The lattice point
g_{T_k} p x0 of every node is carried in mpmath so that the e^{2T} growth of
rounding errors never reaches double precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import io
import json
import math

import mpmath as mp
import numpy as np

from . import clearance, steps
from .modular import mp_flow_shift, mp_from_matrix, mp_to_rep, mp_workdps, point_from_alpha, systole

SCHEMA = 1
# forward window and relative clearance demanded of approach targets
TARGET_HORIZON = 10.0
TARGET_CLEARANCE = 0.5


class BuildError(RuntimeError):
    pass


class IntegrityError(ValueError):
    pass


# ----------------------------------------------------------------- schedule

@dataclass(frozen=True)
class Schedule:
    t: float
    depth: int
    approach_levels: tuple = ()
    eps_seq: tuple = ()
    sigma: float = 0.05
    targets: tuple = ()

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("base step time must be positive")
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        f = list(self.approach_levels)
        if any(b <= a for a, b in zip(f, f[1:])) or any(k < 1 for k in f):
            raise ValueError("approach levels must be strictly increasing positive integers")
        if f and (len(self.eps_seq) < len(f) or not self.targets):
            raise ValueError("every approach level needs an eps value and a target")
        if any(e <= 0 for e in self.eps_seq) or self.sigma <= 0:
            raise ValueError("eps_n and sigma must be positive")

    @classmethod
    def default(cls, t, depth, n0=4, sigma0=0.2, targets=(math.sqrt(2),)):
        """f(n) = n0 n^2, eps_n = 2^-n, sigma = sigma0 / 4."""
        f = []
        n = 1
        while n0 * n * n <= depth:
            f.append(n0 * n * n)
            n += 1
        return cls(t, depth, tuple(f), tuple(2.0 ** -k for k in range(1, len(f) + 1)),
                   sigma0 / 4, tuple(targets))

    def approach_index(self, level):
        """n with f(n) = level, or None."""
        try:
            return self.approach_levels.index(level) + 1
        except ValueError:
            return None

    def beta(self, n):
        return self.targets[(n - 1) % len(self.targets)]

    def to_dict(self):
        return {"t": self.t, "depth": self.depth, "approach_levels": list(self.approach_levels),
                "eps_seq": list(self.eps_seq), "sigma": self.sigma, "targets": list(self.targets)}


def cumulative_times(schedule, s_values):
    """(t_k, T_k) for k = 0..depth; s_values[n - 1] is the realized s_eps at level f(n)."""
    if any(s <= schedule.t for s in s_values):
        raise ValueError("every realized s_eps must exceed t")
    ts, Ts = [0.0], [0.0]
    for k in range(1, schedule.depth + 1):
        n = schedule.approach_index(k)
        step = schedule.t if n is None or n > len(s_values) else s_values[n - 1]
        ts.append(step)
        Ts.append(Ts[-1] + step)
    return ts, Ts


def sublinearity_ratio(schedule, s_values, k):
    """sum_{f(n) <= k} s_eps_n / k."""
    tot = sum(s for n, s in enumerate(s_values, 1) if schedule.approach_levels[n - 1] <= k)
    return tot / k


# ------------------------------------------------------------------- nodes

@dataclass
class TreeNode:
    level: int
    path: tuple
    kind: str
    parent: int
    t_step: float
    T: float
    score: float = 0.0
    rep: list = None
    survivors: int = -1
    density: float = float("nan")
    approach: dict = None
    children: list = field(default_factory=list)

    def to_dict(self):
        d = {"level": self.level, "path": list(self.path), "kind": self.kind, "parent": self.parent,
             "t_step": self.t_step, "T": self.T, "score": self.score,
             "rep": [[float(v) for v in row] for row in self.rep], "survivors": self.survivors,
             "density": None if math.isnan(self.density) else self.density,
             "children": list(self.children)}
        if self.approach is not None:
            d["approach"] = self.approach
        return d


@dataclass
class ConstructionTree:
    levels: list
    schedule: Schedule
    r: float
    epsilon: float
    margin: float
    x0: list
    times: list
    Times: list
    diagnosis: dict = None
    pruned: list = field(default_factory=list)

    @property
    def depth(self):
        return len(self.levels) - 1

    def node_center(self, node, dps=None):
        """Centre coordinate of a node as an mpf."""
        with mp.workdps(dps or mp_workdps(node.T)):
            c = mp.mpf(0)
            for j, m in enumerate(node.path, 1):
                c += mp.e ** (-2 * mp.mpf(self.Times[j])) * 2 * mp.mpf(self.r) * m
            return c

    def to_dict(self):
        return {"schema": SCHEMA, "schedule": self.schedule.to_dict(), "r": self.r,
                "epsilon": self.epsilon, "margin": self.margin, "x0": self.x0,
                "times": self.times, "Times": self.Times, "diagnosis": self.diagnosis,
                "pruned": self.pruned,
                "levels": [[n.to_dict() for n in lvl] for lvl in self.levels]}


# ------------------------------------------------------------------ builder

def _beam_select(cands, beam, clean=1.0):
    """cands: list of (score, parent, m).

    Each parent first receives its best child scoring at least ``clean``,
    then the beam is filled by global rank.  Falls back to the best
    candidates overall when nothing is clean.
    """
    order = sorted(cands, key=lambda c: (-c[0], c[1], c[2]))
    if order[0][0] < clean:
        clean = -math.inf
    chosen, seen = [], set()
    for c in order:
        if c[0] >= clean and c[1] not in seen:
            seen.add(c[1])
            chosen.append(c)
    chosen = chosen[:beam]
    picked = set((c[1], c[2]) for c in chosen)
    for c in order:
        if len(chosen) >= beam or c[0] < clean:
            break
        if (c[1], c[2]) not in picked:
            chosen.append(c)
            picked.add((c[1], c[2]))
    chosen.sort(key=lambda c: (c[1], c[2]))
    return chosen


def _approach_level(nodes, bases, schedule, n, r, window, extra_times):
    """Common search time for all nodes of a level, then one window per node."""
    y = point_from_alpha(schedule.beta(n))
    eps_n = schedule.eps_seq[n - 1]
    best = None
    for dt in extra_times:
        tau = schedule.t + dt
        res = {}
        for i, nd in enumerate(nodes):
            x = steps.LatticePoint(np.array(nd.rep))
            c = steps.approach_candidates(x, y, tau, eps_n, schedule.sigma, r, window)
            if c:
                res[i] = c[0]
        if best is None or len(res) > len(best[1]):
            best = (tau, res)
        if len(res) == len(nodes):
            break
    return best


def build_tree(x0, schedule, tess, window, chart=None, beam=10_000, threads=None,
               extra_times=(0.0, 1.0, 2.0, 3.0, 4.0), log=None):
    """Build the construction tree up to schedule.depth, keeping at most ``beam`` nodes per level.

    Every expanded node records its full certified survivor count, from which
    the level densities are taken; only the beam is refined further.
    """
    steps._require_sl2(x0, tess)
    r = tess.r
    if systole(x0) < window.epsilon:
        raise ValueError("x0 must lie in K")
    Tmax = schedule.depth * (schedule.t + max(extra_times) + 10.0)
    dps = mp_workdps(Tmax)
    theta = window.epsilon + window.margin if window.epsilon > 0 else 0.0
    with mp.workdps(dps):
        root = TreeNode(0, (), "root", -1, 0.0, 0.0, rep=np.asarray(x0.rep).tolist())
        bases = [[mp_from_matrix(x0.rep)]]
        levels = [[root]]
        times, Times = [0.0], [0.0]
        tree = ConstructionTree(levels, schedule, r, window.epsilon, window.margin,
                                np.asarray(x0.rep).tolist(), times, Times)
        for k in range(schedule.depth):
            nodes, nb = levels[k], bases[k]
            n = schedule.approach_index(k + 1)
            new_nodes, new_bases = [], []
            if n is None:
                t = schedule.t
                lo, hi = steps.child_range(r, t)
                cands = []
                for i, nd in enumerate(nodes):
                    rep = np.array(nd.rep)
                    surv = steps.generic_survivors(rep, t, r, theta)
                    nd.survivors = int(len(surv))
                    nd.density = len(surv) * math.exp(-2 * t)
                    if not len(surv):
                        continue
                    if window.epsilon > 0:
                        sc = steps.path_scores(rep, t, r, window.epsilon, lo, hi)[surv - lo]
                    else:
                        sc = np.zeros(len(surv))
                    quota = 4 * max(2, -(-beam // len(nodes)))
                    top = np.lexsort((surv, -sc))[:quota]
                    sc, surv = sc[top], surv[top]
                    if window.epsilon > 0:
                        sc = np.minimum(sc, steps.lookahead_scores(rep, t, r, window.epsilon, surv))
                    top = np.lexsort((surv, -sc))[:beam]
                    cands.extend(zip(sc[top].tolist(), [i] * len(top), surv[top].tolist()))
                if not cands:
                    tree.diagnosis = {"level": k, "kind": "generic", "reason": "no survivors"}
                    break
                chosen = _beam_select(cands, beam)
                for score, i, m in chosen:
                    b = mp_flow_shift(nb[i], mp.mpf(t), 2 * mp.mpf(r) * m)
                    nodes[i].children.append(len(new_nodes))
                    new_nodes.append(TreeNode(k + 1, nodes[i].path + (int(m),), "generic", i, t,
                                              Times[-1] + t, float(score), mp_to_rep(b).tolist()))
                    new_bases.append(b)
                step_time = t
            else:
                y = point_from_alpha(schedule.beta(n))
                if clearance.min_systole_orbit(y.rep, 0.0, TARGET_HORIZON) < window.epsilon * (1 + TARGET_CLEARANCE):
                    tree.diagnosis = {"level": k, "kind": "approach", "reason": "target orbit lacks clearance"}
                    break
                tau, res = _approach_level(nodes, nb, schedule, n, r, window, extra_times)
                if not res:
                    tree.diagnosis = {"level": k, "kind": "approach", "reason":
                                      "approach search failed; refine grid or increase t"}
                    break
                step_time = None
                for i, nd in enumerate(nodes):
                    if i not in res:
                        tree.pruned.append({"level": k, "path": list(nd.path), "reason": "approach search failed"})
                        continue
                    a = res[i]
                    step_time = a.s_eps
                    nd.survivors = 1
                    nd.density = math.exp(-2 * a.s_eps)
                    b = mp_flow_shift(nb[i], mp.mpf(a.s_eps), 2 * mp.mpf(r) * a.gamma)
                    rec = {"n": n, "gamma": a.gamma, "t_search": a.t, "s1": a.s1,
                           "s_eps_prime": a.s_eps_prime, "s_eps": a.s_eps, "eps": a.epsilon,
                           "sigma": a.sigma, "target_alpha": schedule.beta(n),
                           "cert_inclusion": a.cert_inclusion, "cert_clearance": a.cert_clearance,
                           "cert_distance": a.cert_distance, "path_clean": a.path_clean}
                    nd.children.append(len(new_nodes))
                    new_nodes.append(TreeNode(k + 1, nd.path + (int(a.gamma),), "approach", i, a.s_eps,
                                              Times[-1] + a.s_eps, 0.0, mp_to_rep(b).tolist(), approach=rec))
                    new_bases.append(b)
            levels.append(new_nodes)
            bases.append(new_bases)
            times.append(step_time)
            Times.append(Times[-1] + step_time)
            if log:
                log(f"level {k + 1}: {len(new_nodes)} nodes, T = {Times[-1]:.3f}")
        _prune_childless(tree)
    return tree


def _prune_childless(tree):
    """Drop non-leaf nodes that ended up without children, and reindex."""
    for k in range(len(tree.levels) - 2, -1, -1):
        lvl, nxt = tree.levels[k], tree.levels[k + 1]
        keep = [i for i, nd in enumerate(lvl) if nd.children]
        if len(keep) == len(lvl):
            continue
        remap = {old: new for new, old in enumerate(keep)}
        for i, nd in enumerate(lvl):
            if i not in remap:
                tree.pruned.append({"level": k, "path": list(nd.path), "reason": "no children"})
        tree.levels[k] = [lvl[i] for i in keep]
        for nd in nxt:
            nd.parent = remap[nd.parent]
        if k > 0:
            prev = tree.levels[k - 1]
            for nd in prev:
                nd.children = [remap[c] for c in nd.children if c in remap]


# ---------------------------------------------------------- dimension data

def densities(tree):
    """Delta_k for k = 0..depth-1: least density over the expanded level-k nodes."""
    if tree.depth < 1:
        raise ValueError("tree needs at least two levels")
    out = []
    for k in range(tree.depth):
        vals = [nd.density for nd in tree.levels[k] if nd.survivors > 0]
        out.append(min(vals))
    return out


def diameters(tree):
    """d_k = 2 r e^{-2 T_k}, the coordinate diameter of every level-k box."""
    return [2 * tree.r * math.exp(-2 * T) for T in tree.Times]


def log_diameters(tree):
    return [math.log(2 * tree.r) - 2 * T for T in tree.Times]


def urbanski_lower_bound(deltas, diams, dim_h=1.0, variant="inclusive", k0=None, log_diams=None):
    """Finite-depth lower bound dim_H - max_k (sum log Delta_j) / log d_k.

    variant "inclusive" sums j <= k (k < len(deltas)); "exact" sums j < k.
    k0 defaults to the first k >= 1 with d_k < 1.
    """
    ld = list(log_diams) if log_diams is not None else [math.log(d) if d > 0 else -math.inf for d in diams]
    if k0 is None:
        cand = [k for k in range(1, len(ld)) if ld[k] < 0]
        if not cand:
            raise ValueError("insufficient contraction depth")
        k0 = cand[0]
    logs = np.cumsum(np.log(np.asarray(deltas, dtype=float)))
    ratios = []
    if variant == "inclusive":
        ks = range(k0, min(len(deltas), len(ld)))
        ratios = [logs[k] / ld[k] for k in ks]
    elif variant == "exact":
        ks = range(max(k0, 1), min(len(deltas) + 1, len(ld)))
        ratios = [logs[k - 1] / ld[k] for k in ks]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if not ratios:
        raise ValueError("insufficient contraction depth")
    return float(min(dim_h, max(0.0, dim_h - max(ratios))))


def dimension_budget(decomp):
    """dim g - dim Z + 1."""
    return len(decomp.basis) - len(decomp.basis_n) + 1


@dataclass
class DimensionReport:
    deltas: list
    diams: list
    urbanski_bound: float
    box_estimate: float
    budget: float
    k0: int = 1
    exact_bound: float = float("nan")
    m_hat: float = float("nan")

    def to_dict(self):
        return {"deltas": self.deltas, "diams": self.diams, "urbanski_bound": self.urbanski_bound,
                "exact_bound": self.exact_bound, "box_estimate": self.box_estimate,
                "budget": self.budget, "k0": self.k0, "m_hat": self.m_hat}


def dimension_report(tree, budget, box_estimate=float("nan"), m_hat=float("nan")):
    deltas = densities(tree)
    ld = log_diameters(tree)
    b = urbanski_lower_bound(deltas, None, 1.0, "inclusive", log_diams=ld)
    e = urbanski_lower_bound(deltas, None, 1.0, "exact", log_diams=ld)
    k0 = next(k for k in range(1, len(ld)) if ld[k] < 0)
    return DimensionReport(deltas, diameters(tree), b, box_estimate, budget, k0, e, m_hat)


# ------------------------------------------------------------- tree checks

def verify_treelike(tree):
    """Check the six defining properties of a strongly tree-like family on the stored tree."""
    v = []
    r = tree.r
    for k, lvl in enumerate(tree.levels):
        for i, nd in enumerate(lvl):
            if nd.level != k or len(nd.path) != k:
                v.append((2, k, i, "node stored at the wrong level"))
            if k > 0:
                if not 0 <= nd.parent < len(tree.levels[k - 1]):
                    v.append((3, k, i, "missing parent"))
                    continue
                par = tree.levels[k - 1][nd.parent]
                if tuple(nd.path[:-1]) != tuple(par.path) or i not in par.children:
                    v.append((3, k, i, "parent link inconsistent"))
                # nesting, in parent-scaled coordinates: the child box is
                # e^{-2 t}[2rm - r, 2rm + r] inside [-r, r]
                m = nd.path[-1]
                sc = math.exp(-2 * nd.t_step)
                if not (sc * (2 * r * abs(m) + r) <= r * (1 + 1e-12)):
                    v.append((2, k, i, "child box not inside parent"))
            if k < tree.depth and not nd.children:
                v.append((4, k, i, "non-leaf node without children"))
        # pairwise overlaps among siblings: equal index means the same box
        groups = {}
        for i, nd in enumerate(lvl):
            groups.setdefault(tuple(nd.path), []).append(i)
        for p, idx in groups.items():
            if len(idx) > 1:
                v.append((5, k, idx[1], "duplicated box, positive-volume intersection"))
    ld = log_diameters(tree)
    if any(b >= a for a, b in zip(ld, ld[1:])):
        v.append((6, -1, -1, "diameters do not decrease"))
    return {"passed": not v, "violations": [{"bullet": b, "level": k, "index": i, "reason": s}
                                            for b, k, i, s in v]}


# ------------------------------------------------------------------ export

def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def export_tree(tree):
    body = tree.to_dict()
    digest = hashlib.sha256(_canonical(body).encode()).hexdigest()
    return json.dumps({"tree": body, "sha256": digest}, sort_keys=True, indent=1, allow_nan=False)


def load_tree_dict(text):
    d = json.loads(text)
    if "tree" not in d or "sha256" not in d:
        raise IntegrityError("not a tree export")
    if hashlib.sha256(_canonical(d["tree"]).encode()).hexdigest() != d["sha256"]:
        raise IntegrityError("integrity hash mismatch")
    if d["tree"].get("schema") != SCHEMA:
        raise IntegrityError("unsupported schema")
    return d["tree"]


def tree_from_dict(d):
    s = d["schedule"]
    sched = Schedule(s["t"], s["depth"], tuple(s["approach_levels"]), tuple(s["eps_seq"]),
                     s["sigma"], tuple(s["targets"]))
    levels = []
    for lvl in d["levels"]:
        nodes = []
        for nd in lvl:
            nodes.append(TreeNode(nd["level"], tuple(nd["path"]), nd["kind"], nd["parent"], nd["t_step"],
                                  nd["T"], nd["score"], nd["rep"], nd["survivors"],
                                  float("nan") if nd["density"] is None else nd["density"],
                                  nd.get("approach"), list(nd["children"])))
        levels.append(nodes)
    return ConstructionTree(levels, sched, d["r"], d["epsilon"], d["margin"], d["x0"], d["times"],
                            d["Times"], d.get("diagnosis"), d.get("pruned", []))


def load_tree(text):
    return tree_from_dict(load_tree_dict(text))


def report_csv(report):
    buf = io.StringIO()
    buf.write("k,delta_k,d_k\n")
    for k, d in enumerate(report.diams):
        delta = report.deltas[k] if k < len(report.deltas) else ""
        buf.write(f"{k},{delta!r},{d!r}\n" if delta != "" else f"{k},,{d!r}\n")
    return buf.getvalue()
