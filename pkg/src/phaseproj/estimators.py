"""Size surrogate and empirical evaluation of the projection inequalities.

The scale-invariant size of f over the tree is approximated from below
by a finite dictionary surrogate: the supremum over a kernel class is
replaced by a maximum over normalized dictionary members.  All theorem
checks report the ratio lhs / rhs-without-constant; the proven constant
is existential, so ratios are tracked against frozen regression
baselines rather than asserted against an invented numeric bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from itertools import product as iproduct
from math import inf

import numpy as np

from .cubes import DyadicCube, rho_to_cube
from .errors import ValidationError
from .grid import apply_multiplier, cube_mask, rho_values, weighted_lp_norm
from .kernels import DictionarySpec, build_dictionary


def _inv(p):
    return 0.0 if p == inf else 1.0 / p


def _conj_inv(p):
    """1/p' for the conjugate exponent."""
    return 1.0 - _inv(p)


def _norms_all(mag, h_d, p_values):
    out = {}
    for p in p_values:
        if p == inf:
            out[p] = float(np.max(mag))
        elif p == 1.0:
            out[p] = float(np.sum(mag) * h_d)
        elif p == 2.0:
            out[p] = float(math.sqrt(np.sum(mag * mag) * h_d))
        else:
            out[p] = float((np.sum(mag ** p) * h_d) ** (1.0 / p))
    return out


@dataclass
class SizeEstimate:
    """Dictionary surrogate for the size of f over the tree."""

    value: float
    witness: tuple          # (level, cube, kernel_id)
    alpha: float
    p: float
    m: int
    dict_spec_id: str
    per_level: dict = dc_field(default_factory=dict)

    def to_dict(self):
        level, cube, kernel_id = self.witness if self.witness else (None, None, None)
        return {
            "value": self.value,
            "witness_level": level,
            "witness_cube": cube.label() if cube else None,
            "witness_kernel": kernel_id,
            "alpha": self.alpha,
            "p": "inf" if self.p == inf else self.p,
            "m": self.m,
            "dict_spec": self.dict_spec_id,
            "per_level": {str(k): v for k, v in sorted(self.per_level.items())},
        }


@dataclass
class InequalityReport:
    inequality: str
    lhs: float
    rhs_without_constant: float
    ratio: float
    p: float
    context: dict = dc_field(default_factory=dict)
    per_scale: list = dc_field(default_factory=list)

    def to_dict(self):
        return {
            "inequality": self.inequality,
            "lhs": self.lhs,
            "rhs_without_constant": self.rhs_without_constant,
            "ratio": self.ratio,
            "p": "inf" if self.p == inf else self.p,
            "context": {k: str(v) for k, v in sorted(self.context.items())},
            "per_scale": self.per_scale,
        }


def _ratio(lhs, rhs):
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else inf


# ---------------------------------------------------------------------------
# Size estimate.

def estimate_S(pin, alpha=None, p=2.0, dict_spec=None):
    """Surrogate size: max over tree levels i, tree cubes I at level i and
    dictionary kernels of 2^{-id/p} || rho_I^{-alpha} (phi * f) ||_p.

    Dictionaries are built two levels below the gap scale (class level
    i - m - 2), so the surrogate is a certified lower bound for the
    class supremum defining the size.
    """
    est = estimate_S_multi(pin, alpha=alpha, p_values=(p,), dict_spec=dict_spec)
    return est[p]


def estimate_S_multi(pin, alpha=None, p_values=(1.0, 2.0, inf), dict_spec=None):
    alpha = alpha if alpha is not None else pin.cfg.alpha
    dict_spec = dict_spec or DictionarySpec()
    grid, tree, m = pin.grid, pin.tree, pin.cfg.gap_m
    d = grid.dim
    h_d = grid.spacing ** d
    best = {p: (0.0, None) for p in p_values}
    per_level = {p: {} for p in p_values}
    for i in range(pin.cfg.j_min, 1):
        kernels = build_dictionary(grid, i - m - 2, 4 * alpha, "phi", dict_spec,
                                   keep_fields=False)
        responses = [(k.kernel_id, np.abs(apply_multiplier(pin.f, k.multiplier).values))
                     for k in kernels]
        for cube in tree.cubes(i):
            weight = rho_values(grid, cube) ** (-alpha)
            for kernel_id, resp_mag in responses:
                mag = weight * resp_mag
                norms = _norms_all(mag, h_d, p_values)
                for p in p_values:
                    term = 2.0 ** (-i * d * _inv(p)) * norms[p]
                    lvl = per_level[p]
                    lvl[i] = max(lvl.get(i, 0.0), term)
                    if term > best[p][0]:
                        best[p] = (term, (i, cube, kernel_id))
    return {
        p: SizeEstimate(value=best[p][0], witness=best[p][1], alpha=alpha, p=p,
                        m=m, dict_spec_id=dict_spec.spec_id,
                        per_level=per_level[p])
        for p in p_values
    }


def verify_witness(pin, est, dict_spec=None):
    """Re-evaluate the witness term; must reproduce the estimate."""
    if est.witness is None:
        return 0.0
    dict_spec = dict_spec or DictionarySpec()
    i, cube, kernel_id = est.witness
    alpha, m = est.alpha, est.m
    grid = pin.grid
    kernels = build_dictionary(grid, i - m - 2, 4 * alpha, "phi", dict_spec,
                                   keep_fields=False)
    kernel = next(k for k in kernels if k.kernel_id == kernel_id)
    resp = apply_multiplier(pin.f, kernel.multiplier)
    weight = rho_values(grid, cube) ** (-alpha)
    mag = weight * np.abs(resp.values)
    norm = _norms_all(mag, grid.spacing ** grid.dim, (est.p,))[est.p]
    return 2.0 ** (-i * grid.dim * _inv(est.p)) * norm


# ---------------------------------------------------------------------------
# Eligibility and enumeration of evaluation cubes.

def offtree_eligible(tree, J):
    """A cube J qualifies for the off-tree inequality when no same-level
    neighbor (mollified distance <= 1) contains a tree cube.  Returns
    (eligible, violating neighbor or None)."""
    for off in iproduct((-1, 0, 1), repeat=J.dim):
        neighbor = DyadicCube(J.level, tuple(k + o for k, o in zip(J.index, off)))
        if tree.contains_tree_element(neighbor):
            return False, neighbor
    return True, None


def enumerate_window(dim, depth):
    """All dyadic cubes intersecting 9U with level >= -(depth + 2)."""
    out = []
    for level in range(0, -(depth + 3), -1):
        span = 1 << (-level)
        for idx in iproduct(range(-4 * span, 5 * span), repeat=dim):
            out.append(DyadicCube(level, idx))
    return out


# ---------------------------------------------------------------------------
# Per-run estimator context: term tables shared across all J evaluations.

class EstimatorContext:
    """Precomputes the per-(level, cube) terms of both sum-type
    inequalities so that every evaluation cube J reduces to index
    arithmetic over the tables."""

    def __init__(self, pin, output, dict_spec=None, p_values=(1.0, 2.0, inf),
                 window_depth=None, alpha=None):
        self.pin = pin
        self.output = output
        self.grid = pin.grid
        self.tree = pin.tree
        self.m = pin.cfg.gap_m
        self.alpha = alpha if alpha is not None else pin.cfg.alpha
        self.dict_spec = dict_spec or DictionarySpec()
        self.p_values = tuple(p_values)
        self.depth = window_depth if window_depth is not None else -pin.cfg.j_min
        self.d = self.grid.dim
        self.h_d = self.grid.spacing ** self.d

        self.sizes = estimate_S_multi(pin, self.alpha, self.p_values, self.dict_spec)
        self._u_mask = cube_mask(self.grid, [DyadicCube(0, (0,) * self.d)])
        self._carleson_terms = self._build_carleson_terms()
        self._offtree_terms, self.offtree_floor = self._build_offtree_terms()

    # -- carleson side -------------------------------------------------------

    def _build_carleson_terms(self):
        fg = self.pin.f - self.output.g
        terms = {p: {} for p in self.p_values}
        for i in range(self.pin.cfg.j_min, 1):
            kernels = build_dictionary(
                self.grid, i - self.m, 4 * self.alpha, "phi", self.dict_spec,
                keep_fields=False)
            responses = [np.abs(apply_multiplier(fg, k.multiplier).values)
                         for k in kernels]
            for cube in self.tree.cubes(i):
                weight = rho_values(self.grid, cube) ** (-3 * self.alpha)
                best = {p: 0.0 for p in self.p_values}
                for resp_mag in responses:
                    mag = weight * resp_mag
                    norms = _norms_all(mag, self.h_d, self.p_values)
                    for p in self.p_values:
                        best[p] = max(best[p], norms[p])
                for p in self.p_values:
                    terms[p][(i, cube.index)] = (
                        2.0 ** (i * self.d * _conj_inv(p)) * best[p])
        return terms

    def carleson_sum(self, J, p):
        """Sum of the per-cube terms over tree cubes inside J against
        the size times |J|."""
        terms = self._carleson_terms[p]
        by_level = {}
        lhs = 0.0
        for (i, idx), value in sorted(terms.items()):
            if J.contains(DyadicCube(i, idx)):
                lhs += value
                by_level[i] = by_level.get(i, 0.0) + value
        rhs = self.sizes[p].value * 2.0 ** (J.level * self.d)
        per_scale = []
        cumulative = 0.0
        for i in sorted(by_level, reverse=True):
            cumulative += by_level[i]
            per_scale.append({"i": i, "term": by_level[i], "cumulative": cumulative})
        return InequalityReport(
            inequality="carleson", lhs=lhs, rhs_without_constant=rhs,
            ratio=_ratio(lhs, rhs), p=p,
            context={"J": J.label(), "m": self.m, "in_tree": self.tree.member(J)},
            per_scale=per_scale)

    # -- off-tree side ---------------------------------------------------------

    def _build_offtree_terms(self):
        """Tables idx -> term per level for the off-tree inequality.

        The level floor comes from the kernel bands: dictionaries at
        class level i - m need their annuli inside Nyquist.  Per-scale
        contributions below the floor are reported as truncated.
        """
        nyq_floor = 2 + self.m - int(math.floor(math.log2(self.grid.nyquist)))
        floor = max(-(self.depth + 2), nyq_floor)
        tables = {p: {} for p in self.p_values}
        g = self.output.g
        for i in range(floor, 1):
            kernels = build_dictionary(
                self.grid, i - self.m, 4 * self.alpha, "psi", self.dict_spec,
                keep_fields=False)
            responses = [np.abs(apply_multiplier(g, k.multiplier).values)
                         for k in kernels]
            span = 1 << (-i)
            window_lo = -4 * span
            shape = (9 * span,) * self.d
            level_arrays = {p: np.zeros(shape) for p in self.p_values}
            tree_at_level = self.tree.slice_indices(i)
            for idx in iproduct(range(-4 * span, 5 * span), repeat=self.d):
                if idx in tree_at_level:
                    continue
                cube = DyadicCube(i, idx)
                weight = rho_values(self.grid, cube) ** (-3 * self.alpha)
                best = {p: 0.0 for p in self.p_values}
                for resp_mag in responses:
                    mag = weight * resp_mag
                    norms = _norms_all(mag, self.h_d, self.p_values)
                    for p in self.p_values:
                        best[p] = max(best[p], norms[p])
                pos = tuple(k - window_lo for k in idx)
                for p in self.p_values:
                    level_arrays[p][pos] = 2.0 ** (-i * self.d * _inv(p)) * best[p]
            for p in self.p_values:
                tables[p][i] = (window_lo, level_arrays[p])
        return tables, floor

    def offtree_sum(self, J, p):
        """Scale sum of suprema over off-tree cubes inside J against the
        size times the peak of rho_J^{-alpha} over the root."""
        eligible, violator = offtree_eligible(self.tree, J)
        if not eligible:
            return InequalityReport(
                inequality="offtree", lhs=0.0, rhs_without_constant=0.0,
                ratio=0.0, p=p,
                context={"J": J.label(), "m": self.m, "skipped":
                         f"ineligible: neighbor {violator.label()} meets the tree"})
        lhs = 0.0
        per_scale = []
        for i in sorted(self._offtree_terms[p], reverse=True):
            if i > J.level:
                continue
            window_lo, table = self._offtree_terms[p][i]
            shift = J.level - i
            sl = tuple(
                slice(max((k << shift) - window_lo, 0),
                      max(((k + 1) << shift) - window_lo, 0))
                for k in J.index)
            block = table[sl]
            sup_i = float(np.max(block)) if block.size else 0.0
            lhs += sup_i
            per_scale.append({"i": i, "term": sup_i, "cumulative": lhs})
        rho_j = rho_values(self.grid, J)
        rhs_weight = float(np.max(rho_j[self._u_mask] ** (-self.alpha)))
        rhs = self.sizes[p].value * rhs_weight
        return InequalityReport(
            inequality="offtree", lhs=lhs, rhs_without_constant=rhs,
            ratio=_ratio(lhs, rhs), p=p,
            context={"J": J.label(), "m": self.m,
                     "truncation_floor": self.offtree_floor},
            per_scale=per_scale)

    # -- norm side ----------------------------------------------------------------

    def norm_report(self, p):
        lhs = weighted_lp_norm(self.output.g, None, p)
        rhs = self.sizes[p].value
        context = {"m": self.m}
        if rhs == 0.0 and lhs > 0.0:
            context["anomaly"] = "size surrogate vanished for nonzero g"
        return InequalityReport(
            inequality="norm", lhs=lhs, rhs_without_constant=rhs,
            ratio=_ratio(lhs, rhs), p=p, context=context)

    # -- full evaluation -------------------------------------------------------------

    def evaluate_window(self):
        """Reports for every window cube: carleson for all, off-tree for
        the eligible ones, plus the norm bound."""
        reports = [self.norm_report(p) for p in self.p_values]
        for J in enumerate_window(self.d, self.depth):
            for p in self.p_values:
                reports.append(self.carleson_sum(J, p))
                rep = self.offtree_sum(J, p)
                if "skipped" not in rep.context:
                    reports.append(rep)
        return reports


# ---------------------------------------------------------------------------
# Operation-style wrappers.

def check_norm_bound(ctx, p):
    return ctx.norm_report(p)


def carleson_sum(ctx, J, p=2.0):
    return ctx.carleson_sum(J, p)


def offtree_sum(ctx, J, p=2.0):
    return ctx.offtree_sum(J, p)


# ---------------------------------------------------------------------------
# Comparison checks for the size across exponent pairs.

def prop_spq_checks(pin, alpha=None, p=2.0, q=inf, n_draws=100, seed=0,
                    dict_spec=None, m_range=(0, 1, 2, 3, 4)):
    """Per-kernel comparison inequalities between sizes at different
    exponents: a weighted Hoelder step (p <= q), log-convexity
    interpolation (q <= p), and the locally band-limited sup-vs-mean
    ratio tracked across the frequency gap."""
    alpha = alpha if alpha is not None else pin.cfg.alpha
    dict_spec = dict_spec or DictionarySpec()
    grid, tree, m = pin.grid, pin.tree, pin.cfg.gap_m
    d = grid.dim
    rng = np.random.default_rng(seed)
    levels = list(range(pin.cfg.j_min, 1))

    draws = []
    kernel_cache = {}
    for _ in range(n_draws):
        i = int(rng.choice(levels))
        cubes = tree.cubes(i)
        cube = cubes[int(rng.integers(len(cubes)))]
        if i not in kernel_cache:
            kernel_cache[i] = build_dictionary(
                grid, i - m - 2, 4 * alpha, "phi", dict_spec)
        kernels = kernel_cache[i]
        kernel = kernels[int(rng.integers(len(kernels)))]
        draws.append((i, cube, kernel))

    reports = []
    resp_cache = {}
    for i, cube, kernel in draws:
        key = kernel.kernel_id + f"@{i}"
        if key not in resp_cache:
            resp_cache[key] = apply_multiplier(pin.f, kernel.multiplier)
        resp = resp_cache[key]
        rho = rho_values(grid, cube)
        ctx = {"i": i, "I": cube.label(), "kernel": kernel.kernel_id, "m": m}
        if p < q:
            gap = _inv(p) - _inv(q)
            lhs = weighted_lp_norm(resp, rho ** (-alpha * (1 + gap)), p)
            w_norm = _norms_all(rho ** (-alpha * gap), grid.spacing ** d,
                                (1.0 / gap,))[1.0 / gap]
            rhs = w_norm * weighted_lp_norm(resp, rho ** (-alpha), q)
            reports.append(InequalityReport(
                inequality="holder", lhs=lhs, rhs_without_constant=rhs,
                ratio=_ratio(lhs, rhs), p=p, context=dict(ctx, q=q)))
        if q <= p:
            u_p = weighted_lp_norm(resp, rho ** (-alpha), p)
            u_q = weighted_lp_norm(resp, rho ** (-alpha), q)
            u_inf = weighted_lp_norm(resp, rho ** (-alpha), inf)
            share = 0.0 if p == inf else q / p
            rhs = (u_q ** share) * (u_inf ** (1.0 - share))
            reports.append(InequalityReport(
                inequality="logconvex", lhs=u_p, rhs_without_constant=rhs,
                ratio=_ratio(u_p, rhs), p=p, context=dict(ctx, q=q)))

    bern = bernstein_sweep(pin, alpha, dict_spec, m_range, draws)
    reports.extend(bern)
    return reports


def bernstein_sweep(pin, alpha, dict_spec, m_range, draws):
    """Sup-vs-mean ratios of weighted kernel responses across the gap.

    The tracked quantity divides out the expected 2^{d(m-i)} growth of
    the band radius, so its per-step log-increment stays well below
    d + 1/2."""
    grid, tree = pin.grid, pin.tree
    d = grid.dim
    h_d = grid.spacing ** d
    reports = []
    levels = sorted({i for i, _, _ in draws})
    cubes_by_level = {i: sorted({c for ii, c, _ in draws if ii == i}) for i in levels}
    for m_val in m_range:
        worst = 0.0
        worst_ctx = None
        for i in levels:
            try:
                kernels = build_dictionary(grid, i - m_val - 2, 4 * alpha,
                                           "phi", dict_spec, keep_fields=False)
            except Exception as exc:  # Nyquist refusal at large m
                reports.append(InequalityReport(
                    inequality="bernstein", lhs=0.0, rhs_without_constant=0.0,
                    ratio=0.0, p=inf,
                    context={"m": m_val, "skipped": str(exc)}))
                break
            responses = [(k.kernel_id, apply_multiplier(pin.f, k.multiplier))
                         for k in kernels]
            for cube in cubes_by_level[i]:
                weight = rho_values(grid, cube) ** (-alpha)
                for kernel_id, resp in responses:
                    mag = weight * np.abs(resp.values)
                    sup = float(np.max(mag))
                    mean = float(np.sum(mag) * h_d)
                    if mean == 0.0:
                        continue
                    ratio = sup / (2.0 ** (d * (m_val - i)) * mean)
                    if ratio > worst:
                        worst = ratio
                        worst_ctx = {"i": i, "I": cube.label(), "kernel": kernel_id}
        else:
            reports.append(InequalityReport(
                inequality="bernstein", lhs=worst, rhs_without_constant=1.0,
                ratio=worst, p=inf, context=dict(worst_ctx or {}, m=m_val)))
    return reports


# ---------------------------------------------------------------------------
# Sweeps and the constant table.

@dataclass
class ConstantTable:
    """Headline ratios across a sweep, grouped for uniformity metrics."""

    rows: list = dc_field(default_factory=list)

    def add(self, inequality, p, seed, m, ratio):
        self.rows.append({"inequality": inequality, "p": p, "seed": seed,
                          "m": m, "ratio": ratio})

    def uniformity(self):
        """max/min of the ratio over m, per (inequality, p, seed)."""
        groups = {}
        for row in self.rows:
            key = (row["inequality"], row["p"], row["seed"])
            groups.setdefault(key, []).append(row["ratio"])
        out = []
        for key in sorted(groups):
            ratios = [r for r in groups[key] if r > 0]
            if not ratios:
                continue
            out.append({
                "inequality": key[0], "p": key[1], "seed": key[2],
                "max_ratio": max(ratios), "min_ratio": min(ratios),
                "uniformity": max(ratios) / min(ratios),
            })
        return out

    def max_ratio(self, inequality):
        vals = [r["ratio"] for r in self.rows
                if r["inequality"] == inequality and np.isfinite(r["ratio"])]
        return max(vals) if vals else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["inequality", "p", "seed", "m", "ratio"])
            w.writeheader()
            for row in self.rows:
                w.writerow({**row, "p": "inf" if row["p"] == inf else row["p"],
                            "ratio": repr(row["ratio"])})


def sweep(configs, runner, table=None):
    """Run each config through `runner` and collect headline ratios.

    Individual failures are recorded and the sweep continues; the
    returned failures list pairs each failed config with its error.
    """
    table = table or ConstantTable()
    failures = []
    for config in configs:
        try:
            summary = runner(config)
        except Exception as exc:
            failures.append((config, repr(exc)))
            continue
        for entry in summary:
            table.add(entry["inequality"], entry["p"], entry["seed"],
                      entry["m"], entry["ratio"])
    return table, failures
