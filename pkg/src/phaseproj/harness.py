"""Experiment orchestration: configs, instance generators, runs, demos.

A run builds the tree, the projection and the estimator context, then
evaluates every inequality over the enumeration window and persists a
deterministic report.  Identical configs byte-reproduce report.json;
wall-clock timings go to a separate file so they never break that.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field as dc_field
from math import inf

import numpy as np
from scipy import stats

from .cubes import (
    DyadicCube,
    DyadicPartition,
    TreeConfig,
    tree_config_from_dict,
    tree_config_to_dict,
    tree_index_to_csv,
    unit_cube,
)
from .errors import PhaseprojError, ValidationError
from .estimators import (
    ConstantTable,
    EstimatorContext,
    enumerate_window,
    estimate_S_multi,
    prop_spq_checks,
    sweep,
)
from .grid import (
    SampledField,
    TorusGrid,
    cond_expectation,
    cube_average,
    field_to_csv,
    inner_product,
    load_field,
    modulate,
    physical_spectrum,
    save_field,
    weighted_lp_norm,
)
from .kernels import DictionarySpec
from .projection import (
    ProjectionSettings,
    assemble,
    projection_input,
    residual_decomposition,
)

_P_NAMES = {"1": 1.0, "2": 2.0, "inf": inf}


def parse_p(value):
    if isinstance(value, str):
        return _P_NAMES[value]
    return inf if value == math.inf else float(value)


def p_name(p):
    return "inf" if p == inf else ("1" if p == 1.0 else ("2" if p == 2.0 else str(p)))


@dataclass
class RunConfig:
    """Everything needed to reproduce a verification run."""

    dim: int = 1
    grid_n: int = 1 << 14
    grid_b: float = 8.0
    tree_seed: int = 0
    tree_depth: int = 1
    leaf_count: int = 1
    leaves: tuple | None = None          # explicit (level, index) pairs, overrides seed
    f_seed: int = 1
    f_modes: tuple | None = None         # explicit (freq, re, im) triples
    f_annulus: tuple | None = None       # default: (2, 2^(2+depth))
    f_mode_count: int = 8
    f_scale_with_gap: bool = False       # dilate mode frequencies by 2^m
    f_file: str | None = None
    gap_m: int = 0
    alpha: float = 2.0
    p_values: tuple = (1.0, 2.0, inf)
    dict_spec: DictionarySpec = dc_field(default_factory=DictionarySpec)
    window_depth: int | None = None
    strict: bool = True
    keep_pieces: bool = False

    def to_dict(self):
        out = {
            "dim": self.dim, "grid_n": self.grid_n, "grid_b": self.grid_b,
            "tree_seed": self.tree_seed, "tree_depth": self.tree_depth,
            "leaf_count": self.leaf_count,
            "leaves": [list(map(int, leaf)) for leaf in self.leaves] if self.leaves else None,
            "f_seed": self.f_seed,
            "f_modes": [list(mode) for mode in self.f_modes] if self.f_modes else None,
            "f_annulus": list(self.f_annulus) if self.f_annulus else None,
            "f_mode_count": self.f_mode_count,
            "f_scale_with_gap": self.f_scale_with_gap,
            "f_file": self.f_file, "gap_m": self.gap_m, "alpha": self.alpha,
            "p_values": [p_name(p) for p in self.p_values],
            "dict_spec": self.dict_spec.to_dict(),
            "window_depth": self.window_depth, "strict": self.strict,
            "keep_pieces": self.keep_pieces,
        }
        return out

    @staticmethod
    def from_dict(data):
        data = dict(data)
        if data.get("leaves"):
            data["leaves"] = tuple(tuple(x) for x in data["leaves"])
        if data.get("f_modes"):
            data["f_modes"] = tuple(tuple(x) for x in data["f_modes"])
        if data.get("f_annulus"):
            data["f_annulus"] = tuple(data["f_annulus"])
        if data.get("p_values"):
            data["p_values"] = tuple(parse_p(p) for p in data["p_values"])
        if data.get("dict_spec"):
            data["dict_spec"] = DictionarySpec.from_dict(data["dict_spec"])
        return RunConfig(**data)

    def config_hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Instance generators.

def random_partition_cells(seed, depth, dim, split_probability=0.7):
    """Random dyadic partition of the unit cube by recursive splitting."""
    rng = np.random.default_rng(seed)
    cells = []

    def descend(cube, budget):
        if budget > 0 and rng.random() < split_probability:
            for child in cube.children():
                descend(child, budget - 1)
        else:
            cells.append(cube)

    descend(unit_cube(dim), depth)
    return tuple(sorted(cells))


def generate_partition(seed, depth, dim):
    return DyadicPartition(unit_cube(dim), random_partition_cells(seed, depth, dim))


def generate_tree(seed, depth, leaf_count, dim, gap_m=0, alpha=None):
    """Random tree config: disjoint dyadic leaves sampled from a random
    recursive partition of the unit cube.  Deterministic in the seed."""
    if leaf_count < 1:
        raise ValidationError("leaf_count must be >= 1")
    if leaf_count > (1 << (dim * depth)):
        raise ValidationError(
            f"cannot place {leaf_count} disjoint leaves at depth {depth}")
    rng = np.random.default_rng(seed)
    cells = list(random_partition_cells(seed + 1, depth, dim))
    while len(cells) < leaf_count:
        # split the coarsest cell (first in sorted order) until enough
        cells.sort()
        splittable = [c for c in cells if c.level > -depth]
        target = max(splittable, key=lambda c: c.level)
        cells.remove(target)
        cells.extend(target.children())
    chosen = rng.choice(len(cells), size=leaf_count, replace=False)
    leaves = tuple(sorted(cells[int(i)] for i in chosen))
    return TreeConfig(unit_cube(dim), leaves, gap_m,
                      alpha if alpha is not None else dim + 1.0)


def random_bandpass_modes(grid, seed, annulus=(2.0, 16.0), n_modes=8):
    """Random lattice frequencies inside an annulus, with amplitudes."""
    rng = np.random.default_rng(seed)
    lo, hi = annulus
    lat = 1.0 / (2 * grid.half_width)
    modes = []
    guard = 0
    while len(modes) < n_modes and guard < 10000:
        guard += 1
        k = rng.integers(-int(hi / lat), int(hi / lat) + 1, size=grid.dim)
        r = math.sqrt(float(np.sum((k * lat) ** 2)))
        if not (lo <= r <= hi):
            continue
        modes.append((tuple(int(kk) for kk in k), rng.normal() + 1j * rng.normal()))
    if len(modes) < n_modes:
        raise ValidationError("annulus holds no lattice frequencies")
    return modes


def field_from_modes(grid, modes, scale=1):
    """Real field from (lattice index, amplitude) pairs, frequencies
    dilated by the integer scale factor (exact on the lattice)."""
    spec = np.zeros(grid.shape, dtype=np.complex128)
    nyq = grid.samples // 2
    for k, amp in modes:
        k_scaled = tuple(int(kk) * scale for kk in k)
        if any(abs(kk) >= nyq for kk in k_scaled):
            raise ValidationError("scaled mode exceeds the Nyquist frequency")
        idx = tuple(kk % grid.samples for kk in k_scaled)
        idx_conj = tuple((-kk) % grid.samples for kk in k_scaled)
        spec[idx] += amp
        spec[idx_conj] += np.conj(amp)
    vals = np.fft.ifftn(spec) * grid.size
    return SampledField(grid, vals)


def random_bandpass_field(grid, seed, annulus=(2.0, 16.0), n_modes=8, scale=1):
    """Real trigonometric polynomial with spectrum in the given annulus,
    optionally dilated by an integer frequency scale."""
    return field_from_modes(
        grid, random_bandpass_modes(grid, seed, annulus, n_modes), scale)


def mode_field(grid, modes):
    """Sum of on-lattice modes given as (freq vector or scalar, re, im)."""
    vals = np.zeros(grid.shape, dtype=np.complex128)
    for freq, re, im in modes:
        freq = np.atleast_1d(np.asarray(freq, dtype=float))
        phase = np.zeros(grid.shape)
        for ax in range(grid.dim):
            phase = phase + freq[ax] * grid.point_component(ax)
        vals = vals + (re + 1j * im) * np.exp(2j * np.pi * phase)
    return SampledField(grid, vals)


def build_f(config, grid):
    if config.f_file:
        field = load_field(config.f_file)
        if field.grid != grid:
            raise ValidationError("field file grid does not match the run grid")
        return field
    if config.f_modes:
        return mode_field(grid, config.f_modes)
    annulus = config.f_annulus
    if annulus is None:
        # keep the spectrum inside the pass band of the size dictionaries
        # at every tree level, for any gap parameter
        annulus = (2.0, 2.0 ** (2 + config.tree_depth))
    scale = 2 ** config.gap_m if config.f_scale_with_gap else 1
    return random_bandpass_field(grid, config.f_seed, annulus,
                                 config.f_mode_count, scale)


def build_tree_config(config):
    if config.leaves:
        leaves = tuple(DyadicCube(int(leaf[0]), tuple(int(x) for x in leaf[1:]))
                       for leaf in config.leaves)
        return TreeConfig(unit_cube(config.dim), leaves, config.gap_m, config.alpha)
    return generate_tree(config.tree_seed, config.tree_depth, config.leaf_count,
                         config.dim, config.gap_m, config.alpha)


# ---------------------------------------------------------------------------
# The full run.

def run(config, out_dir=None):
    """Build everything, evaluate every report, optionally persist.

    Failures are recorded with their stage tag; whatever was computed
    before the failure is still persisted.
    """
    record = {"config": config.to_dict(), "config_hash": config.config_hash()}
    timings = {}
    stage = "grid"
    try:
        t0 = time.perf_counter()
        grid = TorusGrid(config.dim, config.grid_b, config.grid_n)
        stage = "tree"
        cfg = build_tree_config(config)
        record["tree"] = tree_config_to_dict(cfg)
        stage = "f"
        f = build_f(config, grid)
        stage = "projection"
        settings = ProjectionSettings(strict=config.strict,
                                      keep_pieces=config.keep_pieces)
        pin = projection_input(f, cfg, grid, settings)
        output = assemble(pin)
        residual_decomposition(pin, output)
        timings["build"] = time.perf_counter() - t0
        record["diagnostics"] = _diagnostics_dict(output.diagnostics)

        stage = "estimators"
        t0 = time.perf_counter()
        ctx = EstimatorContext(pin, output, config.dict_spec, config.p_values,
                               config.window_depth)
        reports = ctx.evaluate_window()
        timings["estimators"] = time.perf_counter() - t0
        record["sizes"] = {p_name(p): est.to_dict() for p, est in ctx.sizes.items()}
        record["reports"] = [r.to_dict() for r in _sorted_reports(reports)]
        record["report_summary"] = _summarize(reports, config)
        stage = "write"
        if out_dir:
            _persist(record, timings, config, output, pin, out_dir)
        record["_runtime"] = {"output": output, "pin": pin, "ctx": ctx}
        return record
    except Exception as exc:
        record["error"] = {"stage": stage, "message": str(exc),
                           "type": type(exc).__name__}
        if out_dir:
            _persist(record, timings, config, None, None, out_dir)
        return record


def _diagnostics_dict(diag):
    out = {}
    for key, value in diag.items():
        if key == "levels":
            out["levels"] = {f"n={n},j={j}": v for (n, j), v in sorted(value.items())}
        else:
            out[key] = value
    return out


def _sorted_reports(reports):
    return sorted(reports, key=lambda r: (r.inequality, p_name(r.p),
                                          str(r.context.get("J", ""))))


def _summarize(reports, config):
    """Headline ratios per (inequality, p): max over evaluated cubes."""
    summary = {}
    for rep in reports:
        if "skipped" in rep.context:
            continue
        key = (rep.inequality, p_name(rep.p))
        entry = summary.setdefault(key, {"max_ratio": 0.0, "count": 0,
                                         "finite": True})
        entry["count"] += 1
        if not np.isfinite(rep.ratio):
            entry["finite"] = False
        else:
            entry["max_ratio"] = max(entry["max_ratio"], rep.ratio)
    return {f"{ineq}:p={p}": val for (ineq, p), val in sorted(summary.items())}


def headline_rows(record, seed, m):
    """Sweep rows (inequality, p, seed, m, ratio) from a finished record."""
    rows = []
    for key, entry in record["report_summary"].items():
        ineq, p_part = key.split(":p=")
        rows.append({"inequality": ineq, "p": parse_p(p_part), "seed": seed,
                     "m": m, "ratio": entry["max_ratio"] if entry["finite"] else inf})
    return rows


def _persist(record, timings, config, output, pin, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    fields_dir = os.path.join(out_dir, "fields")
    os.makedirs(fields_dir, exist_ok=True)
    manifest = []
    if output is not None:
        for name, field in (("g", output.g), ("chi", output.chi), ("f", pin.f)):
            path = os.path.join(fields_dir, f"{name}.bin")
            save_field(field, path)
            digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
            manifest.append(f"{name}.bin sha256={digest}")
        tree_index_to_csv(pin.tree, os.path.join(out_dir, "tree.csv"),
                          level_floor=-(config.window_depth or config.tree_depth) - 2)
    clean = {k: v for k, v in record.items() if not k.startswith("_")}
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(clean, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.echo"), "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_perscale(clean, os.path.join(out_dir, "perscale.csv"))
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest) + "\n")
    with open(os.path.join(out_dir, "timings.txt"), "w", encoding="utf-8") as fh:
        for key, value in timings.items():
            fh.write(f"{key} {value:.3f}s\n")


def _write_perscale(record, path):
    import csv as _csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["inequality", "p", "J", "i", "term", "cumulative"])
        for rep in record.get("reports", []):
            for row in rep.get("per_scale", []):
                w.writerow([rep["inequality"], rep["p"],
                            rep["context"].get("J", ""), row["i"],
                            repr(row["term"]), repr(row["cumulative"])])


# ---------------------------------------------------------------------------
# Reference sweep (the uniformity-in-m experiment).

def reference_sweep_configs(seeds=range(20), m_values=(0, 1, 2, 3),
                            grid_n=1 << 17, depth=2):
    """The frozen reference sweep: d=1 trees of bounded depth, one random
    mode pattern per seed carried across the gap values.

    The mode frequencies dilate with 2^m so that every kernel window at
    gap m sees the same relative content as at gap 0; with a fixed f the
    ratios would instead measure how the shifting frequency windows
    happen to meet the fixed modes, which says nothing about uniformity
    of the constants.
    """
    configs = []
    for seed in seeds:
        for m in m_values:
            configs.append(RunConfig(
                dim=1, grid_n=grid_n, tree_seed=seed, tree_depth=depth,
                leaf_count=1 + seed % 3, f_seed=1000 + seed, gap_m=m,
                alpha=2.0, window_depth=depth, strict=True,
                f_annulus=(1.0, 3.0), f_scale_with_gap=True))
    return configs


def run_reference_sweep(configs=None):
    configs = configs if configs is not None else reference_sweep_configs()

    def runner(config):
        record = run(config)
        if "error" in record:
            raise PhaseprojError(
                f"stage {record['error']['stage']}: {record['error']['message']}")
        return headline_rows(record, record["config"]["tree_seed"],
                             record["config"]["gap_m"])

    return sweep(configs, runner)


# ---------------------------------------------------------------------------
# Modulation almost-orthogonality demo.

def modulation_demo(config, separations=None, second_tree_seed=None):
    """Pairings of modulated projections across frequency separations.

    g_k is built from f modulated down by eta_k and re-modulated up; the
    normalized pairing against the unmodulated projection decays as the
    separation grows, and vanishes once the measured spectral supports
    disjoin."""
    grid = TorusGrid(config.dim, config.grid_b, config.grid_n)
    cfg = build_tree_config(config)
    second_cfg = cfg
    if second_tree_seed is not None:
        second_cfg = generate_tree(second_tree_seed, config.tree_depth,
                                   config.leaf_count, config.dim, config.gap_m,
                                   config.alpha)
    f = build_f(config, grid)
    lat = 1.0 / (2 * grid.half_width)
    if separations is None:
        separations = [0.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]
    for eta in separations:
        if abs(round(eta / lat) * lat - eta) > 1e-9:
            raise ValidationError(f"separation {eta} is off the frequency lattice")

    settings = ProjectionSettings(strict=config.strict, keep_pieces=False)

    def project(eta, tree_cfg):
        shifted = modulate(f, [-eta] + [0.0] * (config.dim - 1))
        pin = projection_input(shifted, tree_cfg, grid, settings)
        out = assemble(pin)
        return modulate(out.g, [eta] + [0.0] * (config.dim - 1))

    base = project(separations[0], cfg)
    base_norm = weighted_lp_norm(base, None, 2.0)
    base_spec = np.abs(physical_spectrum(base))
    table = []
    for eta in separations:
        other = project(eta, second_cfg)
        other_norm = weighted_lp_norm(other, None, 2.0)
        pairing = abs(inner_product(base, other)) / (base_norm * other_norm)
        # magnitude overlap of the spectra: a rigorous phase-free upper
        # bound for the pairing, so small overlap certifies near-orthogonality
        other_spec = np.abs(physical_spectrum(other))
        overlap = float(np.sum(base_spec * other_spec)) / (
            (2 * grid.half_width) ** grid.dim * base_norm * other_norm)
        table.append({"separation": eta - separations[0], "pairing": pairing,
                      "overlap_bound": overlap,
                      "spectra_disjoint": bool(overlap <= 1e-10)})
    seps = [row["separation"] for row in table[1:]]
    pairs = [row["pairing"] for row in table[1:]]
    corr = float(stats.spearmanr(seps, pairs).statistic)
    return {"table": table, "spearman": corr}


# ---------------------------------------------------------------------------
# Conditional-expectation baseline demo.

def baseline_demo(dim=1, seed=0, depth=3, grid_n=1 << 12, f_seed=7,
                  csv_path=None, smooth_compare=False):
    """Exact projection identities for the dyadic baseline, optionally a
    side-by-side sampled comparison with the smooth construction."""
    grid = TorusGrid(dim, 8.0, grid_n)
    partition = generate_partition(seed, depth, dim)
    f = random_bandpass_field(grid, f_seed, (1.0, 8.0), 6)
    g = cond_expectation(f, partition)

    sigma_cubes, below = [], []
    min_level = min(c.level for c in partition.cells)
    level_floor = max(min_level - 2, int(math.ceil(math.log2(grid.spacing))))
    for level in range(0, level_floor - 1, -1):
        span = 1 << (-level)
        for idx in np.ndindex(*([span] * dim)):
            cube = DyadicCube(level, tuple(int(i) for i in idx))
            (sigma_cubes if partition.sigma_contains(cube) else below).append(cube)

    proj_in = max(abs(cube_average(f, c) - cube_average(g, c)) for c in sigma_cubes)
    proj_out = 0.0
    for cube in below:
        sl = grid.cube_slices(cube)
        block = g.values[sl]
        proj_out = max(proj_out, float(np.max(np.abs(block - np.mean(block)))))
    s_dyadic = max(abs(cube_average(f, c)) for c in sigma_cubes)
    sup_g = float(np.max(np.abs(g.values)))

    result = {
        "proj_in_error": float(proj_in),
        "proj_out_error": float(proj_out),
        "sup_g": sup_g,
        "s_dyadic": float(s_dyadic),
        "sup_bound_holds": bool(sup_g <= s_dyadic),
        "cells": len(partition.cells),
    }
    if smooth_compare and dim == 1:
        cfg = TreeConfig(unit_cube(dim), partition.cells, 0, dim + 1.0)
        pin = projection_input(f, cfg, grid, ProjectionSettings(strict=False))
        smooth = assemble(pin).g
        if csv_path:
            import csv as _csv
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                w = _csv.writer(fh)
                w.writerow(["x", "f", "g_dyadic", "g_smooth"])
                for x, fv, gd, gs in zip(grid.axis_points, f.values.real,
                                         g.values.real, smooth.values.real):
                    w.writerow([repr(float(x)), repr(float(fv)),
                                repr(float(gd)), repr(float(gs))])
        result["smooth_sup"] = smooth.max_abs()
    return result


# ---------------------------------------------------------------------------
# Frozen regression baselines.

def baselines_path():
    return os.path.join(os.path.dirname(__file__), "baselines.txt")


def load_baselines():
    out = {}
    path = baselines_path()
    if not os.path.exists(path):
        return out
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = float(value.strip())
    return out


def save_baselines(values, notes=None):
    with open(baselines_path(), "w", encoding="utf-8") as fh:
        fh.write("# frozen regression baselines, computed by this implementation\n")
        fh.write("# regenerate with: phaseproj freeze-baselines\n")
        for key in sorted(values):
            note = f"  # {notes[key]}" if notes and key in notes else ""
            fh.write(f"{key} = {values[key]!r}{note}\n")
