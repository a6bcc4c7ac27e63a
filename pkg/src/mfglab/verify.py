"""Empirical verification of the weighted inequalities.

Each estimate has a left side (weighted interior energies) and a right side
(weighted operator/source terms plus boundary-data functionals).  For
manufactured inputs both sides are computed with a per-term breakdown and
the ratio recorded; sweeping the large parameters over an ensemble yields an
empirical constant, its stabilization thresholds and its drift under grid
refinement.  Nothing here proves anything: a ratio that stays bounded is
evidence, a ratio that blows up is a finding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .basis import SeparableField, random_cosine_field
from .coefficients import CoeffRecipe, CoeffSet, SourceFactors
from .grid import SPACE_TIME, SPATIAL_SLICE, Grid, GridFn, diff, norm
from .models import CaseEnsemble, residual
from .weights import WeightBundle, WeightParams, build_eta, eval_weight_bundle

__all__ = [
    "ESTIMATE_KINDS",
    "EstimateRow",
    "EstimateSidePair",
    "FunctionEnsemble",
    "VerificationReport",
    "estimate_constant",
    "evaluate_estimate",
    "generate_ensemble",
    "lemma3_check",
]

ESTIMATE_KINDS = ("LEMMA1", "LEMMA2", "THM3", "LEMMA4", "ENERGY_3_8", "ENERGY_3_9")

ZERO_RHS_FLOOR = 0.0


@dataclass(frozen=True)
class EstimateSidePair:
    """Both sides of one inequality instance with per-term breakdowns."""

    kind: str
    params: WeightParams
    lhs_terms: dict[str, float]
    rhs_terms: dict[str, float]

    @property
    def lhs(self) -> float:
        return float(sum(self.lhs_terms.values()))

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))

    @property
    def ratio(self) -> float:
        """lhs/rhs, with the 0/0 convention ratio = 0 for zero inputs."""
        if self.lhs == 0.0:
            return 0.0
        if self.rhs <= ZERO_RHS_FLOOR:
            return math.inf
        return self.lhs / self.rhs

    @property
    def violation_candidate(self) -> bool:
        """Positive left side against a vanishing right side."""
        return self.lhs > 0.0 and self.rhs <= ZERO_RHS_FLOOR


def _wsq(arr: np.ndarray, bundle: WeightBundle, m: int, lam_power: int = 0,
         scalar: float = 1.0) -> float:
    w = bundle.grid.st_weights
    return scalar * float(np.sum(w * arr * arr * bundle.weight_factor(m, lam_power)))


def _d_gamma_sq(f: GridFn) -> float:
    return norm(f, "D_gamma") ** 2


def _h2_slice_sq(grid: Grid, slice_vals: np.ndarray) -> float:
    return norm(GridFn(grid, SPATIAL_SLICE, slice_vals), "H2_slice") ** 2


def _d0_sq(u: GridFn, v: GridFn) -> float:
    """Full data functional: gamma data of (u, v) and their time derivatives
    plus the squared H2 norms of the two t0 slices."""
    g = u.grid
    ut = diff(u, t_order=1)
    vt = diff(v, t_order=1)
    return (
        _d_gamma_sq(u) + _d_gamma_sq(v) + _d_gamma_sq(ut) + _d_gamma_sq(vt)
        + _h2_slice_sq(g, u.values[..., g.it0])
        + _h2_slice_sq(g, v.values[..., g.it0])
    )


def _first_side_lhs(u: GridFn, bundle: WeightBundle, prefix: str = "") -> dict[str, float]:
    """Backward-equation energy block: |ut|^2 + |uxx|^2 + (s lam phi)^2|grad|^2
    + (s lam phi)^4 |u|^2, all under the normalized weight."""
    g = u.grid
    terms = {
        prefix + "ut": _wsq(diff(u, t_order=1).values, bundle, 0),
        prefix + "uxx": sum(
            _wsq(diff(u, x=(i, j)).values, bundle, 0)
            for i in range(g.dim) for j in range(g.dim)
        ),
        prefix + "grad": sum(
            _wsq(diff(u, x=(i,)).values, bundle, 2, lam_power=2)
            for i in range(g.dim)
        ),
        prefix + "val": _wsq(u.values, bundle, 4, lam_power=4),
    }
    return terms


def _second_side_lhs(v: GridFn, bundle: WeightBundle, prefix: str = "") -> dict[str, float]:
    """Forward-equation energy block with one inverse weight power on the
    top-order terms."""
    g = v.grid
    return {
        prefix + "vt": _wsq(diff(v, t_order=1).values, bundle, -1),
        prefix + "vxx": sum(
            _wsq(diff(v, x=(i, j)).values, bundle, -1)
            for i in range(g.dim) for j in range(g.dim)
        ),
        prefix + "grad": sum(
            _wsq(diff(v, x=(i,)).values, bundle, 1, lam_power=2)
            for i in range(g.dim)
        ),
        prefix + "val": _wsq(v.values, bundle, 3, lam_power=4),
    }


def _check_consistency(u: GridFn, v: GridFn, F: GridFn, G: GridFn,
                       coeffs: CoeffSet) -> None:
    ru, rv = residual("linear", u, v, coeffs=coeffs)
    for name, given, computed in (("F", F, ru), ("G", G, rv)):
        scale = max(float(np.max(np.abs(computed.values))), 1e-300)
        err = float(np.max(np.abs(given.values - computed.values))) / scale
        if err > 1e-9:
            raise ValueError(
                f"{name} is not the residual of (u, v): relative mismatch {err:.3g}"
            )


def evaluate_estimate(kind: str, u: Optional[GridFn], v: Optional[GridFn],
                      F: Optional[GridFn], G: Optional[GridFn],
                      coeffs: CoeffSet, bundle: WeightBundle,
                      sources: Optional[SourceFactors] = None) -> EstimateSidePair:
    """Evaluate one inequality instance.

    The single-equation kinds use only u (LEMMA1) or v (LEMMA2); the system
    kinds need (u, v, F, G) with the sources equal to the discrete residuals
    (checked); the energy-slice kinds additionally need the factorized
    ``sources`` since their right side is written in the spatial profiles.
    Every unweighted data term carries the bundle's ``data_scale`` so that
    ratios are independent of the weight normalization.
    """
    if kind not in ESTIMATE_KINDS:
        raise ValueError(f"unknown estimate kind {kind!r}")
    ds = bundle.data_scale

    if kind == "LEMMA1":
        if u is None:
            raise ValueError("LEMMA1 needs u")
        from .coefficients import apply_operator

        op = diff(u, t_order=1).values + apply_operator("A", u, coeffs).values
        return EstimateSidePair(
            kind=kind, params=bundle.params,
            lhs_terms=_first_side_lhs(u, bundle),
            rhs_terms={"op": _wsq(op, bundle, 1), "Du2": ds * _d_gamma_sq(u)},
        )

    if kind == "LEMMA2":
        if v is None:
            raise ValueError("LEMMA2 needs v")
        from .coefficients import apply_operator

        op = diff(v, t_order=1).values - apply_operator("B", v, coeffs).values
        return EstimateSidePair(
            kind=kind, params=bundle.params,
            lhs_terms=_second_side_lhs(v, bundle),
            rhs_terms={"op": _wsq(op, bundle, 0), "Dv2": ds * _d_gamma_sq(v)},
        )

    if kind == "THM3":
        if any(x is None for x in (u, v, F, G)):
            raise ValueError("THM3 needs (u, v, F, G)")
        _check_consistency(u, v, F, G, coeffs)
        lhs = _first_side_lhs(u, bundle, "u_") | _second_side_lhs(v, bundle, "v_")
        rhs = {
            "F": _wsq(F.values, bundle, 1),
            "G": _wsq(G.values, bundle, 0),
            "Du2": ds * _d_gamma_sq(u),
            "Dv2": ds * _d_gamma_sq(v),
        }
        return EstimateSidePair(kind=kind, params=bundle.params,
                                lhs_terms=lhs, rhs_terms=rhs)

    if kind == "LEMMA4":
        if any(x is None for x in (u, v, F, G)):
            raise ValueError("LEMMA4 needs (u, v, F, G)")
        _check_consistency(u, v, F, G, coeffs)
        y = diff(u, t_order=1)
        z = diff(v, t_order=1)
        lhs = _first_side_lhs(y, bundle, "ut_") | _second_side_lhs(z, bundle, "vt_")
        rhs = {
            "Ft": _wsq(diff(F, t_order=1).values, bundle, 1),
            "F": _wsq(F.values, bundle, 1),
            "Gt": _wsq(diff(G, t_order=1).values, bundle, 0),
            "G": _wsq(G.values, bundle, 0),
            "D02": ds * _d0_sq(u, v),
        }
        return EstimateSidePair(kind=kind, params=bundle.params,
                                lhs_terms=lhs, rhs_terms=rhs)

    # energy-slice kinds
    if sources is None:
        raise ValueError(f"{kind} needs the factorized sources")
    if u is None or v is None:
        raise ValueError(f"{kind} needs u and v")
    g = u.grid
    s = bundle.params.s
    if s <= 0:
        raise ValueError("energy-slice kinds need s > 0")
    it0 = g.it0
    w_t0 = bundle.w_slice(it0)
    phi_t0 = bundle.phi_slice(it0)
    f_ext = np.broadcast_to(sources.f[..., None], g.shape)
    g_ext = np.broadcast_to(sources.g[..., None], g.shape)

    if kind == "ENERGY_3_8":
        ut0 = diff(u, t_order=1).values[..., it0]
        lhs_val = float(np.sum(g.space_weights * s * phi_t0 * ut0**2 * w_t0))
        rhs = {
            "f": _wsq(f_ext, bundle, 1, scalar=1.0 / s),
            "g": _wsq(g_ext, bundle, 0, scalar=1.0 / s),
            "D02": ds * _d0_sq(u, v),
        }
        return EstimateSidePair(kind=kind, params=bundle.params,
                                lhs_terms={"slice": lhs_val}, rhs_terms=rhs)

    vt0 = diff(v, t_order=1).values[..., it0]
    lhs_val = float(np.sum(g.space_weights * vt0**2 * w_t0))
    rhs = {
        "f": _wsq(f_ext, bundle, 1, scalar=s**-0.5),
        "g": _wsq(g_ext, bundle, 0, scalar=s**-0.5),
        "D02": ds * _d0_sq(u, v),
    }
    return EstimateSidePair(kind=kind, params=bundle.params,
                            lhs_terms={"slice": lhs_val}, rhs_terms=rhs)


def lemma3_check(w: GridFn, p: int, bundle: WeightBundle) -> EstimateSidePair:
    """Integral-operator estimate: the weighted time antiderivative from t0
    against the weighted field itself, one weight power lower."""
    if w.kind != SPACE_TIME:
        raise ValueError("lemma3_check requires a space-time field")
    if p < 0:
        raise ValueError("p must be >= 0")
    g = w.grid
    cum = cumulative_trapezoid(w.values, dx=g.tau, axis=g.dim, initial=0.0)
    inner = cum - cum[..., g.it0][..., None]
    lhs = _wsq(inner, bundle, p)
    rhs = _wsq(w.values, bundle, p - 1, lam_power=-1)
    return EstimateSidePair(
        kind=f"LEMMA3(p={p})", params=bundle.params,
        lhs_terms={"antiderivative": lhs}, rhs_terms={"field": rhs},
    )


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class EnsembleMember:
    u_field: SeparableField
    v_field: SeparableField
    u: GridFn
    v: GridFn


@dataclass(frozen=True)
class FunctionEnsemble:
    """Seeded family of cosine-basis state pairs for inequality sweeps."""

    seed: int
    grid: Grid
    max_modes: int
    t_degree: int
    amplitude: float
    members: tuple[EnsembleMember, ...]

    def __len__(self) -> int:
        return len(self.members)

    def resample(self, grid: Grid) -> "FunctionEnsemble":
        if not grid.same_domain(self.grid):
            raise ValueError("resampling grid must share the domain")
        members = tuple(
            EnsembleMember(m.u_field, m.v_field,
                           m.u_field.sample(grid), m.v_field.sample(grid))
            for m in self.members
        )
        return FunctionEnsemble(self.seed, grid, self.max_modes, self.t_degree,
                                self.amplitude, members)

    def max_exact_conormal(self, coeffs: CoeffSet) -> float:
        """Largest exact conormal trace over members and faces (should sit at
        roundoff for cosine states with diagonal principal parts)."""
        worst = 0.0
        for m in self.members:
            for fld, m2 in ((m.u_field, coeffs.a2), (m.v_field, coeffs.b2)):
                for face in self.grid.all_faces():
                    acc = 0.0
                    for j in range(self.grid.dim):
                        coef = float(np.max(np.abs(m2[face.axis, j])))
                        if coef == 0.0:
                            continue
                        d = fld.dx(j)
                        if d.terms:
                            acc += coef * float(
                                np.max(np.abs(d.sample_face(self.grid, face)))
                            )
                    worst = max(worst, acc)
        return worst


def generate_ensemble(seed: int, n: int, grid: Grid, max_modes: int = 3,
                      t_degree: int = 3, amplitude: float = 1.0) -> FunctionEnsemble:
    """Deterministic ensemble of cosine x time-polynomial state pairs."""
    if n < 1 or max_modes < 1:
        raise ValueError("need n >= 1 and max_modes >= 1")
    rng = np.random.default_rng(seed)
    members = []
    for _ in range(n):
        uf = random_cosine_field(rng, grid.lengths, grid.T, max_modes, t_degree,
                                 amplitude)
        vf = random_cosine_field(rng, grid.lengths, grid.T, max_modes, t_degree,
                                 amplitude)
        members.append(EnsembleMember(uf, vf, uf.sample(grid), vf.sample(grid)))
    return FunctionEnsemble(seed, grid, max_modes, t_degree, amplitude,
                            tuple(members))


# ---------------------------------------------------------------------------
# parameter sweeps


@dataclass(frozen=True)
class EstimateRow:
    kind: str
    lam: float
    s: float
    member: int
    lhs: float
    rhs: float
    ratio: float


@dataclass(frozen=True)
class VerificationReport:
    """Sweep summary: every (lam, s, member) ratio, the empirical constant,
    stabilization thresholds and the refinement drift."""

    kind: str
    lam_grid: tuple[float, ...]
    s_grid: tuple[float, ...]
    rows: tuple[EstimateRow, ...]
    cell_max: dict[tuple[float, float], float]
    c_emp: float
    s0_emp: dict[float, Optional[float]]
    lam0_emp: Optional[float]
    flagged: tuple[tuple[float, float], ...]
    invalid: tuple[tuple[float, float], ...]
    drift: Optional[float] = None
    c_emp_refined: Optional[float] = None

    def max_ratio(self) -> float:
        return self.c_emp


EnsembleLike = Union[FunctionEnsemble, CaseEnsemble]


def _iter_instances(kind: str, ensemble: EnsembleLike, coeffs: CoeffSet):
    """Yield (member_index, u, v, F, G, sources) suitable for the kind."""
    if isinstance(ensemble, CaseEnsemble):
        for i, case in enumerate(ensemble.cases):
            yield i, case.u, case.v, case.F, case.G, case.sources
        return
    for i, m in enumerate(ensemble.members):
        if kind in ("THM3", "LEMMA4"):
            F, G = residual("linear", m.u, m.v, coeffs=coeffs)
        else:
            F = G = None
        yield i, m.u, m.v, F, G, None


def _sweep(kind: str, ensemble: EnsembleLike, lam_grid, s_grid,
           coeffs: CoeffSet, grid: Grid) -> tuple[list[EstimateRow], dict, list]:
    eta = build_eta(grid, coeffs)
    rows: list[EstimateRow] = []
    cell_max: dict[tuple[float, float], float] = {}
    invalid: list[tuple[float, float]] = []
    instances = list(_iter_instances(kind, ensemble, coeffs))
    for lam in lam_grid:
        for s in s_grid:
            bundle = eval_weight_bundle(eta, WeightParams(lam=lam, s=s), grid)
            best = 0.0
            bad = False
            for i, u, v, F, G, sources in instances:
                pair = evaluate_estimate(kind, u, v, F, G, coeffs, bundle,
                                         sources=sources)
                lhs, rhs, ratio = pair.lhs, pair.rhs, pair.ratio
                if not (math.isfinite(lhs) and math.isfinite(rhs)):
                    bad = True
                rows.append(EstimateRow(kind, lam, s, i, lhs, rhs, ratio))
                if math.isfinite(ratio):
                    best = max(best, ratio)
            cell_max[(lam, s)] = best
            if bad:
                invalid.append((lam, s))
    return rows, cell_max, invalid


def _stabilization(lam_grid, s_grid, cell_max) -> tuple[dict, Optional[float]]:
    s0: dict[float, Optional[float]] = {}
    for lam in lam_grid:
        profile = [cell_max[(lam, s)] for s in s_grid]
        chosen = None
        for i in range(len(s_grid)):
            tail = profile[i:]
            if all(tail[k] >= tail[k + 1] for k in range(len(tail) - 1)):
                chosen = s_grid[i]
                break
        s0[lam] = chosen
    lam0 = None
    for lam in lam_grid:
        if s0[lam] is not None and s0[lam] < s_grid[-1]:
            lam0 = lam
            break
    return s0, lam0


def estimate_constant(kind: str, ensemble: EnsembleLike,
                      lam_grid: Sequence[float], s_grid: Sequence[float],
                      coeff_recipe: CoeffRecipe, grid: Grid, *,
                      refine: bool = True) -> VerificationReport:
    """Sweep the large parameters over the ensemble and report the constant.

    Cells whose max ratio exceeds 10x the median over valid cells are flagged
    as instability diagnostics; non-finite integrals mark a cell invalid.
    When ``refine`` is set, the whole sweep repeats once on the doubled grid
    (closed-form members and coefficients are resampled exactly) and the
    drift of the constant is recorded.
    """
    if len(ensemble) == 0:
        raise ValueError("ensemble must be non-empty")
    lam_grid = tuple(float(x) for x in lam_grid)
    s_grid = tuple(float(x) for x in s_grid)
    coeffs = coeff_recipe.sample(grid)
    rows, cell_max, invalid = _sweep(kind, ensemble, lam_grid, s_grid, coeffs, grid)
    valid_vals = [v for c, v in cell_max.items() if c not in invalid]
    c_emp = max(valid_vals) if valid_vals else math.inf
    med = float(np.median(valid_vals)) if valid_vals else math.inf
    flagged = tuple(c for c, v in cell_max.items()
                    if c not in invalid and med > 0 and v > 10.0 * med)
    s0, lam0 = _stabilization(lam_grid, s_grid, cell_max)

    drift = c_fine = None
    if refine:
        fine = grid.refined(2)
        fine_coeffs = coeff_recipe.sample(fine)
        fine_ens = ensemble.resample(fine)
        _, fine_cells, fine_invalid = _sweep(kind, fine_ens, lam_grid, s_grid,
                                             fine_coeffs, fine)
        fine_vals = [v for c, v in fine_cells.items() if c not in fine_invalid]
        c_fine = max(fine_vals) if fine_vals else math.inf
        drift = c_fine / c_emp if c_emp > 0 else math.inf

    return VerificationReport(
        kind=kind, lam_grid=lam_grid, s_grid=s_grid, rows=tuple(rows),
        cell_max=cell_max, c_emp=c_emp, s0_emp=s0, lam0_emp=lam0,
        flagged=flagged, invalid=tuple(invalid), drift=drift,
        c_emp_refined=c_fine,
    )
