"""Model specifications and design-matrix assembly.

Three families share one assembly routine:

* ``sgam``: submarket-specific property-type effects and smooths of beds,
  baths, size and month, plus national GP and MRF spatial smooths;
* ``ngam``: the same without any submarket interaction;
* ``hedonic``: parametric terms and linear beds/baths/size/month only.

Factor terms use sum-to-zero (deviation) coding, so every level's effect is
a deviation from the grand mean and the last level in the enumeration is
the reference.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import (
    BasisBlock,
    KernelConfig,
    center_block,
    crs_basis,
    default_gp_range,
    gp_basis,
    mrf_basis,
    pspline_basis,
    select_knots_spacefilling,
)
from .records import BER_LEVELS, FEATURES, PROPERTY_TYPES, SUBMARKETS, records_to_arrays

log = logging.getLogger(__name__)

FAMILIES = ("sgam", "ngam", "hedonic")
SMOOTH_VARS = ("beds", "baths", "size", "month")
DEFAULT_KNOTS = {"beds": 8, "baths": 7, "size": 40, "month": 10, "location": 400}


@dataclass(frozen=True)
class ModelSpec:
    family: str = "sgam"
    knots: dict = field(default_factory=lambda: dict(DEFAULT_KNOTS))
    kernel_rho: float | None = None
    knot_seed: int = 42
    submarkets: tuple = SUBMARKETS
    interact_smooths: bool | None = None
    interact_type: bool | None = None
    use_features: bool = True
    use_ber: bool = True
    use_type: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        knots = {**DEFAULT_KNOTS, **dict(self.knots)}
        object.__setattr__(self, "knots", knots)
        sub = self.family == "sgam"
        if self.interact_smooths is None:
            object.__setattr__(self, "interact_smooths", sub)
        if self.interact_type is None:
            object.__setattr__(self, "interact_type", sub)
        if self.family == "hedonic" and (self.interact_smooths or self.interact_type):
            raise ValueError("hedonic model has no submarket interactions")

    @property
    def has_smooths(self) -> bool:
        return self.family != "hedonic"

    def as_dict(self):
        return {
            "family": self.family, "knots": dict(self.knots),
            "kernel_rho": self.kernel_rho, "knot_seed": self.knot_seed,
            "submarkets": list(self.submarkets),
            "interact_smooths": self.interact_smooths,
            "interact_type": self.interact_type, "use_features": self.use_features,
            "use_ber": self.use_ber, "use_type": self.use_type,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "submarkets" in d:
            d["submarkets"] = tuple(d["submarkets"])
        return cls(**d)


# ---------------------------------------------------------------------------
# sum-to-zero coding
# ---------------------------------------------------------------------------

def deviation_coding(n_levels: int) -> np.ndarray:
    """``(L, L-1)`` contrast matrix; the last level is the reference."""
    C = np.zeros((n_levels, n_levels - 1))
    C[: n_levels - 1] = np.eye(n_levels - 1)
    C[-1] = -1.0
    return C


@dataclass(frozen=True)
class FactorDecoder:
    levels: tuple

    @property
    def contrast(self):
        return deviation_coding(len(self.levels))

    def effects(self, coef):
        """All-level effects from the ``L-1`` coded coefficients (sum to zero)."""
        return self.contrast @ np.asarray(coef, dtype=float)

    def effect_cov(self, cov):
        C = self.contrast
        return C @ np.asarray(cov) @ C.T

    def scalings(self, coef):
        return dict(zip(self.levels, np.exp(self.effects(coef))))


def encode_sum_to_grand_mean(values, levels=None):
    """Deviation-code a factor.

    Returns ``(columns, decoder)``; ``columns`` is ``(n, L-1)``. With a
    single level the coding is empty and a warning is logged.
    """
    values = np.asarray(values, dtype=object)
    if levels is None:
        levels = tuple(sorted(set(values.tolist())))
    levels = tuple(levels)
    if len(levels) < 2:
        log.warning("factor with a single level: coding is empty")
        return np.zeros((len(values), 0)), FactorDecoder(levels)
    index = {lv: i for i, lv in enumerate(levels)}
    try:
        codes = np.array([index[v] for v in values], dtype=int)
    except KeyError as e:
        raise ValueError(f"unknown factor level {e.args[0]!r}") from None
    return deviation_coding(len(levels))[codes], FactorDecoder(levels)


# ---------------------------------------------------------------------------
# terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Term:
    """One column block of the design.

    ``kind`` is ``intercept``, ``features``, ``factor``, ``linear`` or
    ``smooth``. ``by`` restricts the block to records of one submarket.
    """

    label: str
    kind: str
    variable: str
    width: int
    by: str | None = None
    levels: tuple = ()
    block: BasisBlock | None = None
    column_labels: tuple = ()

    @property
    def penalized(self) -> bool:
        return self.kind == "smooth"

    @property
    def penalty(self):
        return None if self.block is None else self.block.penalty

    @property
    def decoder(self):
        return FactorDecoder(self.levels) if self.kind == "factor" else None

    def rows(self, arrays) -> np.ndarray:
        n = len(arrays["log_ppsm"]) if "log_ppsm" in arrays else len(arrays["submarket"])
        if self.kind == "intercept":
            out = np.ones((n, 1))
        elif self.kind == "features":
            out = np.asarray(arrays["features"], dtype=float).reshape(n, len(FEATURES))
        elif self.kind == "linear":
            out = np.asarray(arrays[self.variable], dtype=float).reshape(n, 1)
        elif self.kind == "factor":
            out, _ = encode_sum_to_grand_mean(arrays[self.variable], self.levels)
        elif self.kind == "smooth":
            out = np.zeros((n, self.width))
            mask = np.ones(n, dtype=bool) if self.by is None else arrays["submarket"] == self.by
            if mask.any():
                out[mask] = self.block.evaluate(_smooth_input(arrays, self.variable, mask))
            return out
        else:
            raise ValueError(self.kind)
        if self.by is not None:
            out = out * (arrays["submarket"] == self.by)[:, None]
        return out


def _smooth_input(arrays, variable, mask):
    if variable == "location":
        return np.column_stack([arrays["x"][mask], arrays["y"][mask]])
    if variable == "region":
        return arrays["region_id"][mask]
    return arrays[variable][mask]


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    X: np.ndarray
    terms: tuple
    spec: ModelSpec

    @property
    def slices(self):
        out, start = [], 0
        for t in self.terms:
            out.append(slice(start, start + t.width))
            start += t.width
        return out

    @property
    def column_labels(self):
        return [lab for t in self.terms for lab in t.column_labels]

    @property
    def penalized_terms(self):
        return [i for i, t in enumerate(self.terms) if t.penalized]

    def penalties(self):
        """``[(slice, S)]`` for each penalized term, in λ-slot order."""
        sl = self.slices
        return [(sl[i], self.terms[i].penalty) for i in self.penalized_terms]

    def term_index(self, label):
        for i, t in enumerate(self.terms):
            if t.label == label:
                return i
        raise KeyError(label)

    def rows(self, arrays) -> np.ndarray:
        """Design rows for new records (same column layout as ``X``)."""
        return np.hstack([t.rows(arrays) for t in self.terms])


def _factor_term(variable, levels, by=None):
    prefix = variable if by is None else f"{variable}[{by}]"
    return Term(
        label=prefix, kind="factor", variable=variable, width=len(levels) - 1,
        by=by, levels=tuple(levels),
        column_labels=tuple(f"{prefix}:{lv}" for lv in levels[:-1]),
    )


def _smooth_term(variable, block, by=None):
    label = f"s({variable})" if by is None else f"s({variable})[{by}]"
    block = replace(block, label=label)
    return Term(
        label=label, kind="smooth", variable=variable, width=block.width, by=by,
        block=block, column_labels=tuple(f"{label}.{j}" for j in range(block.width)),
    )


def _smooth_block(variable, values, k):
    if variable == "month":
        return pspline_basis(values, k)
    return crs_basis(values, k)


def build_design(records, spec: ModelSpec, graph=None, arrays=None) -> DesignMatrix:
    """Assemble the design matrix and penalty blocks for ``records``.

    ``graph`` (a :class:`RegionGraph`) is required for the GAM families.
    A submarket with too few distinct values for a smooth loses that block
    (logged); records from a submarket outside ``spec.submarkets`` raise.
    """
    a = arrays if arrays is not None else records_to_arrays(records)
    n = len(a["log_ppsm"])
    bad = sorted(set(a["submarket"].tolist()) - set(spec.submarkets))
    if bad:
        raise ValueError(f"records with submarket(s) absent from ModelSpec.submarkets: {bad}")

    terms = [Term("intercept", "intercept", "intercept", 1, column_labels=("intercept",))]
    if spec.use_features:
        terms.append(Term("features", "features", "features", len(FEATURES),
                          column_labels=tuple(f"feature:{f}" for f in FEATURES)))
    if spec.use_ber:
        terms.append(_factor_term("ber", BER_LEVELS))
    if spec.use_type:
        if spec.interact_type:
            for s in spec.submarkets:
                if np.any(a["submarket"] == s):
                    terms.append(_factor_term("property_type", PROPERTY_TYPES, by=s))
        else:
            terms.append(_factor_term("property_type", PROPERTY_TYPES))

    if spec.family == "hedonic":
        for v in SMOOTH_VARS:
            terms.append(Term(v, "linear", v, 1, column_labels=(v,)))
    else:
        if graph is None:
            raise ValueError("GAM families need a region graph")
        groups = spec.submarkets if spec.interact_smooths else (None,)
        for v in SMOOTH_VARS:
            for s in groups:
                mask = np.ones(n, dtype=bool) if s is None else a["submarket"] == s
                vals = a[v][mask]
                if len(np.unique(vals)) < 3:
                    if mask.any():
                        log.warning("dropping s(%s)[%s]: fewer than 3 distinct values", v, s)
                    continue
                block = center_block(_smooth_block(v, vals, spec.knots[v]))
                terms.append(_smooth_term(v, block, by=s))
        coords = np.column_stack([a["x"], a["y"]])
        knots = select_knots_spacefilling(coords, spec.knots["location"], seed=spec.knot_seed)
        rho = spec.kernel_rho or default_gp_range(knots)
        terms.append(_smooth_term("location", center_block(gp_basis(coords, knots, KernelConfig(rho)))))
        terms.append(_smooth_term("region", center_block(mrf_basis(a["region_id"], graph))))

    design = DesignMatrix(np.empty((n, 0)), tuple(terms), spec)
    X = np.empty((n, sum(t.width for t in terms)))
    for t, sl in zip(terms, design.slices):
        X[:, sl] = t.block.design if (t.kind == "smooth" and t.by is None) else t.rows(a)
    return replace(design, X=X)
