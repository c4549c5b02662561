"""Exact-match grouping on an active covariate subset.

Two interchangeable backends produce identical group partitions:

* ``mixed_radix``: each unit's active codes collapse into one integer key
  (arity-sorted positional weights), so grouping is integer counting; and
* ``tuple_key``: plain dict grouping on the full code tuples, kept as the
  slow independent reference.

Also emits the equivalent two-statement SQL text for engines that prefer to
run the grouping as a ``GROUP BY``/``UPDATE`` against a live table.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import Dataset
from .errors import EmissionError

INT64_MAX = np.iinfo(np.int64).max


def check_active(active, p: int) -> tuple[int, ...]:
    """Validate an active covariate index set: strictly increasing, in range, non-empty."""
    active = tuple(int(a) for a in active)
    if not active:
        raise ValueError("active covariate set must be non-empty")
    if any(a < 0 or a >= p for a in active):
        raise ValueError(f"active indices out of range for p={p}: {active}")
    if any(b <= a for a, b in zip(active, active[1:])):
        raise ValueError(f"active indices must be strictly increasing: {active}")
    return active


@dataclass(frozen=True)
class UnitKeys:
    """Integer keys per unit: ``b`` over covariates, ``b_plus`` adds treatment.

    ``c``/``c_plus`` are occurrence counts of each unit's key among the
    considered units; they are filled in by :func:`count_and_flag` (zero for
    units outside the considered set).
    """

    b: np.ndarray
    b_plus: np.ndarray
    c: np.ndarray | None = None
    c_plus: np.ndarray | None = None
    b_bound: int | None = None
    b_plus_bound: int | None = None


def _radix_weights(arities) -> tuple[list[int], list[int], int, int]:
    """Positional weights for sorted arities h_0 <= h_1 <= ...

    Digit k of ``b`` weighs h_k^k; in ``b_plus`` the treatment bit takes the
    ones place and digit k shifts up to h_k^(k+1). Also returns the exclusive
    upper bounds of both keys (they pick the int64 fast path and the
    bincount counting regime).
    """
    w_b, w_plus = [], []
    max_b, max_plus = 0, 1
    for k, h in enumerate(arities):
        h = int(h)
        w_b.append(h**k)
        w_plus.append(h ** (k + 1))
        max_b += (h - 1) * h**k
        max_plus += (h - 1) * h ** (k + 1)
    return w_b, w_plus, max_b + 1, max_plus + 1


def mixed_radix_keys(d: Dataset, active, rows=None) -> UnitKeys:
    """Collapse the active covariate codes of each unit into integer keys.

    Requires the active covariates to be in non-decreasing arity order (the
    order that makes key equality coincide with tuple equality), which holds
    for any increasing index subset of an arity-sorted dataset. Keys are
    exact: a machine-int path is used only when the largest possible key fits
    in int64, otherwise arbitrary-width Python integers take over.
    """
    active = check_active(active, d.n_covariates)
    return _ordered_keys(d, active, rows)


def _ordered_keys(d: Dataset, order, rows=None) -> UnitKeys:
    """Key computation for an explicit digit order (least significant first)."""
    arities = [int(d.arities[a]) for a in order]
    if any(b < a for a, b in zip(arities, arities[1:])):
        raise ValueError(f"active covariates must be sorted by non-decreasing arity, got {arities}")
    order = list(order)
    codes = d.covariates[:, order] if rows is None else d.covariates[np.asarray(rows)][:, order]
    t = d.treatment if rows is None else d.treatment[np.asarray(rows)]
    w_b, w_plus, bound_b, bound_plus = _radix_weights(arities)
    if bound_plus <= INT64_MAX:
        wb = np.asarray(w_b, dtype=np.int64)
        wp = np.asarray(w_plus, dtype=np.int64)
        b = codes @ wb
        b_plus = t + codes @ wp
        return UnitKeys(b=b, b_plus=b_plus, b_bound=bound_b, b_plus_bound=bound_plus)
    # big-key fallback: exact Python ints in object arrays
    rows_list = codes.tolist()
    b = np.array([sum(a * w for a, w in zip(r, w_b)) for r in rows_list], dtype=object)
    b_plus = np.array(
        [int(ti) + sum(a * w for a, w in zip(r, w_plus)) for ti, r in zip(t.tolist(), rows_list)],
        dtype=object,
    )
    return UnitKeys(b=b, b_plus=b_plus)


def _counts(keys: np.ndarray, bound=None) -> np.ndarray:
    if keys.dtype == object:
        tally = Counter(keys.tolist())
        return np.array([tally[k] for k in keys.tolist()], dtype=np.int64)
    return _kernels.occurrence_counts(keys, bound)


def count_and_flag(keys: UnitKeys, considered=None) -> tuple[np.ndarray, UnitKeys]:
    """Occurrence counts over the considered units and the matched flags.

    A unit is matched iff its covariate key count differs from its
    covariate+treatment key count, i.e. its signature occurs under both
    treatment values among the considered units.
    """
    n = len(keys.b)
    if considered is None:
        considered = np.arange(n)
    else:
        considered = np.asarray(considered)
    c = np.zeros(n, dtype=np.int64)
    c_plus = np.zeros(n, dtype=np.int64)
    c[considered] = _counts(keys.b[considered], keys.b_bound)
    c_plus[considered] = _counts(keys.b_plus[considered], keys.b_plus_bound)
    flags = c != c_plus
    return flags, UnitKeys(b=keys.b, b_plus=keys.b_plus, c=c, c_plus=c_plus)


@dataclass(frozen=True)
class Group:
    signature: tuple[int, ...]
    rows: tuple[int, ...]
    n_treated: int
    n_control: int


@dataclass(frozen=True)
class GroupTable:
    """Valid matched groups, sorted lexicographically by signature."""

    active: tuple[int, ...]
    groups: tuple[Group, ...]

    def __len__(self):
        return len(self.groups)

    def signature_map(self) -> dict[tuple[int, ...], Group]:
        return {g.signature: g for g in self.groups}


@dataclass(frozen=True)
class MatchResult:
    matched: np.ndarray
    table: GroupTable
    remainder: np.ndarray


def _arity_order(d: Dataset, active: tuple[int, ...]) -> list[int]:
    # stable sort of the active subset by arity; key equality is unaffected
    # by digit order, only the injectivity argument needs it
    return sorted(active, key=lambda a: (int(d.arities[a]), a))


def match_flags(d: Dataset, considered, active, backend: str = "mixed_radix"):
    """Matched-or-not flags over ``considered`` plus per-arm matched counts.

    Lighter than :func:`basic_exact_match`: no group table is built. Used for
    per-candidate trial scoring where only the balancing factor is needed.
    """
    considered = np.asarray(considered)
    active = check_active(active, d.n_covariates)
    if considered.size == 0:
        empty = np.zeros(0, dtype=bool)
        return empty, 0, 0
    if backend == "mixed_radix":
        keys = _ordered_keys(d, _arity_order(d, active), rows=considered)
        c = _counts(keys.b, keys.b_bound)
        c_plus = _counts(keys.b_plus, keys.b_plus_bound)
        flags = c != c_plus
    elif backend == "tuple_key":
        tallies: dict[tuple, list[int]] = {}
        codes = d.covariates[considered][:, active].tolist()
        t = d.treatment[considered].tolist()
        for sig, ti in zip(codes, t):
            entry = tallies.setdefault(tuple(sig), [0, 0])
            entry[ti] += 1
        flags = np.array([min(tallies[tuple(sig)]) > 0 for sig in codes], dtype=bool)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    t_considered = d.treatment[considered]
    n_t = int(np.sum(flags & (t_considered == 1)))
    n_c = int(np.sum(flags & (t_considered == 0)))
    return flags, n_t, n_c


def basic_exact_match(d: Dataset, considered, active, backend: str = "mixed_radix") -> MatchResult:
    """Group considered units by exact equality on the active covariates.

    Groups lacking a treated or a control member are pruned; matched units
    are members of surviving groups, the remainder is everything else. Both
    backends return the identical :class:`GroupTable`.
    """
    considered = np.asarray(considered)
    active = check_active(active, d.n_covariates)
    if considered.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return MatchResult(empty, GroupTable(active, ()), empty)

    if backend == "tuple_key":
        members: dict[tuple, list[int]] = {}
        codes = d.covariates[considered][:, active].tolist()
        for pos, sig in zip(considered.tolist(), codes):
            members.setdefault(tuple(sig), []).append(pos)
        groups = []
        for sig in sorted(members):
            rows = members[sig]
            n_t = int(d.treatment[rows].sum())
            if 1 <= n_t <= len(rows) - 1:
                groups.append(Group(sig, tuple(rows), n_t, len(rows) - n_t))
    elif backend == "mixed_radix":
        keys = _ordered_keys(d, _arity_order(d, active), rows=considered)
        c = _counts(keys.b, keys.b_bound)
        c_plus = _counts(keys.b_plus, keys.b_plus_bound)
        flags = c != c_plus
        hit = considered[flags]
        groups = []
        if hit.size:
            hit_keys = keys.b[flags]
            if hit_keys.dtype == object:
                runs: dict[object, list[int]] = {}
                for pos, k in zip(hit.tolist(), hit_keys.tolist()):
                    runs.setdefault(k, []).append(pos)
                chunks = list(runs.values())
            else:
                order, starts = _kernels.sorted_runs(hit_keys)
                chunks = [hit[order[starts[g] : starts[g + 1]]].tolist() for g in range(len(starts) - 1)]
            for rows in chunks:
                sig = tuple(int(v) for v in d.covariates[rows[0], active])
                n_t = int(d.treatment[rows].sum())
                groups.append(Group(sig, tuple(rows), n_t, len(rows) - n_t))
            groups.sort(key=lambda g: g.signature)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    matched = np.array(sorted(r for g in groups for r in g.rows), dtype=np.int64)
    mask = np.isin(considered, matched, assume_unique=True)
    remainder = considered[~mask]
    return MatchResult(matched, GroupTable(active, tuple(groups)), remainder)


def group_table_json(table: GroupTable, d: Dataset) -> list[dict]:
    """JSON-ready view of a group table with dataset unit ids."""
    out = []
    for g in table.groups:
        out.append(
            {
                "signature": list(g.signature),
                "unit_ids": [_json_id(d.unit_ids[r]) for r in g.rows],
                "n_treated": g.n_treated,
                "n_control": g.n_control,
            }
        )
    return out


def _json_id(v):
    return v.item() if isinstance(v, np.generic) else v


_SQL_TEMPLATE = """WITH tempgroups AS
(SELECT {cols}
FROM {table}
WHERE is_matched = 0
GROUP BY {cols}
HAVING SUM(T) >= 1 AND SUM(T) <= COUNT(*)-1
),
UPDATE {table}
SET is_matched = {level}
WHERE EXISTS
  (SELECT {qualified}
   FROM tempgroups S
   WHERE {joins})
  AND is_matched = 0
"""


def _check_identifier(name: str) -> str:
    if not name or any(ch.isspace() or ch in "'\"`;" for ch in name):
        raise EmissionError(f"identifier {name!r} cannot be embedded in SQL without quoting")
    return name


def emit_sql(covariates, level: int, table_name: str = "D") -> str:
    """Two-statement grouping query: collect valid groups, then stamp members.

    The HAVING clause keeps exactly the groups with at least one treated and
    at least one control member; matched units get ``is_matched = level``.
    Text emission only; nothing here talks to a database.
    """
    names = [_check_identifier(c) for c in covariates]
    if not names:
        raise ValueError("need at least one covariate name")
    if int(level) != level or level < 1:
        raise ValueError(f"level must be an integer >= 1, got {level}")
    _check_identifier(table_name)
    cols = ", ".join(names)
    qualified = ", ".join(f"{table_name}.{c}" for c in names)
    joins = " AND ".join(f"S.{c} = {table_name}.{c}" for c in names)
    return _SQL_TEMPLATE.format(cols=cols, table=table_name, level=int(level), qualified=qualified, joins=joins)
