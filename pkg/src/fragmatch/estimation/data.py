"""Observed lists, covariates and cutoffs on a dense facility axis."""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..behavior import UtilityForm, covariate
from ..errors import FlaggedValueWarning, InputError
from ..market import UNMATCHED, Matching, MarketInstance, PriorityProfile


@dataclass(frozen=True, eq=False)
class EstimationDataset:
    """One row per child; columns index facilities ``0..F-1``.

    ``rols`` hold facility indices. ``cutoffs[i, f]`` is the benchmark cutoff
    of the age-school at ``f`` for child ``i``'s age, ``available[i, f]``
    whether that age-school exists for her. ``matched`` and ``reachable``
    are only needed by the moment estimator.
    """

    rols: tuple[tuple[int, ...], ...]
    distance: np.ndarray
    form: UtilityForm = UtilityForm.LINEAR
    scores: np.ndarray | None = None
    cutoffs: np.ndarray | None = None
    available: np.ndarray | None = None
    matched: np.ndarray | None = None
    reachable: np.ndarray | None = None
    k_max: int = 10
    facility_ids: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        d = np.asarray(self.distance, dtype=float)
        if d.ndim != 2:
            raise InputError("distance must be an (n_children x n_facilities) matrix")
        object.__setattr__(self, "distance", d)
        object.__setattr__(self, "form", UtilityForm(self.form))
        object.__setattr__(self, "rols", tuple(tuple(int(f) for f in r) for r in self.rols))
        n, F = d.shape
        if len(self.rols) != n:
            raise InputError(f"{len(self.rols)} lists for {n} distance rows")
        if self.available is None:
            object.__setattr__(self, "available", np.ones((n, F), dtype=bool))
        else:
            object.__setattr__(self, "available", np.asarray(self.available, dtype=bool))
        if self.facility_ids is None:
            object.__setattr__(self, "facility_ids", np.arange(F))
        for i, r in enumerate(self.rols):
            if len(set(r)) != len(r):
                raise InputError(f"child {i}: list repeats a facility")
            if any(f < 0 or f >= F for f in r):
                raise InputError(f"child {i}: list names an unknown facility")
            if len(r) > 0 and not self.available[i, list(r)].all():
                raise InputError(f"child {i}: list names a facility without a seat for her age")

    @property
    def n(self) -> int:
        return self.distance.shape[0]

    @property
    def n_facilities(self) -> int:
        return self.distance.shape[1]

    @cached_property
    def covariate(self) -> np.ndarray:
        """Distance term of utility; 0 where the facility is unavailable."""
        d = np.where(self.available, self.distance, 1.0)
        return np.where(self.available, covariate(d, self.form), 0.0)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([len(r) for r in self.rols], dtype=np.int64)

    @cached_property
    def rol_matrix(self) -> np.ndarray:
        """Lists padded with -1 to the longest length."""
        width = max(1, int(self.lengths.max(initial=0)))
        out = np.full((self.n, width), -1, dtype=np.int64)
        for i, r in enumerate(self.rols):
            out[i, : len(r)] = r
        return out

    @cached_property
    def position(self) -> np.ndarray:
        """0-based rank of each facility in each list, -1 if unlisted."""
        pos = np.full((self.n, self.n_facilities), -1, dtype=np.int64)
        for i, r in enumerate(self.rols):
            pos[i, list(r)] = np.arange(len(r))
        return pos

    def listed_facilities(self) -> np.ndarray:
        seen = np.zeros(self.n_facilities, dtype=bool)
        for r in self.rols:
            seen[list(r)] = True
        if self.matched is not None:
            m = np.asarray(self.matched)
            seen[m[m >= 0]] = True
        return seen

    def with_form(self, form: UtilityForm | str) -> EstimationDataset:
        return replace(self, form=UtilityForm(form))

    def subset(self, rows: np.ndarray) -> EstimationDataset:
        """Children at ``rows`` (repeats allowed, as in a bootstrap draw)."""
        rows = np.asarray(rows, dtype=np.int64)

        def pick(a):
            return None if a is None else np.asarray(a)[rows]

        return replace(
            self,
            rols=tuple(self.rols[k] for k in rows),
            distance=self.distance[rows],
            scores=pick(self.scores),
            cutoffs=pick(self.cutoffs),
            available=self.available[rows],
            matched=pick(self.matched),
            reachable=pick(self.reachable),
        )

    def restrict_facilities(self, keep: np.ndarray) -> EstimationDataset:
        keep = np.asarray(keep, dtype=bool)
        remap = np.cumsum(keep) - 1
        rols = tuple(tuple(int(remap[f]) for f in r) for r in self.rols)
        matched = None
        if self.matched is not None:
            m = np.asarray(self.matched)
            matched = np.where(m >= 0, remap[np.maximum(m, 0)], UNMATCHED)
            matched[(m >= 0) & ~keep[np.maximum(m, 0)]] = UNMATCHED
        return replace(
            self,
            rols=rols,
            distance=self.distance[:, keep],
            cutoffs=None if self.cutoffs is None else np.asarray(self.cutoffs)[:, keep],
            available=self.available[:, keep],
            matched=matched,
            reachable=None if self.reachable is None else np.asarray(self.reachable)[:, keep],
            facility_ids=np.asarray(self.facility_ids)[keep],
        )

    def drop_unlisted(self) -> EstimationDataset:
        """Remove facilities no child lists (or is matched to); their quality is unidentified."""
        seen = self.listed_facilities()
        if seen.all():
            return self
        dropped = np.asarray(self.facility_ids)[~seen].tolist()
        warnings.warn(f"dropping never-listed facilities {dropped}", FlaggedValueWarning, stacklevel=2)
        return self.restrict_facilities(seen)


def reachable_set(child: int, matching: Matching, market: MarketInstance, priorities: PriorityProfile | None = None) -> set[int]:
    """Age-schools with a vacancy, or holding someone of priority no higher than ``child``.

    The child herself counts as such an occupant of her own school.
    """
    pri = priorities if priorities is not None else market.priorities
    out = set()
    for s, roster in enumerate(matching.rosters):
        if len(roster) < market.schools[s].capacity:
            out.add(s)
            continue
        if not roster:
            continue
        own = pri.key(s, child)
        if any(pri.key(s, j) >= own for j in roster):
            out.add(s)
    return out


def from_market(
    market: MarketInstance,
    distances: np.ndarray,
    *,
    form: UtilityForm | str = UtilityForm.LINEAR,
    matching: Matching | None = None,
    cutoffs: np.ndarray | None = None,
    priorities: PriorityProfile | None = None,
    k_max: int = 10,
    rols: Sequence[Sequence[int]] | None = None,
) -> EstimationDataset:
    """Collapse an age-school market onto facilities.

    ``distances`` is student x age-school; ``cutoffs`` is per age-school;
    ``rols`` (age-school ids) default to the students' preferences.
    """
    facilities = np.unique(market.school_facility)
    fidx = {int(f): k for k, f in enumerate(facilities)}
    n, F = market.n_students, len(facilities)
    school_at = {}
    for sch in market.schools:
        school_at[sch.age, fidx[sch.facility]] = sch.id
    dist = np.zeros((n, F))
    avail = np.zeros((n, F), dtype=bool)
    cut = np.zeros((n, F))
    reach = np.zeros((n, F), dtype=bool) if matching is not None else None
    lists = rols if rols is not None else [st.preferences for st in market.students]
    for st in market.students:
        for f in range(F):
            s = school_at.get((st.age, f))
            if s is None:
                continue
            avail[st.id, f] = market.schools[s].capacity > 0
            dist[st.id, f] = distances[st.id, s]
            if cutoffs is not None:
                cut[st.id, f] = cutoffs[s]
        for s in lists[st.id]:
            avail[st.id, fidx[market.schools[s].facility]] = True
    matched = None
    if matching is not None:
        matched = np.array(
            [UNMATCHED if s == UNMATCHED else fidx[market.schools[s].facility] for s in matching.assign],
            dtype=np.int64,
        )
        for st in market.students:
            for s in reachable_set(st.id, matching, market, priorities):
                if market.schools[s].age == st.age:
                    reach[st.id, fidx[market.schools[s].facility]] = True
    fac_rols = [tuple(fidx[market.schools[s].facility] for s in r) for r in lists]
    return EstimationDataset(
        rols=tuple(fac_rols),
        distance=dist,
        form=form,
        scores=np.array([st.score for st in market.students], dtype=float),
        cutoffs=cut if cutoffs is not None else None,
        available=avail,
        matched=matched,
        reachable=reach,
        k_max=k_max,
        facility_ids=facilities,
    )
