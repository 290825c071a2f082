"""Implicit social tissue: stratified agents, contexts, geography, mobility.

When no explicit contact graph is available, contacts are drawn on the
fly from the social contexts each agent belongs to (home census cell,
workplace, school class). A context is a closed pool: anyone in it may
meet anyone else in it. No edge set is ever materialized, so memory
scales with agents and contexts rather than with potential ties.

Geography enters through a nested tessellation (census cell inside
municipality inside province) and one row-stochastic origin-destination
matrix per level. Long-range interaction slots pick a destination region
from the agent's home row of the matrix, optionally confined below a
mobility cap (e.g. "stay within your municipality" during a lockdown),
then a uniform agent living there.

A parametric synthetic population generator stands in for real census
data so stratified scenarios stay reproducible from a single seed.
"""

from __future__ import annotations

import csv
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from episim.compartments import Compartment, ConfigurationError

#: Context kinds sampled in this fixed order.
DEFAULT_CONTEXT_KINDS = ("home_cell", "workplace", "school")


@dataclass
class Tessellation:
    """Nested geographic partition, lowest level first.

    ``parents[k][i]`` is the index (at level k+1) containing region i of
    level k; the top level has no parent array. Region ids are kept for
    file round-trips; all internal work uses indexes.
    """

    levels: tuple[str, ...]
    ids: dict[str, list[str]]
    parents: dict[str, np.ndarray]

    def size(self, level: str) -> int:
        return len(self.ids[level])

    def level_index(self, level: str) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise ConfigurationError(
                f"unknown tessellation level {level!r}; "
                f"have {list(self.levels)}") from None

    def ancestor(self, region: int, level_from: str, level_to: str) -> int:
        """Index of the level_to region containing ``region`` of level_from."""
        lo, hi = self.level_index(level_from), self.level_index(level_to)
        if hi < lo:
            raise ConfigurationError(
                f"{level_to!r} is below {level_from!r}")
        idx = region
        for k in range(lo, hi):
            idx = int(self.parents[self.levels[k]][idx])
        return idx

    def ancestors_array(self, level_from: str, level_to: str) -> np.ndarray:
        """Vectorized ancestor lookup for every region of ``level_from``."""
        lo, hi = self.level_index(level_from), self.level_index(level_to)
        out = np.arange(self.size(level_from))
        for k in range(lo, hi):
            out = self.parents[self.levels[k]][out]
        return out


@dataclass
class OdMatrixSet:
    """One row-stochastic mobility matrix per tessellation level."""

    matrices: dict[str, np.ndarray]

    def __post_init__(self):
        for level, mat in self.matrices.items():
            check_row_stochastic(mat, what=f"OD matrix for level {level!r}")
        self._cum = {level: np.cumsum(mat, axis=1)
                     for level, mat in self.matrices.items()}

    def row(self, level: str, origin: int) -> np.ndarray:
        return self.matrices[level][origin]

    def sample_destination(self, level: str, origin: int,
                           rng: np.random.Generator) -> int:
        """Destination region drawn from the origin's row distribution."""
        cum = self._cum[level][origin]
        return int(np.searchsorted(cum, rng.random(), side="right"))


def check_row_stochastic(mat: np.ndarray, what: str = "matrix",
                         tol: float = 1e-9) -> None:
    if np.any(mat < 0):
        row = int(np.argwhere(mat < 0)[0][0])
        raise ConfigurationError(f"{what}: negative entry in row {row}")
    sums = mat.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        row = int(bad[0])
        raise ConfigurationError(
            f"{what}: row {row} sums to {sums[row]:.6g}, expected 1")


def sample_longrange_region(home: int, level: str, od: OdMatrixSet,
                            rng: np.random.Generator) -> int:
    """Draw the region a long-range interaction happens in.

    The starting location is always the agent's home region; the
    destination follows the home row of the level's mobility matrix.
    """
    return od.sample_destination(level, home, rng)


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------

@dataclass
class Agent:
    """Record view of one agent; the backing columns live in Population."""

    id: int
    attributes: dict[str, Any]
    contexts: dict[str, str]
    home_region: str
    activity: dict[str, float]
    compartment: Compartment = Compartment.S


ContactDraw = namedtuple("ContactDraw", ["ids", "dropped"])


@dataclass
class Population:
    """Columnar store for the whole stratified population.

    ``context_of[kind][i]`` is the context index of agent i for that kind
    (-1 when the agent has none); ``members[kind][c]`` lists the agents of
    context c. ``activity[kind][i]`` is the agent's per-member interaction
    probability within that context.
    """

    n: int
    columns: dict[str, np.ndarray]
    context_kinds: tuple[str, ...]
    context_of: dict[str, np.ndarray]
    members: dict[str, list[np.ndarray]]
    context_ids: dict[str, list[str]]
    activity: dict[str, np.ndarray]
    tessellation: Tessellation
    od: OdMatrixSet
    od_level: str = "cell"

    def __post_init__(self):
        self.home_cell = self.context_of["home_cell"]
        if np.any(self.home_cell < 0):
            agent = int(np.flatnonzero(self.home_cell < 0)[0])
            raise ConfigurationError(f"agent {agent} has no home cell")
        self._position_cache: dict[str, np.ndarray] = {}
        self._capped_rows: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = {}
        # members of each lowest-level region, for long-range target pools
        self.cell_members = self.members["home_cell"]

    # -- record views -------------------------------------------------------

    def agent(self, i: int) -> Agent:
        attrs = {name: col[i].item() if hasattr(col[i], "item") else col[i]
                 for name, col in self.columns.items()}
        contexts = {}
        activity = {}
        for kind in self.context_kinds:
            c = int(self.context_of[kind][i])
            if c >= 0:
                contexts[kind] = self.context_ids[kind][c]
                activity[kind] = float(self.activity[kind][i])
        home = self.tessellation.ids[self.tessellation.levels[0]][
            int(self.home_cell[i])]
        return Agent(i, attrs, contexts, home, activity)

    def context_members(self, kind: str, context_id: str) -> set[int]:
        idx = self.context_ids[kind].index(context_id)
        return set(self.members[kind][idx].tolist())

    def _position_in_context(self, kind: str) -> np.ndarray:
        """Rank of each agent inside its context's member array."""
        if kind not in self._position_cache:
            pos = np.full(self.n, -1, dtype=np.int64)
            for arr in self.members[kind]:
                pos[arr] = np.arange(len(arr))
            self._position_cache[kind] = pos
        return self._position_cache[kind]

    # -- long-range machinery ------------------------------------------------

    def _longrange_row(self, home: int, cap_level: str | None,
                       ) -> tuple[np.ndarray, np.ndarray]:
        """Destination regions reachable from ``home`` and cumulative probs.

        With a mobility cap the home row is restricted to regions sharing
        the home's ancestor at the cap level, then renormalized. Cached
        per (cap, home).
        """
        key = (cap_level or "", home)
        if key in self._capped_rows:
            return self._capped_rows[key]
        level = self.od_level
        row = self.od.row(level, home)
        if cap_level is None or cap_level == self.tessellation.levels[-1]:
            regions = np.arange(len(row))
            probs = row
        else:
            anc = self.tessellation.ancestors_array(level, cap_level)
            keep = anc == anc[home]
            regions = np.flatnonzero(keep)
            probs = row[regions]
            total = probs.sum()
            if total <= 0:
                # nothing reachable under the cap: stay in the home region
                regions = np.array([home])
                probs = np.array([1.0])
            else:
                probs = probs / total
        cum = np.cumsum(probs)
        self._capped_rows[key] = (regions, cum)
        return regions, cum

    def _draw_longrange_partner(self, agent: int, cap_level: str | None,
                                rng: np.random.Generator) -> int:
        home = int(self.home_cell[agent])
        regions, cum = self._longrange_row(home, cap_level)
        region = int(regions[np.searchsorted(cum, rng.random(), side="right")])
        pool = self.cell_members[region]
        size = len(pool)
        if region == home:
            if size <= 1:
                return -1
            pick = int(rng.integers(0, size - 1))
            pos = int(self._position_in_context("home_cell")[agent])
            if pick >= pos:
                pick += 1
            return int(pool[pick])
        if size == 0:
            return -1
        return int(pool[rng.integers(0, size)])


def sample_implicit_contacts(pop: Population, agent: int, p: float,
                             rng: np.random.Generator,
                             mobility_level_cap: str | None = None,
                             kinds: Sequence[str] | None = None,
                             keep: float = 1.0) -> ContactDraw:
    """Draw one iteration's interaction partners for ``agent``.

    Each tie to another member of a shared context activates
    independently with the agent's activity score for that context, so
    the per-context partner count is Binomial(pool size - 1, score) and
    the local partners are distinct members. Each activated slot is then
    independently rewired with probability ``p`` into a long-range
    interaction: a destination region drawn from the agent's home
    mobility row (confined under ``mobility_level_cap`` when set), then a
    uniform resident. Slots whose destination holds no eligible resident
    are dropped and counted.

    ``kinds`` restricts which contexts are sampled (a locked-down agent
    only mixes within its home cell); ``keep`` < 1 applies the same
    per-tie thinning coin as the explicit sampler.

    Returns a ContactDraw of partner ids (duplicates can arise from
    rewiring; each is a separate interaction event) and the dropped-slot
    count.
    """
    from episim.graphs import distinct_indices

    out: list[np.ndarray] = []
    dropped = 0
    use_kinds = pop.context_kinds if kinds is None else tuple(kinds)
    for kind in use_kinds:
        cid = int(pop.context_of[kind][agent])
        if cid < 0:
            continue
        score = float(pop.activity[kind][agent])
        if score <= 0.0:
            continue
        pool = pop.members[kind][cid]
        size = len(pool) - 1
        if size <= 0:
            continue
        k = int(rng.binomial(size, score * keep))
        if k == 0:
            continue
        if p <= 0.0:
            n_long = 0
        elif p >= 1.0:
            n_long = k
        else:
            n_long = int((rng.random(k) < p).sum())
        n_local = k - n_long
        if n_local:
            picks = distinct_indices(size, n_local, rng)
            pos = int(pop._position_in_context(kind)[agent])
            picks = picks.copy()
            picks[picks >= pos] += 1
            out.append(pool[picks])
        for _ in range(n_long):
            partner = pop._draw_longrange_partner(agent, mobility_level_cap,
                                                  rng)
            if partner < 0:
                dropped += 1
            else:
                out.append(np.array([partner], dtype=np.int64))
    if out:
        ids = np.concatenate(out)
    else:
        ids = np.empty(0, dtype=np.int64)
    return ContactDraw(ids, dropped)


# ---------------------------------------------------------------------------
# File loading
# ---------------------------------------------------------------------------

REQUIRED_POPULATION_COLUMNS = ("agent_id", "age", "gender", "home_cell")
OPTIONAL_CONTEXT_COLUMNS = {"workplace_id": "workplace", "school_id": "school"}


@dataclass
class ActivityProfile:
    """Per-age-band activity scores, e.g. 10-25 -> {school: 0.9, ...}."""

    age_min: int
    age_max: int
    scores: dict[str, float]

    def matches(self, age: int) -> bool:
        return self.age_min <= age <= self.age_max


def load_population(population_file: str | Path,
                    tessellation_file: str | Path,
                    od_files: Mapping[str, str | Path],
                    activity_profiles: Sequence[ActivityProfile] = (),
                    od_level: str | None = None) -> Population:
    """Load agents, tessellation and mobility matrices from CSV files.

    Formats:
      * population: header ``agent_id,age,gender,home_cell`` plus optional
        ``workplace_id``, ``school_id`` and any extra attribute columns;
      * tessellation: ``cell_id,parent_id,level`` (top level: empty parent);
      * one OD file per level: ``origin_id,destination_id,probability``
        with absent pairs meaning zero.

    Every schema violation reports file and line; a non-stochastic OD row
    names the row; a context reference to an unknown region names agent
    and context.
    """
    tess = load_tessellation(Path(tessellation_file))
    od = load_od_matrices({k: Path(v) for k, v in od_files.items()}, tess)
    pop = _load_agents(Path(population_file), tess, od,
                       tuple(activity_profiles))
    if od_level is not None:
        tess.level_index(od_level)
        if od_level not in od.matrices:
            raise ConfigurationError(f"no OD matrix for level {od_level!r}")
        pop.od_level = od_level
    return pop


def load_tessellation(path: Path) -> Tessellation:
    rows = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"cell_id", "parent_id", "level"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigurationError(
                f"{path}: header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            if not row["cell_id"] or not row["level"]:
                raise ConfigurationError(
                    f"{path}:{lineno}: cell_id and level are required")
            rows.append((lineno, row["cell_id"], row["parent_id"] or None,
                         row["level"]))
    if not rows:
        raise ConfigurationError(f"{path}: no regions")

    by_level: dict[str, list[tuple[int, str, str | None]]] = {}
    level_of: dict[str, str] = {}
    for lineno, rid, parent, level in rows:
        if rid in level_of:
            raise ConfigurationError(f"{path}:{lineno}: duplicate region {rid!r}")
        level_of[rid] = level
        by_level.setdefault(level, []).append((lineno, rid, parent))

    # order levels bottom-up by following parent links
    child_of: dict[str, str] = {}
    for level, entries in by_level.items():
        parents = {p for _, _, p in entries if p is not None}
        parent_levels = {level_of[p] for p in parents if p in level_of}
        missing = [p for p in parents if p not in level_of]
        if missing:
            raise ConfigurationError(
                f"{path}: parent region {missing[0]!r} is not defined")
        if len(parent_levels) > 1:
            raise ConfigurationError(
                f"{path}: level {level!r} has parents on several levels")
        if parent_levels:
            child_of[parent_levels.pop()] = level
    tops = [lv for lv in by_level
            if all(p is None for _, _, p in by_level[lv])]
    if len(tops) != 1:
        raise ConfigurationError(
            f"{path}: expected exactly one top level, found {sorted(tops)}")
    ordered = [tops[0]]
    while ordered[-1] in child_of:
        ordered.append(child_of[ordered[-1]])
    ordered.reverse()
    if set(ordered) != set(by_level):
        raise ConfigurationError(f"{path}: levels do not form a single chain")

    ids = {lv: [rid for _, rid, _ in by_level[lv]] for lv in ordered}
    index = {lv: {rid: i for i, rid in enumerate(ids[lv])} for lv in ordered}
    parents: dict[str, np.ndarray] = {}
    for k, lv in enumerate(ordered[:-1]):
        up = ordered[k + 1]
        arr = np.empty(len(ids[lv]), dtype=np.int64)
        for lineno, rid, parent in by_level[lv]:
            if parent is None:
                raise ConfigurationError(
                    f"{path}:{lineno}: region {rid!r} on level {lv!r} "
                    f"needs a parent")
            if parent not in index[up]:
                raise ConfigurationError(
                    f"{path}:{lineno}: parent {parent!r} of {rid!r} is not "
                    f"on level {up!r}")
            arr[index[lv][rid]] = index[up][parent]
        parents[lv] = arr
    return Tessellation(tuple(ordered), ids, parents)


def load_od_matrices(paths: Mapping[str, Path], tess: Tessellation,
                     ) -> OdMatrixSet:
    matrices: dict[str, np.ndarray] = {}
    for level, path in paths.items():
        size = tess.size(level)
        index = {rid: i for i, rid in enumerate(tess.ids[level])}
        mat = np.zeros((size, size))
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"origin_id", "destination_id", "probability"}
            if reader.fieldnames is None or not need <= set(reader.fieldnames):
                raise ConfigurationError(
                    f"{path}: header must contain {sorted(need)}")
            for lineno, row in enumerate(reader, start=2):
                for key in ("origin_id", "destination_id"):
                    if row[key] not in index:
                        raise ConfigurationError(
                            f"{path}:{lineno}: unknown region {row[key]!r} "
                            f"for level {level!r}")
                try:
                    prob = float(row["probability"])
                except ValueError:
                    raise ConfigurationError(
                        f"{path}:{lineno}: bad probability "
                        f"{row['probability']!r}") from None
                mat[index[row["origin_id"]], index[row["destination_id"]]] = prob
        matrices[level] = mat
    return OdMatrixSet(matrices)


def _load_agents(path: Path, tess: Tessellation, od: OdMatrixSet,
                 profiles: tuple[ActivityProfile, ...]) -> Population:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigurationError(f"{path}: empty file")
        missing = [c for c in REQUIRED_POPULATION_COLUMNS
                   if c not in reader.fieldnames]
        if missing:
            raise ConfigurationError(
                f"{path}: missing required columns {missing}")
        extra = [c for c in reader.fieldnames
                 if c not in REQUIRED_POPULATION_COLUMNS
                 and c not in OPTIONAL_CONTEXT_COLUMNS]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                age = int(row["age"])
            except ValueError:
                raise ConfigurationError(
                    f"{path}:{lineno}: bad age {row['age']!r}") from None
            rows.append((lineno, row, age))
    if not rows:
        raise ConfigurationError(f"{path}: no agents")

    n = len(rows)
    cell_level = tess.levels[0]
    cell_index = {rid: i for i, rid in enumerate(tess.ids[cell_level])}

    ages = np.empty(n, dtype=np.int64)
    home = np.empty(n, dtype=np.int64)
    genders: list[str] = []
    extras: dict[str, list[str]] = {c: [] for c in extra}
    ctx_raw: dict[str, list[str | None]] = {"workplace": [], "school": []}
    seen_ids = set()
    for i, (lineno, row, age) in enumerate(rows):
        if row["agent_id"] in seen_ids:
            raise ConfigurationError(
                f"{path}:{lineno}: duplicate agent_id {row['agent_id']!r}")
        seen_ids.add(row["agent_id"])
        ages[i] = age
        genders.append(row["gender"])
        if row["home_cell"] not in cell_index:
            raise ConfigurationError(
                f"{path}:{lineno}: agent {row['agent_id']!r} references "
                f"unknown home_cell {row['home_cell']!r}")
        home[i] = cell_index[row["home_cell"]]
        for col, kind in OPTIONAL_CONTEXT_COLUMNS.items():
            value = row.get(col) or None
            ctx_raw[kind].append(value)
        for c in extra:
            extras[c].append(row[c])

    columns: dict[str, np.ndarray] = {"age": ages,
                                      "gender": np.array(genders, dtype=object)}
    for name, values in extras.items():
        try:
            arr = np.array([float(v) for v in values])
            if np.all(arr == arr.astype(np.int64)):
                arr = arr.astype(np.int64)
            columns[name] = arr
        except ValueError:
            columns[name] = np.array(values, dtype=object)

    context_of = {"home_cell": home}
    context_ids: dict[str, list[str]] = {"home_cell": tess.ids[cell_level]}
    for kind in ("workplace", "school"):
        vocab: dict[str, int] = {}
        col = np.full(n, -1, dtype=np.int64)
        for i, value in enumerate(ctx_raw[kind]):
            if value is not None:
                col[i] = vocab.setdefault(value, len(vocab))
        context_of[kind] = col
        context_ids[kind] = list(vocab)

    members = {kind: _build_members(context_of[kind], len(context_ids[kind]))
               for kind in DEFAULT_CONTEXT_KINDS}
    activity = _resolve_activity(ages, context_of, profiles, n)

    return Population(
        n=n, columns=columns, context_kinds=DEFAULT_CONTEXT_KINDS,
        context_of=context_of, members=members, context_ids=context_ids,
        activity=activity, tessellation=tess, od=od,
        od_level=tess.levels[0])


def _build_members(context_of: np.ndarray, n_contexts: int) -> list[np.ndarray]:
    order = np.argsort(context_of, kind="stable")
    sorted_ctx = context_of[order]
    members: list[np.ndarray] = []
    start = int(np.searchsorted(sorted_ctx, 0, side="left"))
    for c in range(n_contexts):
        end = int(np.searchsorted(sorted_ctx, c, side="right"))
        members.append(np.sort(order[start:end]).astype(np.int64))
        start = end
    return members


def _resolve_activity(ages: np.ndarray, context_of: Mapping[str, np.ndarray],
                      profiles: Sequence[ActivityProfile], n: int,
                      ) -> dict[str, np.ndarray]:
    activity = {kind: np.zeros(n, dtype=np.float64)
                for kind in DEFAULT_CONTEXT_KINDS}
    if not profiles:
        return activity
    for i in range(n):
        for prof in profiles:
            if prof.matches(int(ages[i])):
                for kind, score in prof.scores.items():
                    if kind in activity and context_of[kind][i] >= 0:
                        activity[kind][i] = score
                break
    return activity


# ---------------------------------------------------------------------------
# Synthetic population
# ---------------------------------------------------------------------------

#: Age bands as (low, high, share); shaped like a western-European pyramid.
DEFAULT_AGE_BANDS = ((0, 9, 0.08), (10, 25, 0.16), (26, 50, 0.34),
                     (51, 65, 0.22), (66, 90, 0.20))

#: Activity scores per age band; school scores apply to class contexts.
DEFAULT_PROFILES = (
    ActivityProfile(0, 9, {"home_cell": 0.05, "school": 0.9}),
    ActivityProfile(10, 25, {"workplace": 0.0, "home_cell": 0.05,
                             "school": 0.9}),
    ActivityProfile(26, 50, {"workplace": 0.4, "home_cell": 0.1,
                             "school": 0.0}),
    ActivityProfile(51, 65, {"workplace": 0.35, "home_cell": 0.1}),
    ActivityProfile(66, 120, {"home_cell": 0.15}),
)


@dataclass
class SyntheticConfig:
    """Knobs of the synthetic population generator."""

    cell_size_mean: float = 45.0
    cell_size_sd: float = 12.0
    cells_per_municipality: int = 12
    municipalities_per_province: int = 6
    workplace_log_mean: float = 1.8
    workplace_log_sd: float = 0.9
    class_size_mean: float = 24.0
    class_size_sd: float = 4.0
    employment_rate: float = 0.62
    health_worker_share: float = 0.08
    od_distance_scale: float = 0.15
    od_self_weight: float = 4.0
    age_bands: tuple = DEFAULT_AGE_BANDS
    profiles: tuple = DEFAULT_PROFILES


def generate_population(n_agents: int, seed: int,
                        config: SyntheticConfig | None = None) -> Population:
    """Build a stratified synthetic population, deterministic in ``seed``.

    Ages follow the configured bands; children and 10-25s attend school
    classes in their municipality, working-age agents hold jobs in
    municipal workplaces with log-normal sizes, a configurable share of
    them in health care (attribute ``employment == "health"``). Census
    cells nest in municipalities nest in provinces; mobility rows decay
    with distance between region centroids and favour staying local.
    """
    cfg = config or SyntheticConfig()
    if n_agents < 1:
        raise ConfigurationError("need at least one agent")
    rng = np.random.default_rng(seed)

    # --- geography ---------------------------------------------------------
    n_cells = max(1, int(round(n_agents / cfg.cell_size_mean)))
    n_munis = max(1, n_cells // cfg.cells_per_municipality)
    n_provs = max(1, n_munis // cfg.municipalities_per_province)

    prov_xy = rng.random((n_provs, 2))
    muni_prov = rng.integers(0, n_provs, n_munis)
    muni_xy = prov_xy[muni_prov] + rng.normal(0, 0.05, (n_munis, 2))
    cell_muni = rng.integers(0, n_munis, n_cells)
    cell_xy = muni_xy[cell_muni] + rng.normal(0, 0.015, (n_cells, 2))

    tess = Tessellation(
        ("cell", "municipality", "province"),
        {"cell": [f"c{i}" for i in range(n_cells)],
         "municipality": [f"m{i}" for i in range(n_munis)],
         "province": [f"p{i}" for i in range(n_provs)]},
        {"cell": cell_muni, "municipality": muni_prov},
    )
    od = OdMatrixSet({
        "cell": _distance_od(cell_xy, cfg, rng),
        "municipality": _distance_od(muni_xy, cfg, rng),
        "province": _distance_od(prov_xy, cfg, rng),
    })

    # --- agents ------------------------------------------------------------
    shares = np.array([s for _, _, s in cfg.age_bands])
    bands = rng.choice(len(cfg.age_bands), size=n_agents,
                       p=shares / shares.sum())
    lows = np.array([lo for lo, _, _ in cfg.age_bands])
    highs = np.array([hi for _, hi, _ in cfg.age_bands])
    ages = rng.integers(lows[bands], highs[bands] + 1)
    genders = np.where(rng.random(n_agents) < 0.5, "female", "male")

    # home cell sizes roughly normal around the configured mean
    weights = np.clip(rng.normal(cfg.cell_size_mean, cfg.cell_size_sd,
                                 n_cells), 5.0, None)
    home = rng.choice(n_cells, size=n_agents, p=weights / weights.sum())
    home_muni = cell_muni[home]

    employment = np.full(n_agents, "none", dtype=object)
    school_age = (ages >= 3) & (ages <= 25)
    employment[school_age] = "student"
    working = (ages >= 26) & (ages <= 65)
    draw = rng.random(n_agents)
    employed = working & (draw < cfg.employment_rate)
    employment[employed] = "employed"
    health = working & (draw >= cfg.employment_rate) & (
        draw < cfg.employment_rate + cfg.health_worker_share)
    employment[health] = "health"
    employment[(ages > 65)] = "retired"

    # --- workplaces (municipal, log-normal sizes) ---------------------------
    workplace_of = np.full(n_agents, -1, dtype=np.int64)
    workplace_ids: list[str] = []
    workers = employed | health
    for muni in range(n_munis):
        local = np.flatnonzero(workers & (home_muni == muni))
        rng.shuffle(local)
        pos = 0
        while pos < len(local):
            size = max(2, int(round(rng.lognormal(cfg.workplace_log_mean,
                                                  cfg.workplace_log_sd))))
            wid = len(workplace_ids)
            workplace_ids.append(f"w{wid}")
            workplace_of[local[pos:pos + size]] = wid
            pos += size

    # --- school classes (municipal, age-grouped) -----------------------------
    school_of = np.full(n_agents, -1, dtype=np.int64)
    school_ids: list[str] = []
    students = employment == "student"
    for muni in range(n_munis):
        local = np.flatnonzero(students & (home_muni == muni))
        local = local[np.argsort(ages[local], kind="stable")]
        pos = 0
        while pos < len(local):
            size = max(8, int(round(rng.normal(cfg.class_size_mean,
                                               cfg.class_size_sd))))
            sid = len(school_ids)
            school_ids.append(f"k{sid}")
            school_of[local[pos:pos + size]] = sid
            pos += size

    context_of = {"home_cell": home, "workplace": workplace_of,
                  "school": school_of}
    context_ids = {"home_cell": tess.ids["cell"], "workplace": workplace_ids,
                   "school": school_ids}
    members = {kind: _build_members(context_of[kind], len(context_ids[kind]))
               for kind in DEFAULT_CONTEXT_KINDS}
    columns = {"age": ages, "gender": genders, "employment": employment}
    activity = _resolve_activity(ages, context_of, cfg.profiles, n_agents)

    return Population(
        n=n_agents, columns=columns, context_kinds=DEFAULT_CONTEXT_KINDS,
        context_of=context_of, members=members, context_ids=context_ids,
        activity=activity, tessellation=tess, od=od, od_level="cell")


def _distance_od(xy: np.ndarray, cfg: SyntheticConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Row-stochastic mobility from centroid distances, local trips favoured."""
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    weights = np.exp(-dist / cfg.od_distance_scale)
    weights[np.diag_indices_from(weights)] *= cfg.od_self_weight
    return weights / weights.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Export (round-trips through load_population)
# ---------------------------------------------------------------------------

def write_population_files(pop: Population, directory: str | Path,
                           ) -> dict[str, Path]:
    """Write population, tessellation and OD CSVs; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    pop_path = directory / "population.csv"
    extra = [c for c in pop.columns if c not in ("age", "gender")]
    with pop_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent_id", "age", "gender", "home_cell",
                         "workplace_id", "school_id", *extra])
        cells = pop.tessellation.ids["cell" if "cell" in pop.tessellation.levels
                                     else pop.tessellation.levels[0]]
        for i in range(pop.n):
            w = int(pop.context_of["workplace"][i])
            s = int(pop.context_of["school"][i])
            writer.writerow([
                f"a{i}", int(pop.columns["age"][i]), pop.columns["gender"][i],
                cells[int(pop.home_cell[i])],
                pop.context_ids["workplace"][w] if w >= 0 else "",
                pop.context_ids["school"][s] if s >= 0 else "",
                *[pop.columns[c][i] for c in extra],
            ])
    paths["population"] = pop_path

    tess_path = directory / "tessellation.csv"
    tess = pop.tessellation
    with tess_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "parent_id", "level"])
        for k, level in enumerate(tess.levels):
            for i, rid in enumerate(tess.ids[level]):
                if k + 1 < len(tess.levels):
                    parent = tess.ids[tess.levels[k + 1]][
                        int(tess.parents[level][i])]
                else:
                    parent = ""
                writer.writerow([rid, parent, level])
    paths["tessellation"] = tess_path

    for level, mat in pop.od.matrices.items():
        od_path = directory / f"od_{level}.csv"
        ids = pop.tessellation.ids[level]
        with od_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["origin_id", "destination_id", "probability"])
            for i in range(mat.shape[0]):
                for j in np.flatnonzero(mat[i] > 0):
                    writer.writerow([ids[i], ids[int(j)],
                                     repr(float(mat[i, int(j)]))])
        paths[f"od_{level}"] = od_path
    return paths
