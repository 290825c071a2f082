"""Trend series: the simulator's sole quantitative output, plus aggregation.

One row per iteration (the first row is the initial state), one column
per active compartment in canonical order. Agent runs carry integer
counts, mean-field runs carry real fractions. Every emitted file embeds
the scenario hash and seed(s) so an artifact is self-describing, and
both the CSV and JSON forms parse back to equal values.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from episim.compartments import ConfigurationError


@dataclass
class TrendSeries:
    """Per-iteration compartment counts (agent) or fractions (mean-field)."""

    compartments: tuple[str, ...]
    rows: np.ndarray                 # shape (iterations + 1, k)
    scenario_hash: str = ""
    seed: int | None = None
    mode: str = "agent"              # "agent" | "meanfield"
    fidelity: str | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.compartments):
            raise ConfigurationError("rows do not match compartment labels")

    @property
    def iterations(self) -> int:
        return self.rows.shape[0] - 1

    def series(self, label: str) -> np.ndarray:
        try:
            return self.rows[:, self.compartments.index(label)]
        except ValueError:
            raise KeyError(label) from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrendSeries):
            return NotImplemented
        return (self.compartments == other.compartments
                and self.scenario_hash == other.scenario_hash
                and self.seed == other.seed
                and self.mode == other.mode
                and self.fidelity == other.fidelity
                and self.rows.shape == other.rows.shape
                and bool(np.all(self.rows == other.rows)))


@dataclass
class RunBundle:
    """A multi-seed sweep of one scenario with per-iteration mean and std."""

    compartments: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    seeds: tuple[int, ...]
    scenario_hash: str = ""
    mode: str = "agent"

    def series(self, label: str, which: str = "mean") -> np.ndarray:
        data = self.mean if which == "mean" else self.std
        return data[:, self.compartments.index(label)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunBundle):
            return NotImplemented
        return (self.compartments == other.compartments
                and self.seeds == other.seeds
                and self.scenario_hash == other.scenario_hash
                and self.mode == other.mode
                and bool(np.all(self.mean == other.mean))
                and bool(np.all(self.std == other.std)))


def aggregate_runs(series: list[TrendSeries]) -> RunBundle:
    """Element-wise mean and population standard deviation across seeds.

    All members must come from the same scenario: matching hash, labels,
    length and mode; anything else is reported with the offending hashes.
    """
    if not series:
        raise ConfigurationError("nothing to aggregate")
    head = series[0]
    mismatched = [s.scenario_hash for s in series
                  if s.scenario_hash != head.scenario_hash]
    if mismatched:
        raise ConfigurationError(
            "cannot aggregate runs of different scenarios: "
            f"{head.scenario_hash!r} vs {sorted(set(mismatched))}")
    for s in series[1:]:
        if s.compartments != head.compartments or s.rows.shape != head.rows.shape:
            raise ConfigurationError("trend series have mismatched shapes")
        if s.mode != head.mode:
            raise ConfigurationError("trend series have mismatched modes")
    stack = np.stack([s.rows.astype(np.float64) for s in series])
    return RunBundle(
        compartments=head.compartments,
        mean=stack.mean(axis=0),
        std=stack.std(axis=0),
        seeds=tuple(s.seed if s.seed is not None else -1 for s in series),
        scenario_hash=head.scenario_hash,
        mode=head.mode,
    )


# ---------------------------------------------------------------------------
# Emission / parsing
# ---------------------------------------------------------------------------

def _fmt(value, as_int: bool) -> str:
    return str(int(value)) if as_int else repr(float(value))


def emit_trends(obj: TrendSeries | RunBundle, out, fmt: str = "csv") -> None:
    """Write a series or bundle to ``out`` (path or text stream).

    CSV columns are ``iteration`` then one column per compartment in the
    canonical order (bundles emit ``<comp>_mean`` and ``<comp>_std``
    pairs); metadata rides in ``#`` header lines. JSON mirrors the same
    schema. Both round-trip losslessly through :func:`parse_trends`.
    """
    if fmt not in ("csv", "json"):
        raise ConfigurationError(f"unknown format {fmt!r}")
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            _emit(obj, fh, fmt)
    else:
        _emit(obj, out, fmt)


def _emit(obj, fh, fmt: str) -> None:
    if isinstance(obj, TrendSeries):
        as_int = obj.mode == "agent"
        if fmt == "json":
            json.dump({
                "kind": "trend_series",
                "scenario_hash": obj.scenario_hash,
                "seed": obj.seed,
                "mode": obj.mode,
                "fidelity": obj.fidelity,
                "compartments": list(obj.compartments),
                "rows": [[int(v) if as_int else float(v) for v in row]
                         for row in obj.rows],
            }, fh)
            fh.write("\n")
            return
        fh.write(f"# kind=trend_series\n")
        fh.write(f"# scenario_hash={obj.scenario_hash}\n")
        fh.write(f"# seed={'' if obj.seed is None else obj.seed}\n")
        fh.write(f"# mode={obj.mode}\n")
        fh.write(f"# fidelity={obj.fidelity or ''}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", *obj.compartments])
        for i, row in enumerate(obj.rows):
            writer.writerow([i, *(_fmt(v, as_int) for v in row)])
        return

    if isinstance(obj, RunBundle):
        if fmt == "json":
            json.dump({
                "kind": "run_bundle",
                "scenario_hash": obj.scenario_hash,
                "seeds": list(obj.seeds),
                "mode": obj.mode,
                "compartments": list(obj.compartments),
                "mean": [[float(v) for v in row] for row in obj.mean],
                "std": [[float(v) for v in row] for row in obj.std],
            }, fh)
            fh.write("\n")
            return
        fh.write(f"# kind=run_bundle\n")
        fh.write(f"# scenario_hash={obj.scenario_hash}\n")
        fh.write(f"# seeds={','.join(str(s) for s in obj.seeds)}\n")
        fh.write(f"# mode={obj.mode}\n")
        writer = csv.writer(fh)
        header = ["iteration"]
        for comp in obj.compartments:
            header += [f"{comp}_mean", f"{comp}_std"]
        writer.writerow(header)
        for i in range(obj.mean.shape[0]):
            row: list[str] = [str(i)]
            for k in range(len(obj.compartments)):
                row += [repr(float(obj.mean[i, k])), repr(float(obj.std[i, k]))]
            writer.writerow(row)
        return

    raise ConfigurationError(f"cannot emit object of type {type(obj).__name__}")


def parse_trends(source) -> TrendSeries | RunBundle:
    """Inverse of :func:`emit_trends`; accepts a path or a text stream."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return _parse_json(json.loads(stripped))
    return _parse_csv(text)


def _parse_json(doc: dict) -> TrendSeries | RunBundle:
    kind = doc.get("kind")
    if kind == "trend_series":
        mode = doc["mode"]
        dtype = np.int64 if mode == "agent" else np.float64
        return TrendSeries(
            compartments=tuple(doc["compartments"]),
            rows=np.array(doc["rows"], dtype=dtype),
            scenario_hash=doc["scenario_hash"],
            seed=doc["seed"],
            mode=mode,
            fidelity=doc.get("fidelity"),
        )
    if kind == "run_bundle":
        return RunBundle(
            compartments=tuple(doc["compartments"]),
            mean=np.array(doc["mean"], dtype=np.float64),
            std=np.array(doc["std"], dtype=np.float64),
            seeds=tuple(doc["seeds"]),
            scenario_hash=doc["scenario_hash"],
            mode=doc["mode"],
        )
    raise ConfigurationError(f"unrecognized trend document kind {kind!r}")


def _parse_csv(text: str) -> TrendSeries | RunBundle:
    meta: dict[str, str] = {}
    body_lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value
        elif line.strip():
            body_lines.append(line)
    if not body_lines:
        raise ConfigurationError("empty trend file")
    reader = csv.reader(io.StringIO("\n".join(body_lines)))
    header = next(reader)
    rows = list(reader)
    kind = meta.get("kind", "trend_series")

    if kind == "run_bundle":
        comps = tuple(name[:-5] for name in header[1::2])
        mean = np.array([[float(v) for v in row[1::2]] for row in rows])
        std = np.array([[float(v) for v in row[2::2]] for row in rows])
        seeds = tuple(int(s) for s in meta.get("seeds", "").split(",") if s)
        return RunBundle(compartments=comps, mean=mean, std=std, seeds=seeds,
                         scenario_hash=meta.get("scenario_hash", ""),
                         mode=meta.get("mode", "agent"))

    mode = meta.get("mode", "agent")
    dtype = np.int64 if mode == "agent" else np.float64
    comps = tuple(header[1:])
    data = np.array([[dtype(v) if dtype is np.int64 else float(v)
                      for v in row[1:]] for row in rows], dtype=dtype)
    seed_text = meta.get("seed", "")
    return TrendSeries(
        compartments=comps, rows=data,
        scenario_hash=meta.get("scenario_hash", ""),
        seed=int(seed_text) if seed_text else None,
        mode=mode, fidelity=meta.get("fidelity") or None)
