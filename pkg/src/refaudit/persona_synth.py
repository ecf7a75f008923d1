"""Synthetic patron identities drawn from first-name and surname tables.

First names carry the sex signal and are sampled by empirical frequency;
surnames carry the race/ethnicity signal and are sampled by rejection
against the surname's race distribution.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError, SchemaError

SEXES = ("female", "male")
RACES = ("White", "Black", "Asian/PI", "AIAN", "TwoOrMore", "Hispanic")
PATRON_TYPES = ("Alumni", "Faculty", "Graduate", "Undergraduate", "Staff", "Outside")
GRID = tuple((s, r) for s in SEXES for r in RACES)

MIN_NAME_COUNT = 6
MAX_REJECTION_ROUNDS = 10_000
# patron-type draws at n >= PATRON_GUARD_N are redrawn past this max/min ratio
MAX_PATRON_IMBALANCE = 1.2
PATRON_GUARD_N = 1000
_SEX_CODES = {"F": "female", "M": "male"}

# accepted header spellings for the six percentage columns, in RACES order
_CENSUS_COLUMNS = (
    ("pctwhite", "white"),
    ("pctblack", "black"),
    ("pctapi", "api"),
    ("pctaian", "aian"),
    ("pct2prace", "2prace"),
    ("pcthispanic", "hispanic"),
)
_SUPPRESSED = "(S)"


@dataclass(frozen=True)
class FirstNameTable:
    entries: tuple[tuple[str, str, int], ...]

    def __post_init__(self):
        by_sex: dict[str, list[tuple[str, int]]] = {s: [] for s in SEXES}
        for name, sex, count in self.entries:
            if count < MIN_NAME_COUNT:
                raise ConfigurationError(f"name {name!r} has count {count} < {MIN_NAME_COUNT}")
            by_sex[sex].append((name, count))
        cache = {}
        for sex, items in by_sex.items():
            if items:
                counts = np.array([c for _, c in items], dtype=float)
                cache[sex] = ([n for n, _ in items], np.cumsum(counts) / counts.sum())
        object.__setattr__(self, "_cdf", cache)

    def names_for(self, sex: str) -> list[str]:
        return list(self._cdf[sex][0]) if sex in self._cdf else []

    def draw(self, sex: str, rng: np.random.Generator) -> str:
        if sex not in self._cdf:
            raise ConfigurationError(f"no first names recorded for sex {sex!r}")
        names, cdf = self._cdf[sex]
        idx = int(np.searchsorted(cdf, rng.random(), side="right"))
        return names[min(idx, len(names) - 1)]


@dataclass(frozen=True)
class SurnameTable:
    entries: tuple[tuple[str, tuple[float, ...]], ...]

    def __post_init__(self):
        for surname, dist in self.entries:
            if len(dist) != len(RACES) or min(dist) < 0 or abs(sum(dist) - 1.0) > 1e-9:
                raise ConfigurationError(f"invalid race distribution for {surname!r}: {dist}")

    def eligible(self, race: str) -> list[tuple[str, tuple[float, ...]]]:
        j = RACES.index(race)
        return [(s, d) for s, d in self.entries if d[j] > 0]


@dataclass(frozen=True)
class SyntheticPatron:
    first_name: str
    surname: str
    sex: str
    race: str
    patron_type: str

    def __post_init__(self):
        if (self.sex, self.race) not in GRID:
            raise ValueError(f"({self.sex}, {self.race}) is not a demographic cell")
        if self.patron_type not in PATRON_TYPES:
            raise ValueError(f"unknown patron type {self.patron_type!r}")

    @property
    def full_name(self) -> str:
        return f"{self.first_name} {self.surname}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticPatron":
        return cls(**{k: d[k] for k in ("first_name", "surname", "sex", "race", "patron_type")})


def ingest_ssa(files: Iterable[str | Path]) -> FirstNameTable:
    """Aggregate yearly ``name,sex,count`` files into a first-name table.

    Counts are summed per (name, sex) over all files. Entries whose total
    stays below six are dropped.
    """
    totals: dict[tuple[str, str], int] = defaultdict(int)
    for path in files:
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3 or parts[1] not in _SEX_CODES or not parts[0]:
                    raise IngestionError(f"{path}:{lineno}: malformed line {line!r}")
                try:
                    count = int(parts[2])
                except ValueError:
                    raise IngestionError(f"{path}:{lineno}: bad count {parts[2]!r}") from None
                if count < 0:
                    raise IngestionError(f"{path}:{lineno}: negative count")
                totals[(parts[0], _SEX_CODES[parts[1]])] += count
    entries = sorted((n, s, c) for (n, s), c in totals.items() if c >= MIN_NAME_COUNT)
    if not entries:
        raise ConfigurationError("no first names survive the minimum-count filter")
    return FirstNameTable(tuple(entries))


def ingest_ssa_dir(directory: str | Path) -> FirstNameTable:
    files = sorted(Path(directory).glob("yob*.txt"))
    if not files:
        raise ConfigurationError(f"no yobYYYY.txt files under {directory}")
    return ingest_ssa(files)


def _resolve_row(values: list[str], where: str) -> tuple[float, ...]:
    known = {}
    suppressed = []
    for j, raw in enumerate(values):
        raw = raw.strip()
        if raw == _SUPPRESSED:
            suppressed.append(j)
        else:
            try:
                known[j] = float(raw) if raw else 0.0
            except ValueError:
                raise IngestionError(f"{where}: bad percentage {raw!r}") from None
            if known[j] < 0:
                raise IngestionError(f"{where}: negative percentage")
    total = sum(known.values())
    if total > 100.0 + 0.5:
        raise IngestionError(f"{where}: percentages sum to {total:.2f} > 100")
    pct = [0.0] * len(RACES)
    for j, v in known.items():
        pct[j] = v
    if suppressed:
        share = max(100.0 - total, 0.0) / len(suppressed)
        for j in suppressed:
            pct[j] = share
    s = sum(pct)
    if s <= 0:
        raise IngestionError(f"{where}: all percentages are zero")
    return tuple(p / s for p in pct)


def ingest_census(file: str | Path) -> SurnameTable:
    """Read a Census surname CSV into normalized race distributions.

    Suppressed ``(S)`` cells share the residual mass (100 minus the known
    percentages) equally; the vector is then renormalized.
    """
    path = Path(file)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = {h.strip().lower(): h for h in (reader.fieldnames or [])}
        name_col = header.get("name") or header.get("surname")
        if name_col is None:
            raise SchemaError(f"{path}: missing surname column")
        cols = []
        for options in _CENSUS_COLUMNS:
            col = next((header[o] for o in options if o in header), None)
            if col is None:
                raise SchemaError(f"{path}: missing column {options[0]}")
            cols.append(col)
        entries = []
        for lineno, row in enumerate(reader, start=2):
            surname = (row[name_col] or "").strip()
            if not surname:
                raise IngestionError(f"{path}:{lineno}: empty surname")
            dist = _resolve_row([row[c] or "" for c in cols], f"{path}:{lineno}")
            entries.append((surname.title(), dist))
    if not entries:
        raise ConfigurationError(f"{path}: no surnames")
    return SurnameTable(tuple(entries))


def _draw_surname(surnames: SurnameTable, race: str, rng: np.random.Generator) -> str:
    pool = surnames.eligible(race)
    if not pool:
        raise ConfigurationError(f"no surname has nonzero probability for {race!r}")
    j = RACES.index(race)
    for _ in range(MAX_REJECTION_ROUNDS):
        surname, dist = pool[int(rng.integers(len(pool)))]
        # categorical draw of the race label from the surname's distribution
        label = int(np.searchsorted(np.cumsum(dist), rng.random(), side="right"))
        if label == j:
            return surname
    raise ConfigurationError(f"rejection sampling for {race!r} exceeded {MAX_REJECTION_ROUNDS} rounds")


def _sample_with(first_names, surnames, target, rng, patron_type):
    sex, race = target
    if (sex, race) not in GRID:
        raise ConfigurationError(f"target {target!r} is not a demographic cell")
    first = first_names.draw(sex, rng)
    surname = _draw_surname(surnames, race, rng)
    return SyntheticPatron(first, surname, sex, race, patron_type)


def sample_patron(
    first_names: FirstNameTable,
    surnames: SurnameTable,
    target: tuple[str, str],
    rng_seed: int,
    patron_type: str | None = None,
) -> SyntheticPatron:
    """Draw one patron for a (sex, race) cell.

    The patron type is drawn uniformly unless given.
    """
    rng = np.random.default_rng(rng_seed)
    if patron_type is None:
        patron_type = PATRON_TYPES[int(rng.integers(len(PATRON_TYPES)))]
    return _sample_with(first_names, surnames, target, rng, patron_type)


def cell_sizes(n: int, rng: np.random.Generator) -> list[int]:
    base, rem = divmod(n, len(GRID))
    sizes = [base] * len(GRID)
    order = rng.permutation(len(GRID))
    for i in order[:rem]:
        sizes[int(i)] += 1
    return sizes


def _patron_draw_ok(types: np.ndarray, n: int) -> bool:
    counts = np.bincount(types, minlength=len(PATRON_TYPES))
    # a missing class at n >= 200 has probability < 1e-12; redraw keeps it impossible
    if n >= 200 and counts.min() == 0:
        return False
    if n >= PATRON_GUARD_N and counts.max() > MAX_PATRON_IMBALANCE * counts.min():
        return False
    return True


def _draw_patron_types(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform per-patron draws, conditioned on passing the balance guards."""
    types = rng.integers(len(PATRON_TYPES), size=n)
    while not _patron_draw_ok(types, n):
        types = rng.integers(len(PATRON_TYPES), size=n)
    return types


def build_cohort(
    n: int,
    rng_seed: int,
    first_names: FirstNameTable | None = None,
    surnames: SurnameTable | None = None,
) -> list[SyntheticPatron]:
    """Sample ``n`` patrons spread evenly over the 12 (sex, race) cells.

    Cells get floor(n/12) patrons each; the remainder goes round-robin over
    a seeded shuffle of the cells. Patron types are independent uniform
    draws, so their counts are only approximately balanced; from
    ``PATRON_GUARD_N`` patrons up, a draw whose max/min count ratio exceeds
    ``MAX_PATRON_IMBALANCE`` is redrawn.
    """
    if n < len(GRID):
        raise ConfigurationError(f"cohort size {n} < {len(GRID)}")
    if first_names is None or surnames is None:
        default_fn, default_sn = default_tables()
        first_names = first_names or default_fn
        surnames = surnames or default_sn
    rng = np.random.default_rng(rng_seed)
    sizes = cell_sizes(n, rng)
    types = _draw_patron_types(n, rng)
    cohort = []
    i = 0
    for cell, size in zip(GRID, sizes):
        for _ in range(size):
            cohort.append(_sample_with(first_names, surnames, cell, rng, PATRON_TYPES[int(types[i])]))
            i += 1
    return cohort


_DEFAULTS: dict[str, object] = {}


def default_tables() -> tuple[FirstNameTable, SurnameTable]:
    """The bundled sample tables (small illustrative extracts, not full datasets)."""
    if not _DEFAULTS:
        root = resources.files("refaudit") / "data"
        with resources.as_file(root / "ssa_sample") as d:
            _DEFAULTS["first"] = ingest_ssa_dir(d)
        with resources.as_file(root / "census_surnames_sample.csv") as f:
            _DEFAULTS["sur"] = ingest_census(f)
    return _DEFAULTS["first"], _DEFAULTS["sur"]


def write_cohort(cohort: Sequence[SyntheticPatron], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in cohort:
            fh.write(json.dumps(p.to_dict(), sort_keys=False) + "\n")


def read_cohort(path: str | Path) -> list[SyntheticPatron]:
    with Path(path).open(encoding="utf-8") as fh:
        return [SyntheticPatron.from_dict(json.loads(line)) for line in fh if line.strip()]
