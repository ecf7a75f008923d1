import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from refaudit.corpus_store import balance_from_counts
from refaudit.errors import ConfigurationError, IngestionError, SchemaError
from refaudit.persona_synth import (
    GRID, MAX_PATRON_IMBALANCE, PATRON_TYPES, RACES, FirstNameTable, SurnameTable, SyntheticPatron,
    _draw_patron_types, build_cohort, cell_sizes, default_tables, ingest_census, ingest_ssa, ingest_ssa_dir,
    read_cohort, sample_patron, write_cohort,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_ssa_counts_add_across_files(tmp_path):
    a = write(tmp_path / "yob2000.txt", "Mary,F,100\n")
    b = write(tmp_path / "yob2001.txt", "Mary,F,50\n")
    table = ingest_ssa([a, b])
    assert table.entries == (("Mary", "female", 150),)


def test_ssa_drops_rare_names(tmp_path):
    f = write(tmp_path / "yob2000.txt", "Zxq,M,5\nJohn,M,6\n")
    table = ingest_ssa([f])
    assert table.names_for("male") == ["John"]


def test_ssa_keeps_each_sex_separately(tmp_path):
    f = write(tmp_path / "yob2000.txt", "Alex,M,300\nAlex,F,200\n")
    table = ingest_ssa([f])
    assert sorted(table.entries) == [("Alex", "female", 200), ("Alex", "male", 300)]


def test_ssa_rejects_malformed_lines(tmp_path):
    f = write(tmp_path / "yob2000.txt", "Alex,X,300\n")
    with pytest.raises(IngestionError):
        ingest_ssa([f])
    g = write(tmp_path / "yob2001.txt", "Alex,M,lots\n")
    with pytest.raises(IngestionError):
        ingest_ssa([g])


def test_ssa_dir_needs_files(tmp_path):
    with pytest.raises(ConfigurationError):
        ingest_ssa_dir(tmp_path)


def test_name_table_rejects_low_counts():
    with pytest.raises(ConfigurationError):
        FirstNameTable((("Zed", "male", 3),))


CENSUS_HEAD = "name,pctwhite,pctblack,pctapi,pctaian,pct2prace,pcthispanic\n"


def test_census_suppressed_cells_share_the_residual(tmp_path):
    f = write(tmp_path / "s.csv", CENSUS_HEAD + "WANG,2.6,0.3,95.2,(S),(S),(S)\n")
    (name, dist), = ingest_census(f).entries
    assert name == "Wang"
    assert dist[RACES.index("Asian/PI")] == pytest.approx(0.952, abs=1e-12)
    assert dist[RACES.index("White")] == pytest.approx(0.026, abs=1e-12)
    assert dist[RACES.index("Black")] == pytest.approx(0.003, abs=1e-12)
    # 100 - 98.1 = 1.9 spread over three suppressed cells
    for race in ("AIAN", "TwoOrMore", "Hispanic"):
        assert dist[RACES.index(race)] == pytest.approx(1.9 / 3 / 100, abs=1e-12)


def test_census_degenerate_row(tmp_path):
    f = write(tmp_path / "s.csv", CENSUS_HEAD + "SMITH,100,0,0,0,0,0\n")
    assert ingest_census(f).entries[0][1] == (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_census_two_suppressed_cells_hand_arithmetic(tmp_path):
    # known cells sum to 99.0, so each (S) cell gets 0.5 before normalization
    f = write(tmp_path / "s.csv", CENSUS_HEAD + "DOE,60,30,5,4,(S),(S)\n")
    dist = ingest_census(f).entries[0][1]
    assert dist == pytest.approx((0.60, 0.30, 0.05, 0.04, 0.005, 0.005), abs=1e-12)
    assert sum(dist) == pytest.approx(1.0, abs=1e-9)


def test_census_schema_errors(tmp_path):
    f = write(tmp_path / "s.csv", "name,pctwhite\nX,100\n")
    with pytest.raises(SchemaError):
        ingest_census(f)
    g = write(tmp_path / "t.csv", CENSUS_HEAD + "X,abc,0,0,0,0,0\n")
    with pytest.raises(IngestionError):
        ingest_census(g)


def test_bundled_tables_cover_every_cell():
    first, sur = default_tables()
    for sex in ("female", "male"):
        assert first.names_for(sex)
    for race in RACES:
        assert sur.eligible(race)
    for _, dist in sur.entries:
        assert min(dist) >= 0 and abs(sum(dist) - 1) < 1e-9


def test_forced_outcome(tiny_tables):
    first, sur = tiny_tables
    p = sample_patron(first, sur, ("female", "Hispanic"), rng_seed=3)
    assert (p.first_name, p.surname, p.sex, p.race) == ("Ana", "Garcia", "female", "Hispanic")


def test_rejection_rate_matches_surname_probability():
    first = FirstNameTable((("Ben", "male", 10),))
    sur = SurnameTable((("Wang", (0.026, 0.003, 0.952, 0.0063, 0.0063, 0.0064)),))
    rng = np.random.default_rng(0)
    j = RACES.index("Asian/PI")
    hits = sum(int(np.searchsorted(np.cumsum(sur.entries[0][1]), rng.random(), side="right")) == j
               for _ in range(10_000))
    assert abs(hits / 10_000 - 0.952) < 0.01
    p = sample_patron(first, sur, ("male", "Asian/PI"), rng_seed=1)
    assert p.surname == "Wang"


def test_frequency_weighting():
    first = FirstNameTable((("A", "female", 900), ("B", "female", 100)))
    rng = np.random.default_rng(42)
    draws = Counter(first.draw("female", rng) for _ in range(10_000))
    assert 0.88 <= draws["A"] / 10_000 <= 0.92


def test_first_name_frequencies_pass_goodness_of_fit():
    first, _ = default_tables()
    names = first.names_for("female")
    counts = np.array([c for n, s, c in first.entries if s == "female"], dtype=float)
    rng = np.random.default_rng(7)
    n = 100_000
    obs = Counter(first.draw("female", rng) for _ in range(n))
    expected = counts / counts.sum() * n
    keep = expected >= 5
    observed = np.array([obs[m] for m in names], dtype=float)
    # pool the sparse tail into one bin
    f_obs = np.append(observed[keep], observed[~keep].sum())
    f_exp = np.append(expected[keep], expected[~keep].sum())
    if f_exp[-1] == 0:
        f_obs, f_exp = f_obs[:-1], f_exp[:-1]
    assert stats.chisquare(f_obs, f_exp).pvalue > 0.01


def test_unknown_target_is_an_error(tiny_tables):
    first, sur = tiny_tables
    with pytest.raises(ConfigurationError):
        sample_patron(first, sur, ("female", "Martian"), rng_seed=0)


def test_no_eligible_surname_is_an_error():
    first = FirstNameTable((("Ana", "female", 10),))
    sur = SurnameTable((("Garcia", (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)),))
    with pytest.raises(ConfigurationError):
        sample_patron(first, sur, ("female", "White"), rng_seed=0)


def test_patron_validates_fields():
    with pytest.raises(ValueError):
        SyntheticPatron("A", "B", "female", "White", "Dean")
    with pytest.raises(ValueError):
        SyntheticPatron("A", "B", "other", "White", "Staff")


def test_cohort_of_twelve_fills_each_cell_once():
    cohort = build_cohort(12, 0)
    assert sorted((p.sex, p.race) for p in cohort) == sorted(GRID)


def test_cohort_of_500_cell_sizes_and_sex_balance():
    for seed in range(20):
        cohort = build_cohort(500, seed)
        cells = Counter((p.sex, p.race) for p in cohort)
        assert set(cells.values()) <= {41, 42}
        sex = Counter(p.sex for p in cohort)
        assert balance_from_counts(dict(sex)).imbalance_ratio <= 1.03


def test_cohort_too_small():
    with pytest.raises(ConfigurationError):
        build_cohort(11, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(12, 5000), st.integers(0, 2**32 - 1))
def test_cell_sizes_sum_and_spread(n, seed):
    sizes = cell_sizes(n, np.random.default_rng(seed))
    assert sum(sizes) == n
    assert max(sizes) - min(sizes) <= 1


def test_cohort_is_deterministic_and_round_trips(tmp_path):
    a, b = build_cohort(240, 5), build_cohort(240, 5)
    assert a == b
    write_cohort(a, tmp_path / "a.jsonl")
    write_cohort(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert read_cohort(tmp_path / "a.jsonl") == a
    line = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
    assert list(line) == ["first_name", "surname", "sex", "race", "patron_type"]


def test_race_label_always_matches_target():
    cohort = build_cohort(600, 11)
    first, sur = default_tables()
    dists = dict(sur.entries)
    for p in cohort:
        assert dists[p.surname][RACES.index(p.race)] > 0


def test_all_patron_types_present_from_200():
    for seed in range(30):
        assert {p.patron_type for p in build_cohort(200, seed)} == set(PATRON_TYPES)


def test_patron_type_guard_bounds_large_cohorts():
    for seed in range(40):
        counts = Counter(p.patron_type for p in build_cohort(1000, seed))
        assert max(counts.values()) <= MAX_PATRON_IMBALANCE * min(counts.values())
    # below the guard size the draw is left alone
    rng = np.random.default_rng(0)
    small = [np.bincount(_draw_patron_types(120, rng), minlength=6) for _ in range(50)]
    assert any(c.max() > MAX_PATRON_IMBALANCE * max(c.min(), 1) for c in small)
