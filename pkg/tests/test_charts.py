import csv
import math
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from refaudit import charts
from refaudit.consensus_analysis import ConsensusMatrix, consensus
from refaudit.fairness_stats import SalientFeature


def parse(svg):
    return ET.fromstring(svg)


def elements(root, cls):
    return [e for e in root.iter() if e.get("class") == cls]


def feat(term, cls, beta, p, passes):
    return SalientFeature(term, cls, beta, p, passes)


def test_volcano_single_point_sits_in_the_pass_region():
    spec = charts.volcano_spec([feat("dear", "male", -7.91, 1e-12, True)], 0.05, 120)
    root = parse(charts.render(spec))
    (pt,) = elements(root, "point")
    assert pt.get("data-beta") == "-7.91" and pt.get("data-passes") == "1"
    guides = elements(root, "guide")
    left = next(g for g in guides if g.get("data-axis") == "x" and float(g.get("data-value")) < 0)
    horiz = next(g for g in guides if g.get("data-axis") == "y")
    assert float(pt.get("cx")) < float(left.get("x1"))
    # svg y grows downward: above the line means a smaller y
    assert float(pt.get("cy")) < float(horiz.get("y1"))
    assert float(horiz.get("data-value")) == pytest.approx(-math.log10(0.05 / 120))
    assert float(left.get("data-value")) == pytest.approx(-math.log(2))


def test_volcano_labels_passers_and_near_misses():
    feats = [feat("hit", "male", 2.0, 1e-9, True)] + [feat(f"n{i}", "male", 0.1 * i, 0.5, False) for i in range(8)]
    root = parse(charts.render(charts.volcano_spec(feats, 0.05, 9)))
    labels = {e.get("data-term") for e in elements(root, "point-label")}
    assert labels == {"hit", "n7", "n6", "n5", "n4", "n3"}


def test_heatmap_single_cell_is_darkest():
    cm = ConsensusMatrix(["dear"], ["a"], np.array([[0.74]]), np.array([[1.0]]), None)
    root = parse(charts.render(charts.heatmap_spec(cm)))
    (cell,) = elements(root, "cell")
    assert cell.get("data-value") == "1.0"
    assert cell.get("fill") == charts._shade(1.0) == "#08306b"
    assert charts._shade(0.0) == "#f7fbff"


def test_heatmap_shade_is_monotone():
    darkness = [sum(int(charts._shade(v)[k:k + 2], 16) for k in (1, 3, 5)) for v in np.linspace(0, 1, 21)]
    assert all(a >= b for a, b in zip(darkness, darkness[1:]))


def polygon_points(el):
    return [tuple(map(float, p.split(","))) for p in el.get("points").split()]


def test_radar_all_zero_collapses_onto_zero_ring():
    spec = charts.radar_spec("dear", ["A", "B", "C", "D", "E"], {"m1": [0.0] * 5, "m2": [0.0] * 5})
    root = parse(charts.render(spec))
    (zero,) = elements(root, "zero-ring")
    ring = polygon_points(zero)
    for series in elements(root, "series"):
        assert np.allclose(polygon_points(series), ring, atol=0.01)
    for spoke in elements(root, "spoke"):
        assert spoke.get("data-value") == "0.0"


def test_radar_missing_value_is_na():
    spec = charts.radar_spec("dear", ["A", "B", "C"], {"m": [None, 5.0, -2.0]})
    root = parse(charts.render(spec))
    spokes = elements(root, "spoke")
    assert [s.get("data-value") for s in spokes] == ["NA", "5.0", "-2.0"]
    assert spokes[0].get("r") == "0"
    (series,) = elements(root, "series")
    assert len(polygon_points(series)) == 2


@pytest.mark.parametrize("spec", [
    charts.volcano_spec([], 0.05, 1),
    charts.heatmap_spec(ConsensusMatrix([], [], np.zeros((0, 0)), np.zeros((0, 0)))),
    charts.radar_spec("x", [], {}),
    charts.margin_bars_spec([]),
])
def test_empty_input_gives_placeholder(spec):
    root = parse(charts.render(spec))
    (msg,) = elements(root, "no-data")
    assert msg.text == "no data"


def test_margin_bars_mark_significance():
    rows = [{"model": "a", "dimension": "sex", "classifier": "logreg", "margin": 5.9, "significant": True},
            {"model": "a", "dimension": "sex", "classifier": "gbt", "margin": -0.4, "significant": False}]
    root = parse(charts.render(charts.margin_bars_spec(rows)))
    marks = elements(root, "sig-marker")
    assert [(m.get("data-classifier"), m.text) for m in marks] == [("logreg", "*")]
    bars = elements(root, "bar")
    assert [b.get("data-significant") for b in bars] == ["1", "0"]


def sample_specs():
    sal = {
        "m1": [feat("dear", "male", -1.2, 1e-8, True), feat("thanks", "male", 0.9, 1e-6, True),
               feat("hello", "male", 0.8, 1e-7, True)],
        "m2": [feat("dear", "male", -0.8, 1e-9, True), feat("thanks", "male", 1.5, 1e-6, True),
               feat("hello", "male", 0.2, 0.3, False)],
        "m3": [feat("hello", "male", 1.1, 1e-9, True), feat("dear", "male", 0.3, 0.1, False)],
    }
    cm = consensus(sal)
    return [
        charts.volcano_spec(sal["m1"] + sal["m2"], 0.05, 6),
        charts.heatmap_spec(cm),
        charts.radar_spec("dear", ["G", "F", "S"], {"x": [53.6, None, -28.7], "y": [1.0, 2.0, 3.0]}),
        charts.margin_bars_spec([{"model": "a", "dimension": "sex", "classifier": "mlp", "margin": 1.25,
                                  "significant": False}]),
    ]


NUMERIC = {"data-beta", "data-p", "data-neglogp", "data-value", "data-raw", "data-margin", "data-height",
           "data-step", "data-left", "data-right"}


@pytest.mark.parametrize("spec", sample_specs(), ids=lambda s: s.kind)
def test_every_numeric_attribute_is_in_the_csv(tmp_path, spec):
    path = tmp_path / f"{spec.kind}.svg"
    charts.write_chart(spec, path)
    root = parse(path.read_text(encoding="utf-8"))
    with path.with_suffix(".csv").open(encoding="utf-8") as fh:
        table = {v for row in csv.reader(fh) for v in row}
    seen = 0
    for el in root.iter():
        for k, v in el.attrib.items():
            if k in NUMERIC:
                seen += 1
                assert v in table, (k, v)
    assert seen > 0


@pytest.mark.parametrize("spec", sample_specs(), ids=lambda s: s.kind)
def test_rendering_is_deterministic(spec):
    a = charts.render(spec)
    assert a == charts.render(spec)
    assert re.search(r'viewBox="0 0 \d+ \d+"', a)


def test_attribute_values_keep_full_precision():
    assert charts.num(0.1234567890123) == "0.123456789012"
    assert charts.num(float("nan")) == "NA" and charts.num(None) == "NA"
    assert charts.num(True) == "1" and charts.num(3) == "3"
