"""Static SVG charts with machine-readable data attributes.

Every plotted datum carries ``data-*`` attributes holding the exact value it
was drawn from, so tests and downstream tools can read a chart back without
inverting the geometry. Output is deterministic: fixed viewBox, fixed
element order, fixed number formatting.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

P_FLOOR = 1e-300
NEAR_MISS_LABELS = 5
PALETTE = ("#1b6ca8", "#d1495b", "#edae49", "#00798c", "#66a182", "#8d5a97", "#30343f", "#e07a5f")


@dataclass
class ChartSpec:
    kind: str
    data: dict
    thresholds: dict = field(default_factory=dict)
    title: str = ""
    labels: dict = field(default_factory=dict)


def num(x) -> str:
    """Attribute form of a datum: shortest repr, NA for missing."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(round(x, 12))


def _c(x: float) -> str:
    # coordinates only; two decimals keeps files small and stable
    return f"{x:.2f}"


def _attrs(**kw) -> str:
    out = []
    for k, v in kw.items():
        if v is None:
            continue
        out.append(f"{k.rstrip('_').replace('_', '-')}={quoteattr(str(v))}")
    return " ".join(out)


class _Svg:
    def __init__(self, width: int, height: int, kind: str, title: str):
        self.w, self.h = width, height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
            f'width="{width}" height="{height}" {_attrs(data_chart=kind)} font-family="sans-serif">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]
        if title:
            self.text(width / 2, 22, title, size=15, anchor="middle", cls="title")

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="start", cls=None, **data):
        self.add(f'<text x="{_c(x)}" y="{_c(y)}" font-size="{size}" text-anchor="{anchor}"'
                 f'{" " + _attrs(class_=cls) if cls else ""}{" " + _attrs(**data) if data else ""}>'
                 f"{escape(str(s))}</text>")

    def line(self, x1, y1, x2, y2, stroke="#444444", width=1.0, dash=None, cls=None, **data):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_c(x1)}" y1="{_c(y1)}" x2="{_c(x2)}" y2="{_c(y2)}" stroke="{stroke}" '
                 f'stroke-width="{width}"{extra}{" " + _attrs(class_=cls) if cls else ""}'
                 f'{" " + _attrs(**data) if data else ""}/>')

    def done(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _no_data(svg: _Svg) -> str:
    svg.text(svg.w / 2, svg.h / 2, "no data", size=14, anchor="middle", cls="no-data")
    return svg.done()


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def _tick_label(v: float) -> str:
    return f"{v:g}"


def neg_log10(p: float) -> float:
    return -math.log10(max(float(p), P_FLOOR))


def render(spec: ChartSpec) -> str:
    fn = {"volcano": _volcano, "heatmap": _heatmap, "radar": _radar, "margin_bars": _margin_bars}.get(spec.kind)
    if fn is None:
        raise ValueError(f"unknown chart kind {spec.kind!r}")
    return fn(spec)


def volcano_spec(features, alpha: float, m: int, min_abs_beta: float = math.log(2.0), title: str = "") -> ChartSpec:
    """Chart spec from salient features; cells with NaN beta are skipped."""
    pts = [{"term": f.term, "class": f.class_label, "beta": f.beta, "p": f.p_value, "passes": f.passes}
           for f in features if not math.isnan(f.beta)]
    return ChartSpec("volcano", {"points": pts}, {"beta": min_abs_beta, "p": alpha / m}, title,
                     {"x": "coefficient (log-odds)", "y": "-log10(p)"})


def _point_order(pts) -> list[int]:
    return sorted(range(len(pts)), key=lambda i: (pts[i]["class"], pts[i]["term"]))


def _labelled(pts) -> set[int]:
    """Passers plus the largest-|beta| non-passers."""
    near = [i for i in sorted(range(len(pts)), key=lambda i: (-abs(pts[i]["beta"]), pts[i]["class"], pts[i]["term"]))
            if not pts[i]["passes"]][:NEAR_MISS_LABELS]
    return {i for i, p in enumerate(pts) if p["passes"]} | set(near)


def _volcano(spec: ChartSpec) -> str:
    W, H = 640, 480
    L, R, T, B = 60, 20, 40, 50
    svg = _Svg(W, H, "volcano", spec.title)
    pts = spec.data.get("points", [])
    if not pts:
        return _no_data(svg)
    bcut = spec.thresholds.get("beta", math.log(2.0))
    pcut = spec.thresholds.get("p", 0.05)
    ycut = neg_log10(pcut)
    xs = [p["beta"] for p in pts]
    ys = [neg_log10(p["p"]) for p in pts]
    xmax = max(max(abs(v) for v in xs), bcut) * 1.1
    ymax = max(max(ys), ycut) * 1.1

    def sx(v):
        return L + (v + xmax) / (2 * xmax) * (W - L - R)

    def sy(v):
        return H - B - v / ymax * (H - T - B)

    svg.line(L, H - B, W - R, H - B)
    svg.line(L, T, L, H - B)
    for t in _ticks(-xmax, xmax):
        svg.line(sx(t), H - B, sx(t), H - B + 4)
        svg.text(sx(t), H - B + 16, _tick_label(t), size=10, anchor="middle")
    for t in _ticks(0, ymax):
        svg.line(L - 4, sy(t), L, sy(t))
        svg.text(L - 6, sy(t) + 3, _tick_label(t), size=10, anchor="end")
    svg.text((L + W - R) / 2, H - 12, spec.labels.get("x", "beta"), anchor="middle")
    svg.text(16, (T + H - B) / 2, spec.labels.get("y", "-log10(p)"), anchor="middle")
    for v in (-bcut, bcut):
        svg.line(sx(v), T, sx(v), H - B, stroke="#888888", dash="5,4", cls="guide", data_axis="x", data_value=num(v))
    svg.line(L, sy(ycut), W - R, sy(ycut), stroke="#888888", dash="5,4", cls="guide", data_axis="y",
             data_value=num(ycut))

    classes = sorted({p["class"] for p in pts})
    color = {c: PALETTE[i % len(PALETTE)] for i, c in enumerate(classes)}
    order = _point_order(pts)
    labelled = _labelled(pts)
    for i in order:
        p = pts[i]
        fill = color[p["class"]] if p["passes"] else "#bbbbbb"
        svg.add(f'<circle cx="{_c(sx(p["beta"]))}" cy="{_c(sy(ys[i]))}" r="{4 if p["passes"] else 3}" '
                f'fill="{fill}" {_attrs(class_="point", data_term=p["term"], data_class=p["class"], data_beta=num(p["beta"]), data_p=num(p["p"]), data_neglogp=num(ys[i]), data_passes=num(bool(p["passes"])), data_label=num(i in labelled))}/>')
    for i in order:
        if i in labelled:
            p = pts[i]
            svg.text(sx(p["beta"]) + 5, sy(ys[i]) - 5, p["term"], size=10, cls="point-label", data_term=p["term"],
                     data_class=p["class"])
    for j, c in enumerate(classes):
        y = T + 4 + 14 * j
        svg.add(f'<rect x="{W - R - 110}" y="{_c(y)}" width="9" height="9" fill="{color[c]}"/>')
        svg.text(W - R - 96, y + 8, c, size=10, cls="legend")
    return svg.done()


def heatmap_spec(cm, title: str = "") -> ChartSpec:
    return ChartSpec("heatmap", {"matrix": cm}, title=title)


def _shade(v: float) -> str:
    v = min(max(float(v), 0.0), 1.0)
    lo, hi = np.array([247, 251, 255]), np.array([8, 48, 107])
    r, g, b = np.rint(lo + (hi - lo) * v).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _heatmap(spec: ChartSpec) -> str:
    cm = spec.data.get("matrix")
    n_rows = len(cm.features) if cm is not None else 0
    n_cols = len(cm.models) if cm is not None else 0
    cell = 28
    dendro_w = 120
    L, T = dendro_w + 20, 50
    label_w = 110
    W = max(360, L + n_cols * cell + label_w + 20)
    H = max(200, T + n_rows * cell + 90)
    svg = _Svg(W, H, "heatmap", spec.title)
    if not n_rows:
        return _no_data(svg)
    order = cm.dendrogram.leaf_order() if cm.dendrogram else list(range(n_rows))
    pos = {leaf: k for k, leaf in enumerate(order)}
    for k, i in enumerate(order):
        y = T + k * cell
        for j in range(n_cols):
            v = cm.values[i, j]
            svg.add(f'<rect x="{_c(L + j * cell)}" y="{_c(y)}" width="{cell}" height="{cell}" fill="{_shade(v)}" '
                    f'stroke="#ffffff" {_attrs(class_="cell", data_term=cm.features[i], data_model=cm.models[j], data_value=num(v), data_raw=num(cm.raw[i, j]))}/>')
        svg.text(L + n_cols * cell + 6, y + cell / 2 + 4, cm.features[i], size=11, cls="row-label")
    for j, mdl in enumerate(cm.models):
        x = L + j * cell + cell / 2
        y = T + n_rows * cell + 8
        svg.add(f'<text x="{_c(x)}" y="{_c(y)}" font-size="10" text-anchor="end" '
                f'transform="rotate(-45 {_c(x)} {_c(y)})" class="col-label">{escape(mdl)}</text>')

    d = cm.dendrogram
    if d is not None and d.merges:
        n = len(d.labels)
        hmax = max(m.height for m in d.merges) or 1.0

        def xh(h):
            return L - 6 - h / hmax * (dendro_w - 10)

        ypos = {i: T + pos[i] * cell + cell / 2 for i in range(n)}
        xpos = {i: L - 6 for i in range(n)}
        for s, m in enumerate(d.merges):
            cid = n + s
            x = xh(m.height)
            y1, y2 = ypos[m.left], ypos[m.right]
            data = dict(data_step=s, data_left=m.left, data_right=m.right, data_height=num(m.height))
            svg.line(xpos[m.left], y1, x, y1, cls="dendro", **data)
            svg.line(xpos[m.right], y2, x, y2, cls="dendro", **data)
            svg.line(x, y1, x, y2, cls="dendro", **data)
            ypos[cid] = (y1 + y2) / 2
            xpos[cid] = x
    return svg.done()


def radar_spec(feature: str, axes: Sequence[str], series: dict, title: str = "") -> ChartSpec:
    """``series`` maps a model id to one value per axis (None when missing)."""
    return ChartSpec("radar", {"feature": feature, "axes": list(axes), "series": dict(series)},
                     title=title or feature)


def _radar(spec: ChartSpec) -> str:
    W, H = 520, 520
    cx, cy, R, r0 = 250, 270, 190, 12
    svg = _Svg(W, H, "radar", spec.title)
    axes = spec.data.get("axes", [])
    series = spec.data.get("series", {})
    vals = [v for vs in series.values() for v in vs if v is not None]
    if not axes or not series:
        return _no_data(svg)
    lo = min([0.0] + vals)
    hi = max([0.0] + vals)
    if hi - lo <= 0:
        lo, hi = -1.0, 1.0
    def rad(v):
        return r0 + (v - lo) / (hi - lo) * (R - r0)

    k = len(axes)
    ang = [-math.pi / 2 + 2 * math.pi * i / k for i in range(k)]

    def pt(i, r):
        return cx + r * math.cos(ang[i]), cy + r * math.sin(ang[i])

    for t in _ticks(lo, hi, 4):
        ring = " ".join(f"{_c(x)},{_c(y)}" for x, y in (pt(i, rad(t)) for i in range(k)))
        if abs(t) < 1e-12:
            style = 'stroke="#222222" stroke-width="1.6" stroke-dasharray="4,3"'
            cls = "zero-ring"
        else:
            style = 'stroke="#dddddd" stroke-width="0.8"'
            cls = "ring"
        svg.add(f'<polygon points="{ring}" fill="none" {style} {_attrs(class_=cls)}/>')
        x, y = pt(0, rad(t))
        svg.text(x + 4, y, _tick_label(t), size=9, cls="ring-label")
    if not any(abs(t) < 1e-12 for t in _ticks(lo, hi, 4)):
        ring = " ".join(f"{_c(x)},{_c(y)}" for x, y in (pt(i, rad(0.0)) for i in range(k)))
        svg.add(f'<polygon points="{ring}" fill="none" stroke="#222222" stroke-width="1.6" stroke-dasharray="4,3" '
                f'{_attrs(class_="zero-ring")}/>')
    for i, a in enumerate(axes):
        x, y = pt(i, R)
        svg.line(cx, cy, x, y, stroke="#cccccc", cls="axis", data_axis=a)
        lx, ly = pt(i, R + 18)
        svg.text(lx, ly + 4, a, size=11, anchor="middle", cls="axis-label")

    for s, (name, vs) in enumerate(series.items()):
        color = PALETTE[s % len(PALETTE)]
        coords = [pt(i, rad(v)) for i, v in enumerate(vs) if v is not None]
        if coords:
            svg.add(f'<polygon points="{" ".join(f"{_c(x)},{_c(y)}" for x, y in coords)}" fill="{color}" '
                    f'fill-opacity="0.12" stroke="{color}" stroke-width="1.6" {_attrs(class_="series", data_series=name)}/>')
        for i, v in enumerate(vs):
            x, y = pt(i, rad(v if v is not None else 0.0))
            svg.add(f'<circle cx="{_c(x)}" cy="{_c(y)}" r="{3 if v is not None else 0}" fill="{color}" '
                    f'{_attrs(class_="spoke", data_series=name, data_axis=axes[i], data_value=num(v))}/>')
        ly = 48 + 14 * s
        svg.add(f'<rect x="{W - 130}" y="{ly}" width="9" height="9" fill="{color}"/>')
        svg.text(W - 116, ly + 8, name, size=10, cls="legend")
    return svg.done()


def margin_bars_spec(rows: Sequence[dict], title: str = "") -> ChartSpec:
    """``rows``: dicts with model, dimension, classifier, margin (percent points), significant."""
    return ChartSpec("margin_bars", {"rows": list(rows)}, title=title,
                     labels={"y": "accuracy minus chance (points)"})


def _margin_bars(spec: ChartSpec) -> str:
    rows = spec.data.get("rows", [])
    groups = []
    for r in rows:
        key = (r["model"], r["dimension"])
        if key not in groups:
            groups.append(key)
    kinds = []
    for r in rows:
        if r["classifier"] not in kinds:
            kinds.append(r["classifier"])
    bar = 16
    gap = 18
    L, R, T, B = 60, 130, 40, 90
    W = max(420, L + len(groups) * (len(kinds) * bar + gap) + R)
    H = 400
    svg = _Svg(W, H, "margin_bars", spec.title)
    if not rows:
        return _no_data(svg)
    vals = [float(r["margin"]) for r in rows]
    lo = min(0.0, min(vals))
    hi = max(0.0, max(vals))
    if hi - lo <= 0:
        lo, hi = -1.0, 1.0
    pad = 0.1 * (hi - lo)
    lo, hi = lo - (pad if lo < 0 else 0), hi + pad
    def sy(v):
        return T + (hi - v) / (hi - lo) * (H - T - B)

    for t in _ticks(lo, hi):
        svg.line(L - 4, sy(t), W - R, sy(t), stroke="#eeeeee")
        svg.text(L - 6, sy(t) + 3, _tick_label(t), size=10, anchor="end")
    svg.line(L, sy(0), W - R, sy(0), stroke="#222222", cls="zero-line")
    svg.text(16, (T + H - B) / 2, spec.labels.get("y", "margin"), anchor="middle", size=10)
    index = {(r["model"], r["dimension"], r["classifier"]): r for r in rows}
    for g, (mdl, dim) in enumerate(groups):
        x0 = L + 8 + g * (len(kinds) * bar + gap)
        for j, kind in enumerate(kinds):
            r = index.get((mdl, dim, kind))
            if r is None:
                continue
            v = float(r["margin"])
            x = x0 + j * bar
            y0, y1 = sorted((sy(0), sy(v)))
            sig = bool(int(r["significant"])) if isinstance(r["significant"], str) else bool(r["significant"])
            svg.add(f'<rect x="{_c(x)}" y="{_c(y0)}" width="{bar - 2}" height="{_c(y1 - y0)}" '
                    f'fill="{PALETTE[j % len(PALETTE)]}" {_attrs(class_="bar", data_model=mdl, data_dimension=dim, data_classifier=kind, data_margin=r.get("margin_text", num(v)), data_significant=num(sig))}/>')
            if sig:
                ty = (y0 - 4) if v >= 0 else (y1 + 12)
                svg.text(x + (bar - 2) / 2, ty, "*", size=13, anchor="middle", cls="sig-marker",
                         data_model=mdl, data_dimension=dim, data_classifier=kind)
        cxg = x0 + len(kinds) * bar / 2
        svg.add(f'<text x="{_c(cxg)}" y="{_c(H - B + 14)}" font-size="10" text-anchor="end" '
                f'transform="rotate(-40 {_c(cxg)} {_c(H - B + 14)})" class="group-label">{escape(f"{mdl} / {dim}")}</text>')
    for j, kind in enumerate(kinds):
        ly = T + 14 * j
        svg.add(f'<rect x="{W - R + 14}" y="{ly}" width="9" height="9" fill="{PALETTE[j % len(PALETTE)]}"/>')
        svg.text(W - R + 28, ly + 8, kind, size=10, cls="legend")
    return svg.done()


def chart_rows(spec: ChartSpec) -> tuple[list[str], list[list[str]]]:
    """Tabular twin of a chart: every data attribute value in string form."""
    if spec.kind == "volcano":
        head = ["term", "class", "beta", "p", "neglogp", "passes", "label"]
        pts = spec.data.get("points", [])
        labelled = _labelled(pts)
        rows = [[pts[i]["term"], pts[i]["class"], num(pts[i]["beta"]), num(pts[i]["p"]),
                 num(neg_log10(pts[i]["p"])), num(bool(pts[i]["passes"])), num(i in labelled)]
                for i in _point_order(pts)]
        if rows:
            bcut = spec.thresholds.get("beta", math.log(2.0))
            pcut = spec.thresholds.get("p", 0.05)
            rows.append(["<guide>", "x", num(-bcut), "", "", "", ""])
            rows.append(["<guide>", "x", num(bcut), "", "", "", ""])
            rows.append(["<guide>", "y", "", num(pcut), num(neg_log10(pcut)), "", ""])
        return head, rows
    if spec.kind == "heatmap":
        cm = spec.data.get("matrix")
        head = ["kind", "term", "model", "value", "raw", "step", "left", "right", "height"]
        if cm is None or not cm.features:
            return head, []
        order = cm.dendrogram.leaf_order() if cm.dendrogram else range(len(cm.features))
        rows = [["cell", cm.features[i], mdl, num(cm.values[i, j]), num(cm.raw[i, j]), "", "", "", ""]
                for i in order for j, mdl in enumerate(cm.models)]
        if cm.dendrogram is not None:
            rows += [["merge", "", "", "", "", num(s), num(m.left), num(m.right), num(m.height)]
                     for s, m in enumerate(cm.dendrogram.merges)]
        return head, rows
    if spec.kind == "radar":
        head = ["feature", "series", "axis", "value"]
        rows = [[spec.data["feature"], name, a, num(v)]
                for name, vs in spec.data.get("series", {}).items() for a, v in zip(spec.data["axes"], vs)]
        return head, rows
    if spec.kind == "margin_bars":
        head = ["model", "dimension", "classifier", "margin", "significant"]
        rows = []
        for r in spec.data.get("rows", []):
            sig = bool(int(r["significant"])) if isinstance(r["significant"], str) else bool(r["significant"])
            rows.append([r["model"], r["dimension"], r["classifier"], r.get("margin_text", num(float(r["margin"]))),
                         num(sig)])
        return head, rows
    raise ValueError(f"unknown chart kind {spec.kind!r}")


def write_chart(spec: ChartSpec, svg_path) -> None:
    """Write the SVG and its same-stem CSV table side by side."""
    svg_path = Path(svg_path)
    svg_path.write_text(render(spec), encoding="utf-8")
    head, rows = chart_rows(spec)
    with svg_path.with_suffix(".csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        w.writerows(rows)
