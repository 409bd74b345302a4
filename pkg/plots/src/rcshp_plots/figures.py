"""Figure builders for the four standard figure families."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "rcshp-plot"  # deterministic SVG ids

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

FIGURE_KINDS = ("convergence", "pilot-sweep", "snr-sweep", "ee-bars")

SCHEME_STYLE = {
    "rcshp": {"color": "#c0392b", "marker": "o", "label": "optimized policy"},
    "perfect_csi_rcshp": {"color": "#8e44ad", "marker": "s", "label": "perfect CSI"},
    "duality_equal_power": {"color": "#2471a3", "marker": "^", "label": "equal power (duality)"},
    "rzf_equal_power": {"color": "#1e8449", "marker": "v", "label": "equal power (RZF)"},
}

SWEEP_X_LABEL = {"pilot-sweep": "pilot symbols per block",
                 "snr-sweep": "SNR [dB]"}
SWEEP_AXIS_VALUE = {"pilot-sweep": "pilots", "snr-sweep": "snr"}


class PlotDataError(ValueError):
    """Input CSVs are missing required columns, schemes, or rows."""


@dataclass
class FigureSpec:
    kind: str
    csv_paths: list
    out_path: str
    metric: str = "utility"           # y column for the sweep figures
    schemes: list = field(default_factory=list)  # empty: every scheme found
    title: str = ""

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise PlotDataError(f"unknown figure kind {self.kind!r}; "
                                f"valid kinds: {', '.join(FIGURE_KINDS)}")
        if not self.csv_paths:
            raise PlotDataError("at least one input CSV is required")


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise PlotDataError(f"no data rows in {path}")
    return rows


def _require_columns(rows, cols, path):
    missing = [c for c in cols if c not in rows[0]]
    if missing:
        raise PlotDataError(f"{path}: missing column(s) {', '.join(missing)}; "
                            f"found {', '.join(rows[0].keys())}")


def _floats(rows, col):
    out = []
    for r in rows:
        cell = r[col]
        out.append(float(cell) if cell not in ("", None) else float("nan"))
    return out


def _style(scheme):
    return SCHEME_STYLE.get(scheme, {"marker": "x", "label": scheme})


def _save(fig, out_path):
    kwargs = {}
    if str(out_path).lower().endswith(".svg"):
        kwargs["metadata"] = {"Date": None}  # strip the embedded timestamp
    fig.savefig(out_path, dpi=120, bbox_inches="tight", **kwargs)
    plt.close(fig)


def render_convergence(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in spec.csv_paths:
        rows = read_csv_rows(path)
        _require_columns(rows, ["iter", "surrogate_utility", "mc_utility"], path)
        it = _floats(rows, "iter")
        ax.plot(it, _floats(rows, "surrogate_utility"), lw=1.4,
                label=f"surrogate ({path})" if len(spec.csv_paths) > 1 else "surrogate")
        mc = _floats(rows, "mc_utility")
        pts = [(x, y) for x, y in zip(it, mc) if y == y]  # drop NaN gaps
        if pts:
            ax.plot(*zip(*pts), "o", ms=4,
                    label="Monte-Carlo estimate" if len(spec.csv_paths) == 1 else None)
    ax.set_xlabel("iteration")
    ax.set_ylabel("utility")
    ax.set_title(spec.title or "optimizer convergence")
    ax.grid(True, alpha=0.4)
    ax.legend()
    _save(fig, spec.out_path)


def _sweep_rows(spec: FigureSpec):
    rows = []
    for path in spec.csv_paths:
        part = read_csv_rows(path)
        _require_columns(part, ["sweep_axis", "sweep_value", "scheme", spec.metric], path)
        rows.extend(part)
    axis = SWEEP_AXIS_VALUE[spec.kind]
    rows = [r for r in rows if r["sweep_axis"] == axis]
    if not rows:
        raise PlotDataError(f"no rows with sweep_axis == {axis!r} in the input CSVs")
    return rows


def render_sweep(spec: FigureSpec):
    rows = _sweep_rows(spec)
    schemes = spec.schemes or sorted({r["scheme"] for r in rows})
    missing = [s for s in schemes if not any(r["scheme"] == s for r in rows)]
    if missing:
        raise PlotDataError(f"scheme(s) {', '.join(missing)} not present in the data")
    stderr_col = f"{spec.metric}_stderr"
    have_stderr = stderr_col in rows[0]
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme in schemes:
        sub = sorted((r for r in rows if r["scheme"] == scheme),
                     key=lambda r: float(r["sweep_value"]))
        x = [float(r["sweep_value"]) for r in sub]
        y = [float(r[spec.metric]) for r in sub]
        style = _style(scheme)
        if have_stderr:
            err = [float(r[stderr_col]) for r in sub]
            ax.errorbar(x, y, yerr=err, capsize=3, lw=1.4, **style)
        else:
            ax.plot(x, y, lw=1.4, **style)
    ax.set_xlabel(SWEEP_X_LABEL[spec.kind])
    ax.set_ylabel(spec.metric.replace("_", " "))
    ax.set_title(spec.title or f"{spec.metric.replace('_', ' ')} vs "
                 + SWEEP_X_LABEL[spec.kind])
    ax.grid(True, alpha=0.4)
    ax.legend()
    _save(fig, spec.out_path)


def render_ee_bars(spec: FigureSpec):
    rows = []
    for path in spec.csv_paths:
        part = read_csv_rows(path)
        _require_columns(part, ["sweep_value", "scheme", "ee"], path)
        rows.extend(part)
    schemes = spec.schemes or sorted({r["scheme"] for r in rows})
    missing = [s for s in schemes if not any(r["scheme"] == s for r in rows)]
    if missing:
        raise PlotDataError(f"scheme(s) {', '.join(missing)} not present in the data")
    values = sorted({r["sweep_value"] for r in rows},
                    key=lambda v: float(v) if v not in ("", None) else 0.0)
    width = 0.8 / len(schemes)
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, scheme in enumerate(schemes):
        heights = []
        for v in values:
            sub = [r for r in rows if r["scheme"] == scheme and r["sweep_value"] == v]
            heights.append(float(sub[0]["ee"]) if sub else 0.0)
        offset = (j - (len(schemes) - 1) / 2) * width
        pos = [i + offset for i in range(len(values))]
        style = _style(scheme)
        ax.bar(pos, heights, width=width, color=style.get("color"),
               label=style.get("label", scheme))
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels([v if v else "single" for v in values])
    ax.set_xlabel("sweep value")
    ax.set_ylabel("energy efficiency [bit/channel use/W]")
    ax.set_title(spec.title or "energy efficiency")
    ax.grid(True, axis="y", alpha=0.4)
    ax.legend()
    _save(fig, spec.out_path)


def render_figure(spec: FigureSpec) -> str:
    """Render one figure; returns the written path."""
    if spec.kind == "convergence":
        render_convergence(spec)
    elif spec.kind in ("pilot-sweep", "snr-sweep"):
        render_sweep(spec)
    else:
        render_ee_bars(spec)
    return spec.out_path
