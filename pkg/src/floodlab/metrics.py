"""Evaluation suite: relative RMSE over an evaluation cell set, hydrograph
scores (NSE, KGE, peak-depth error), flood-extent confusion metrics at depth
thresholds, per-timestep CSI curves, and WSE helpers.

Degenerate denominators yield None ("undefined" flag) rather than NaN so that
reports stay machine-checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError

VARIABLES = ("h", "hu", "hv")


def _as_series(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64).ravel()
    if arr.size < 1:
        raise ContractError("empty series")
    return arr


def nse(pred, obs):
    """Nash-Sutcliffe efficiency; None when the observations have no variance."""
    p = _as_series(pred)
    o = _as_series(obs)
    if p.size != o.size or o.size < 2:
        raise ContractError(f"series must share a length >= 2, got {p.size} and {o.size}")
    denom = float(((o - o.mean()) ** 2).sum())
    if denom == 0.0:
        return None
    return 1.0 - float(((p - o) ** 2).sum()) / denom


def kge(pred, obs):
    """Kling-Gupta efficiency (2009 form); None on degenerate moments."""
    p = _as_series(pred)
    o = _as_series(obs)
    if p.size != o.size or o.size < 2:
        raise ContractError(f"series must share a length >= 2, got {p.size} and {o.size}")
    mu_o = o.mean()
    sd_o = o.std()
    sd_p = p.std()
    if mu_o == 0.0 or sd_o == 0.0 or sd_p == 0.0:
        return None
    r = float(np.corrcoef(p, o)[0, 1])
    alpha = float(sd_p / sd_o)
    beta = float(p.mean() / mu_o)
    return 1.0 - float(np.sqrt((r - 1.0) ** 2 + (alpha - 1.0) ** 2 + (beta - 1.0) ** 2))


def peak_rel_err(pred, obs):
    """Peak-depth relative error in percent; None when the observed peak is zero."""
    p = _as_series(pred)
    o = _as_series(obs)
    peak_o = float(o.max())
    if peak_o <= 0.0:
        return None
    return 100.0 * abs(float(p.max()) - peak_o) / peak_o


def rrmse(pred, ref, eval_set) -> dict:
    """Relative RMSE in percent per conserved variable plus aggregates.

    pred/ref: (N_T, 3, ny, nx) stacks; eval_set: boolean cell mask. Metrics
    pool every evaluation cell at every snapshot. The pooled aggregate uses
    all three variables in one ratio; the mean-of-three is reported alongside.
    Variables whose reference is identically zero come back as None.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape or pred.ndim != 4 or pred.shape[1] != 3:
        raise ContractError(f"need matching (N_T, 3, ny, nx) stacks, got {pred.shape} vs {ref.shape}")
    eval_set = np.asarray(eval_set, dtype=bool)
    if not eval_set.any():
        raise DomainError("evaluation cell set is empty")

    out = {}
    num_sq = 0.0
    den_sq = 0.0
    per_var = []
    for c, name in enumerate(VARIABLES):
        dp = pred[:, c][:, eval_set] - ref[:, c][:, eval_set]
        dr = ref[:, c][:, eval_set]
        nsq = float((dp * dp).sum())
        dsq = float((dr * dr).sum())
        num_sq += nsq
        den_sq += dsq
        if dsq == 0.0:
            out[name] = None
        else:
            val = 100.0 * float(np.sqrt(nsq / dsq))
            out[name] = val
            per_var.append(val)
    out["all_pooled"] = 100.0 * float(np.sqrt(num_sq / den_sq)) if den_sq > 0.0 else None
    out["all_mean3"] = float(np.mean(per_var)) if len(per_var) == 3 else None
    return out


@dataclass
class ExtentMetrics:
    """Pooled confusion metrics (percent) at one depth threshold."""

    tau: float
    csi: float | None
    f1: float | None
    precision: float | None
    recall: float | None
    tp: int
    fp: int
    fn: int
    per_timestep_csi: list = field(default_factory=list)


def extent_metrics(pred_h, ref_h, tau: float, eval_set) -> ExtentMetrics:
    """Binary inundation metrics with masks 1[h > tau], pooled over time and cells."""
    pred_h = np.asarray(pred_h, dtype=np.float64)
    ref_h = np.asarray(ref_h, dtype=np.float64)
    if pred_h.shape != ref_h.shape or pred_h.ndim != 3:
        raise ContractError(f"need matching (N_T, ny, nx) depth stacks, got {pred_h.shape}")
    eval_set = np.asarray(eval_set, dtype=bool)
    if not eval_set.any():
        raise DomainError("evaluation cell set is empty")

    pm = pred_h[:, eval_set] > tau
    rm = ref_h[:, eval_set] > tau
    tp_t = (pm & rm).sum(axis=1)
    fp_t = (pm & ~rm).sum(axis=1)
    fn_t = (~pm & rm).sum(axis=1)
    tp, fp, fn = int(tp_t.sum()), int(fp_t.sum()), int(fn_t.sum())

    def ratio(num, den):
        return 100.0 * num / den if den > 0 else None

    per_step = []
    for k in range(pm.shape[0]):
        d = int(tp_t[k] + fp_t[k] + fn_t[k])
        per_step.append(ratio(int(tp_t[k]), d))

    return ExtentMetrics(
        tau=tau,
        csi=ratio(tp, tp + fp + fn),
        f1=ratio(2 * tp, 2 * tp + fp + fn),
        precision=ratio(tp, tp + fp),
        recall=ratio(tp, tp + fn),
        tp=tp, fp=fp, fn=fn,
        per_timestep_csi=per_step,
    )


class StreamingScores:
    """One-pass accumulators for rRMSE, NSE, KGE, peak error, and confusion
    counts over chunked (time-sliced) data.

    Feeding chunks in any split produces the same result as the two-pass
    functions to ~1e-10: every metric reduces to plain sums of values,
    squares, and cross products.
    """

    def __init__(self, thresholds=()):
        self.thresholds = tuple(float(t) for t in thresholds)
        self.n = 0
        self.sum_p = 0.0
        self.sum_o = 0.0
        self.sum_pp = 0.0
        self.sum_oo = 0.0
        self.sum_po = 0.0
        self.sum_sq_diff = 0.0
        self.peak_p = -np.inf
        self.peak_o = -np.inf
        self.confusion = {t: [0, 0, 0] for t in self.thresholds}  # tp, fp, fn

    def update(self, pred, obs) -> None:
        p = np.asarray(pred, dtype=np.float64).ravel()
        o = np.asarray(obs, dtype=np.float64).ravel()
        if p.shape != o.shape:
            raise ContractError("streaming update needs matching chunk shapes")
        self.n += p.size
        self.sum_p += float(p.sum())
        self.sum_o += float(o.sum())
        self.sum_pp += float((p * p).sum())
        self.sum_oo += float((o * o).sum())
        self.sum_po += float((p * o).sum())
        d = p - o
        self.sum_sq_diff += float((d * d).sum())
        if p.size:
            self.peak_p = max(self.peak_p, float(p.max()))
            self.peak_o = max(self.peak_o, float(o.max()))
        for t in self.thresholds:
            pm = p > t
            rm = o > t
            c = self.confusion[t]
            c[0] += int((pm & rm).sum())
            c[1] += int((pm & ~rm).sum())
            c[2] += int((~pm & rm).sum())

    def rrmse_percent(self):
        if self.n == 0 or self.sum_oo == 0.0:
            return None
        return 100.0 * float(np.sqrt(self.sum_sq_diff / self.sum_oo))

    def nse(self):
        var_o = self.sum_oo - self.sum_o * self.sum_o / self.n
        if self.n < 2 or var_o == 0.0:
            return None
        return 1.0 - self.sum_sq_diff / var_o

    def kge(self):
        if self.n < 2:
            return None
        mu_p = self.sum_p / self.n
        mu_o = self.sum_o / self.n
        var_p = self.sum_pp / self.n - mu_p * mu_p
        var_o = self.sum_oo / self.n - mu_o * mu_o
        if mu_o == 0.0 or var_o <= 0.0 or var_p <= 0.0:
            return None
        cov = self.sum_po / self.n - mu_p * mu_o
        r = cov / np.sqrt(var_p * var_o)
        alpha = np.sqrt(var_p / var_o)
        beta = mu_p / mu_o
        return 1.0 - float(np.sqrt((r - 1.0) ** 2 + (alpha - 1.0) ** 2 + (beta - 1.0) ** 2))

    def peak_rel_err_percent(self):
        if self.peak_o <= 0.0:
            return None
        return 100.0 * abs(self.peak_p - self.peak_o) / self.peak_o

    def extent(self, tau):
        tp, fp, fn = self.confusion[float(tau)]
        def ratio(num, den):
            return 100.0 * num / den if den > 0 else None

        return {"csi": ratio(tp, tp + fp + fn), "f1": ratio(2 * tp, 2 * tp + fp + fn),
                "precision": ratio(tp, tp + fp), "recall": ratio(tp, tp + fn)}


def recenter_wse(sim_wse, obs_wse) -> np.ndarray:
    """Shift the simulated WSE so its mean over the window equals the observed mean."""
    sim = _as_series(sim_wse)
    obs = _as_series(obs_wse)
    if sim.size != obs.size or sim.size == 0:
        raise DomainError(f"comparison window mismatch: {sim.size} vs {obs.size} samples")
    return sim - sim.mean() + obs.mean()


def wse_from_cross_section(depth_field, terrain, cross_section_cells) -> float:
    """Max depth across the cross-section plus the mean bed elevation along it."""
    cells = list(cross_section_cells)
    if not cells:
        raise DomainError("cross-section is empty")
    jj = np.array([c[0] for c in cells], dtype=np.int64)
    ii = np.array([c[1] for c in cells], dtype=np.int64)
    ny, nx = terrain.grid.shape
    if np.any((jj < 0) | (jj >= ny) | (ii < 0) | (ii >= nx)):
        raise DomainError("cross-section cell outside the grid")
    if not np.all(terrain.mask[jj, ii]):
        raise DomainError("cross-section includes inactive cells")
    depth = np.asarray(depth_field, dtype=np.float64)
    return float(depth[jj, ii].max() + terrain.b[jj, ii].mean())


@dataclass(frozen=True)
class GaugeSeries:
    """Observed or simulated stage series at one location."""

    times: np.ndarray
    values: np.ndarray
    datum: float = 0.0
    location: tuple | None = None
    name: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.shape != v.shape or t.ndim != 1:
            raise ContractError("gauge times and values must be matching 1-D arrays")
        if t.size >= 2 and not np.all(np.diff(t) > 0.0):
            raise ContractError("gauge timestamps must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def wse(self) -> np.ndarray:
        return self.values + self.datum


def load_cross_section_csv(path):
    """Cross-section cell list: header `j,i`, one raster cell per row."""
    from .errors import FormatError

    cells = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            ln = raw.strip()
            if not ln or ln.startswith("#") or ln.lower().startswith("j"):
                continue
            j_str, i_str = ln.split(",")[:2]
            cells.append((int(j_str), int(i_str)))
    if not cells:
        raise FormatError(f"{path}: no cross-section cells found")
    return cells


def load_gauge_csv(path, name: str = "", location=None) -> GaugeSeries:
    """CSV columns: timestamp, value, datum (datum constant; first row wins)."""
    from .errors import FormatError

    times, values, datum = [], [], None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            ln = raw.strip()
            if not ln or ln.startswith("#"):
                continue
            low = ln.lower()
            if low.startswith("timestamp"):
                continue
            parts = ln.split(",")
            if len(parts) < 2:
                raise FormatError(f"{path}: need at least timestamp,value per row")
            times.append(float(parts[0]))
            values.append(float(parts[1]))
            if datum is None and len(parts) >= 3:
                datum = float(parts[2])
    if not times:
        raise FormatError(f"{path}: no gauge rows found")
    return GaugeSeries(times=np.array(times), values=np.array(values),
                       datum=datum or 0.0, location=location, name=name)


@dataclass
class MetricReport:
    """Evaluation product: per-variable rRMSE, per-gauge hydrograph scores,
    per-threshold extent metrics, per-timestep CSI, and runtime."""

    rrmse: dict = field(default_factory=dict)
    gauges: dict = field(default_factory=dict)       # name -> {nse, kge, peak_rel_err}
    extents: dict = field(default_factory=dict)      # tau -> ExtentMetrics
    runtime_seconds: float | None = None

    def validate(self) -> None:
        """Check the algebraic report invariants (raises ContractError)."""
        for tau, ext in self.extents.items():
            for val in (ext.csi, ext.f1, ext.precision, ext.recall):
                if val is not None and not (0.0 <= val <= 100.0):
                    raise ContractError(f"extent metric out of [0, 100] at tau={tau}: {val}")
            if ext.csi is not None and ext.f1 is not None:
                implied = ext.f1 / (2.0 - ext.f1 / 100.0)
                if abs(ext.csi - implied) > 1e-12 * max(1.0, abs(ext.csi)):
                    raise ContractError(
                        f"CSI/F1 identity violated at tau={tau}: csi={ext.csi}, f1={ext.f1}")
        for name, scores in self.gauges.items():
            if scores.get("nse") is not None and scores["nse"] > 1.0 + 1e-12:
                raise ContractError(f"NSE > 1 at gauge {name}")
            if scores.get("kge") is not None and scores["kge"] > 1.0 + 1e-12:
                raise ContractError(f"KGE > 1 at gauge {name}")

    def to_keyvalues(self) -> list:
        """Machine-readable `key = value` lines; undefined values read 'undefined'."""
        def f(v):
            return "undefined" if v is None else repr(float(v))

        lines = []
        for key in ("h", "hu", "hv", "all_pooled", "all_mean3"):
            if key in self.rrmse:
                lines.append(f"rrmse.{key} = {f(self.rrmse[key])}")
        for name in sorted(self.gauges):
            for metric in ("nse", "kge", "peak_rel_err"):
                lines.append(f"gauge.{name}.{metric} = {f(self.gauges[name].get(metric))}")
        for tau in sorted(self.extents):
            ext = self.extents[tau]
            tag = f"extent.tau_{tau:g}"
            for metric in ("csi", "f1", "precision", "recall"):
                lines.append(f"{tag}.{metric} = {f(getattr(ext, metric))}")
            lines.append(f"{tag}.counts = {ext.tp},{ext.fp},{ext.fn}")
            series = ";".join(f(v) for v in ext.per_timestep_csi)
            lines.append(f"{tag}.per_timestep_csi = {series}")
        if self.runtime_seconds is not None:
            lines.append(f"runtime_seconds = {repr(float(self.runtime_seconds))}")
        return lines

    def to_text(self) -> str:
        """Human-readable summary table."""
        def f(v, unit="%"):
            return "undefined" if v is None else f"{v:.4f}{unit}"

        rows = ["metric report", "=" * 44]
        if self.rrmse:
            rows.append("rRMSE  h: {}  hu: {}  hv: {}".format(
                f(self.rrmse.get("h")), f(self.rrmse.get("hu")), f(self.rrmse.get("hv"))))
            rows.append("rRMSE  all (pooled): {}  all (mean of 3): {}".format(
                f(self.rrmse.get("all_pooled")), f(self.rrmse.get("all_mean3"))))
        for name in sorted(self.gauges):
            s = self.gauges[name]
            rows.append("gauge {:<16} NSE {}  KGE {}  peak err {}".format(
                name, f(s.get("nse"), ""), f(s.get("kge"), ""), f(s.get("peak_rel_err"))))
        for tau in sorted(self.extents):
            ext = self.extents[tau]
            rows.append("extent tau={:g} m  CSI {}  F1 {}  precision {}  recall {}".format(
                tau, f(ext.csi), f(ext.f1), f(ext.precision), f(ext.recall)))
        if self.runtime_seconds is not None:
            rows.append(f"runtime: {self.runtime_seconds:.3f} s")
        return "\n".join(rows)


def save_report(path_kv, report: MetricReport, path_text=None) -> None:
    report.validate()
    with open(path_kv, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.to_keyvalues()) + "\n")
    if path_text is not None:
        with open(path_text, "w", encoding="utf-8") as fh:
            fh.write(report.to_text() + "\n")


def compute_report(pred, ref, eval_set, thresholds=(0.1, 0.5),
                   gauge_series: dict | None = None,
                   runtime_seconds: float | None = None) -> MetricReport:
    """Assemble the full report from prediction/reference stacks.

    gauge_series maps a gauge name to a (pred_depth_series, ref_depth_series)
    pair already extracted at the gauge location.
    """
    report = MetricReport(runtime_seconds=runtime_seconds)
    report.rrmse = rrmse(pred, ref, eval_set)
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    for tau in thresholds:
        report.extents[float(tau)] = extent_metrics(pred[:, 0], ref[:, 0], float(tau), eval_set)
    if gauge_series:
        for name, (p_series, o_series) in gauge_series.items():
            report.gauges[name] = {
                "nse": nse(p_series, o_series),
                "kge": kge(p_series, o_series),
                "peak_rel_err": peak_rel_err(p_series, o_series),
            }
    report.validate()
    return report
