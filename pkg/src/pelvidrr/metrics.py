"""Scoring: Dice overlap for masks, PSI error statistics, and plot emission.

All standard deviations are population (divide by N); the report states
this. PSI error is signed ``pred - true``; ranking and stratification use
absolute error. Patients are ranked by their mean absolute error and split
into a best-75% group (``ceil(0.75 * P)`` patients) and the remaining
worst-25% group; stratum statistics are over the samples of the group's
patients, so the overall mean is their sample-count-weighted combination.

``emit_plots`` writes CSVs (comma-separated, header row, ``.`` decimal, LF
endings) plus minimal SVG renderings (axes, box/points, no styling). Output
is byte-deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume_io import MASK, Image2

STD_CONVENTION = "population"
REPORT_SCHEMA_VERSION = 1


@dataclass
class SegScore:
    per_image: list[tuple[str, float]]  # (sample_id, dice)
    mean: float
    std: float


@dataclass
class StratumStats:
    patient_ids: list[str]
    n_samples: int
    mean_abs_error_deg: float
    std_abs_error_deg: float


@dataclass
class PsiSample:
    sample_id: str
    patient_id: str
    psi_true_deg: float
    psi_pred_deg: float
    error_deg: float  # pred - true


@dataclass
class PsiReport:
    per_sample: list[PsiSample]
    per_patient: list[tuple[str, float, int]]  # (patient_id, mean |error|, n samples)
    overall_mean_abs_error_deg: float
    overall_std_abs_error_deg: float
    best75: StratumStats
    worst25: StratumStats


def dice(a: Image2, b: Image2) -> float:
    """Dice overlap 2|a&b| / (|a|+|b|); 1.0 when both masks are empty."""
    if a.kind != MASK or b.kind != MASK:
        raise ValueError("dice requires two mask images")
    if a.data.shape != b.data.shape:
        raise ValueError(f"mask dimensions differ: {a.data.shape} vs {b.data.shape}")
    na = int(np.count_nonzero(a.data))
    nb_ = int(np.count_nonzero(b.data))
    if na + nb_ == 0:
        return 1.0
    overlap = int(np.count_nonzero(a.data & b.data))
    return 2.0 * overlap / (na + nb_)


def seg_score(per_image: list[tuple[str, float]]) -> SegScore:
    if not per_image:
        raise ValueError("no Dice values to score")
    values = np.array([d for _, d in per_image], dtype=np.float64)
    return SegScore(per_image=list(per_image), mean=float(values.mean()), std=float(values.std()))


def psi_error_report(pairs) -> PsiReport:
    """Build the full error report from (sample_id, patient_id, true, pred) rows."""
    rows = list(pairs)
    if not rows:
        raise ValueError("no prediction pairs to report")
    per_sample = []
    for sample_id, patient_id, psi_true, psi_pred in rows:
        if not (math.isfinite(psi_true) and math.isfinite(psi_pred)):
            raise ValueError(f"non-finite PSI for sample {sample_id!r}")
        per_sample.append(PsiSample(
            sample_id=sample_id,
            patient_id=patient_id,
            psi_true_deg=float(psi_true),
            psi_pred_deg=float(psi_pred),
            error_deg=float(psi_pred) - float(psi_true),
        ))

    by_patient: dict[str, list[float]] = {}
    for s in per_sample:
        by_patient.setdefault(s.patient_id, []).append(abs(s.error_deg))
    per_patient = [
        (pid, float(np.mean(errs)), len(errs)) for pid, errs in sorted(by_patient.items())
    ]

    all_abs = np.array([abs(s.error_deg) for s in per_sample], dtype=np.float64)

    # rank patients by mean |error|, ties broken by id; best ceil(0.75 P)
    ranked = sorted(per_patient, key=lambda item: (item[1], item[0]))
    n_best = math.ceil(0.75 * len(ranked))
    best_ids = {pid for pid, _, _ in ranked[:n_best]}

    def stratum(ids: set[str]) -> StratumStats:
        errs = np.array(
            [abs(s.error_deg) for s in per_sample if s.patient_id in ids], dtype=np.float64
        )
        return StratumStats(
            patient_ids=sorted(ids),
            n_samples=int(errs.size),
            mean_abs_error_deg=float(errs.mean()) if errs.size else 0.0,
            std_abs_error_deg=float(errs.std()) if errs.size else 0.0,
        )

    return PsiReport(
        per_sample=per_sample,
        per_patient=per_patient,
        overall_mean_abs_error_deg=float(all_abs.mean()),
        overall_std_abs_error_deg=float(all_abs.std()),
        best75=stratum(best_ids),
        worst25=stratum({pid for pid, _, _ in ranked[n_best:]}),
    )


# ---------------------------------------------------------------------------
# report.json


def report_to_dict(psi: PsiReport | None = None, seg: SegScore | None = None) -> dict:
    out: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "std_convention": STD_CONVENTION,
    }
    if seg is not None:
        out["seg"] = {
            "per_image_dice": [{"sample_id": sid, "dice": d} for sid, d in seg.per_image],
            "mean": seg.mean,
            "std": seg.std,
        }
    if psi is not None:
        out["psi"] = {
            "per_sample": [
                {
                    "sample_id": s.sample_id,
                    "patient_id": s.patient_id,
                    "psi_true_deg": s.psi_true_deg,
                    "psi_pred_deg": s.psi_pred_deg,
                    "error_deg": s.error_deg,
                }
                for s in psi.per_sample
            ],
            "per_patient": [
                {"patient_id": pid, "mean_abs_error_deg": m, "n_samples": n}
                for pid, m, n in psi.per_patient
            ],
            "overall": {
                "mean_abs_error_deg": psi.overall_mean_abs_error_deg,
                "std_abs_error_deg": psi.overall_std_abs_error_deg,
                "n_samples": len(psi.per_sample),
            },
            "best75": _stratum_dict(psi.best75),
            "worst25": _stratum_dict(psi.worst25),
        }
    return out


def _stratum_dict(s: StratumStats) -> dict:
    return {
        "patient_ids": s.patient_ids,
        "n_patients": len(s.patient_ids),
        "n_samples": s.n_samples,
        "mean_abs_error_deg": s.mean_abs_error_deg,
        "std_abs_error_deg": s.std_abs_error_deg,
    }


def write_report(path: str | Path, psi: PsiReport | None = None, seg: SegScore | None = None) -> None:
    payload = report_to_dict(psi=psi, seg=seg)
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n", encoding="ascii"
    )


def read_report(path: str | Path) -> tuple[PsiReport | None, SegScore | None]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"report not found: {path}")
    obj = json.loads(path.read_text(encoding="ascii"))
    if obj.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported report schema_version")
    psi = None
    if "psi" in obj:
        p = obj["psi"]
        psi = PsiReport(
            per_sample=[
                PsiSample(
                    sample_id=s["sample_id"],
                    patient_id=s["patient_id"],
                    psi_true_deg=s["psi_true_deg"],
                    psi_pred_deg=s["psi_pred_deg"],
                    error_deg=s["error_deg"],
                )
                for s in p["per_sample"]
            ],
            per_patient=[
                (r["patient_id"], r["mean_abs_error_deg"], r["n_samples"])
                for r in p["per_patient"]
            ],
            overall_mean_abs_error_deg=p["overall"]["mean_abs_error_deg"],
            overall_std_abs_error_deg=p["overall"]["std_abs_error_deg"],
            best75=_stratum_from(p["best75"]),
            worst25=_stratum_from(p["worst25"]),
        )
    seg = None
    if "seg" in obj:
        s = obj["seg"]
        seg = SegScore(
            per_image=[(r["sample_id"], r["dice"]) for r in s["per_image_dice"]],
            mean=s["mean"],
            std=s["std"],
        )
    return psi, seg


def _stratum_from(d: dict) -> StratumStats:
    return StratumStats(
        patient_ids=list(d["patient_ids"]),
        n_samples=d["n_samples"],
        mean_abs_error_deg=d["mean_abs_error_deg"],
        std_abs_error_deg=d["std_abs_error_deg"],
    )


# ---------------------------------------------------------------------------
# Plot emission (CSV + minimal SVG)


def _csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(rows)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _f(x: float) -> str:
    return repr(float(x))


_SVG_W, _SVG_H, _SVG_MARGIN = 480, 360, 50.0


def _svg_open(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}">',
        f'<text x="{_SVG_W / 2:.1f}" y="20" text-anchor="middle">{title}</text>',
        f'<rect x="{_SVG_MARGIN}" y="{_SVG_MARGIN}" width="{_SVG_W - 2 * _SVG_MARGIN}" '
        f'height="{_SVG_H - 2 * _SVG_MARGIN}" fill="none" stroke="black"/>',
    ]


def _svg_boxplot(values: np.ndarray, title: str, ylabel: str) -> str:
    lo, hi = float(values.min()), float(values.max())
    span = (hi - lo) or 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def y(v: float) -> float:
        return _SVG_H - _SVG_MARGIN - (v - lo) / (hi - lo) * (_SVG_H - 2 * _SVG_MARGIN)

    q1, med, q3 = (float(np.percentile(values, q)) for q in (25, 50, 75))
    vmin, vmax = float(values.min()), float(values.max())
    cx = _SVG_W / 2.0
    bw = 80.0
    parts = _svg_open(title)
    parts += [
        f'<line x1="{cx:.1f}" y1="{y(vmin):.2f}" x2="{cx:.1f}" y2="{y(q1):.2f}" stroke="black"/>',
        f'<line x1="{cx:.1f}" y1="{y(q3):.2f}" x2="{cx:.1f}" y2="{y(vmax):.2f}" stroke="black"/>',
        f'<rect x="{cx - bw / 2:.1f}" y="{y(q3):.2f}" width="{bw:.1f}" '
        f'height="{max(y(q1) - y(q3), 0.0):.2f}" fill="none" stroke="black"/>',
        f'<line x1="{cx - bw / 2:.1f}" y1="{y(med):.2f}" x2="{cx + bw / 2:.1f}" y2="{y(med):.2f}" stroke="black"/>',
        f'<text x="12" y="{y(vmin):.2f}">{vmin:.3g}</text>',
        f'<text x="12" y="{y(vmax):.2f}">{vmax:.3g}</text>',
        f'<text x="12" y="30">{ylabel}</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def _svg_scatter(xs: np.ndarray, ys: np.ndarray, title: str) -> str:
    lo = float(min(xs.min(), ys.min()))
    hi = float(max(xs.max(), ys.max()))
    span = (hi - lo) or 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def sx(v: float) -> float:
        return _SVG_MARGIN + (v - lo) / (hi - lo) * (_SVG_W - 2 * _SVG_MARGIN)

    def sy(v: float) -> float:
        return _SVG_H - _SVG_MARGIN - (v - lo) / (hi - lo) * (_SVG_H - 2 * _SVG_MARGIN)

    parts = _svg_open(title)
    parts.append(
        f'<line x1="{sx(lo):.2f}" y1="{sy(lo):.2f}" x2="{sx(hi):.2f}" y2="{sy(hi):.2f}" '
        'stroke="gray"/>'
    )
    for xv, yv in zip(xs, ys):
        parts.append(f'<circle cx="{sx(float(xv)):.2f}" cy="{sy(float(yv)):.2f}" r="2"/>')
    parts.append(f'<text x="12" y="30">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(
    out_dir: str | Path,
    psi: PsiReport | None = None,
    seg: SegScore | None = None,
    seed: int = 0,
    max_scatter_per_patient: int = 10,
) -> list[Path]:
    """Write the CSVs and SVGs behind the evaluation figures.

    The scatter is subsampled to at most ``max_scatter_per_patient`` samples
    per patient by a seeded deterministic selection.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if seg is not None:
        path = out_dir / "dice_box.csv"
        _csv(path, "sample_id,dice", (f"{sid},{_f(d)}" for sid, d in seg.per_image))
        written.append(path)
        values = np.array([d for _, d in seg.per_image], dtype=np.float64)
        svg = out_dir / "dice_box.svg"
        svg.write_text(_svg_boxplot(values, "Dice per test image", "dice"), encoding="ascii")
        written.append(svg)

    if psi is not None:
        path = out_dir / "psi_box.csv"
        _csv(
            path,
            "patient_id,mean_abs_error_deg",
            (f"{pid},{_f(m)}" for pid, m, _ in psi.per_patient),
        )
        written.append(path)
        values = np.array([m for _, m, _ in psi.per_patient], dtype=np.float64)
        svg = out_dir / "psi_box.svg"
        svg.write_text(
            _svg_boxplot(values, "Per-patient mean |PSI error|", "degrees"), encoding="ascii"
        )
        written.append(svg)

        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
        by_patient: dict[str, list[PsiSample]] = {}
        for s in psi.per_sample:
            by_patient.setdefault(s.patient_id, []).append(s)
        chosen: list[PsiSample] = []
        for pid in sorted(by_patient):
            samples = by_patient[pid]
            if len(samples) > max_scatter_per_patient:
                idx = sorted(rng.choice(len(samples), size=max_scatter_per_patient, replace=False))
                samples = [samples[i] for i in idx]
            chosen.extend(samples)
        path = out_dir / "psi_scatter.csv"
        _csv(
            path,
            "psi_true_deg,psi_pred_deg,patient_id",
            (f"{_f(s.psi_true_deg)},{_f(s.psi_pred_deg)},{s.patient_id}" for s in chosen),
        )
        written.append(path)
        xs = np.array([s.psi_true_deg for s in chosen])
        ys = np.array([s.psi_pred_deg for s in chosen])
        svg = out_dir / "psi_scatter.svg"
        svg.write_text(_svg_scatter(xs, ys, "Estimated vs ground-truth PSI"), encoding="ascii")
        written.append(svg)

    return written
