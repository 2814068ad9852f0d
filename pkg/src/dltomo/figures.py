"""Plot-ready tables and rendered figures for a completed run.

Every figure is backed by a CSV table written next to the PNG; the tables
are the contract (scriptable, diff-able), the renders are a convenience.
Bin-indexed tables always carry the bin range and record count columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .atomic import DLInterference, PhasorDecomposition, dl_interference
from .extract import PhaseBin, QuadratureRecord
from .io import atomic_write_text
from .synth import CASES

CASE_COLORS = {"probe": "tab:red", "dl": "tab:cyan", "fwm": "tab:purple"}


@dataclass
class FigureBundle:
    """Paths of every emitted table and rendered figure."""

    tables: dict[str, Path] = field(default_factory=dict)
    images: dict[str, Path] = field(default_factory=dict)


def _write_csv(path: Path, header: str, rows: list[str]) -> Path:
    atomic_write_text(path, "\n".join([header] + rows) + "\n")
    return path


def _bin_center(lo: float, hi: float) -> float:
    return 0.5 * (lo + hi)


def phase_scatter_tables(
    records: list[QuadratureRecord], out_dir: Path, theory_points: int = 361
) -> dict[str, Path]:
    """Measured per-scan phase shifts and amplitudes plus the phasor theory.

    Amplitudes are refit from each record's stored (theta, x) points (the
    same least-squares problem as the original time-domain fit, since the
    stored angles are an affine function of time), so the table can be built
    from a records CSV alone.  The theory curve uses the median probe-only
    and mixing-only amplitudes as the two phasor lengths; no free
    parameters.
    """
    from .extract import fit_sinusoid

    per_scan: dict[int, dict] = {}
    for rec in records:
        entry = per_scan.setdefault(
            rec.scan_id,
            {"dphi_fwm": rec.dphi_fwm, "dphi_dl": rec.dphi_dl, "amps": {}},
        )
        if rec.degenerate:
            entry["amps"][rec.case] = float("nan")
        else:
            refit = fit_sinusoid(np.column_stack([rec.thetas, rec.xs]), omega=1.0)
            entry["amps"][rec.case] = refit.amplitude

    rows = []
    e_probe_vals, e_fwm_vals = [], []
    for sid in sorted(per_scan):
        entry = per_scan[sid]
        amps = entry["amps"]
        rows.append(
            f"{sid},{entry['dphi_fwm']:.9e},{entry['dphi_dl']:.9e},"
            f"{amps.get('probe', float('nan')):.9e},"
            f"{amps.get('dl', float('nan')):.9e},"
            f"{amps.get('fwm', float('nan')):.9e}"
        )
        if np.isfinite(amps.get("probe", np.nan)):
            e_probe_vals.append(amps["probe"])
        if np.isfinite(amps.get("fwm", np.nan)):
            e_fwm_vals.append(amps["fwm"])
    scatter = _write_csv(
        out_dir / "phase_scatter.csv",
        "scan_id,dphi_fwm,dphi_dl,amp_probe,amp_dl,amp_fwm",
        rows,
    )

    e_probe = float(np.median(e_probe_vals)) if e_probe_vals else 0.0
    e_fwm = float(np.median(e_fwm_vals)) if e_fwm_vals else 0.0
    theory_rows = []
    if e_probe > 0:
        for dphi in np.linspace(-math.pi, math.pi, theory_points):
            res: DLInterference = dl_interference(
                PhasorDecomposition(E_E=e_probe, E_F=e_fwm, dphi_fwm=dphi)
            )
            theory_rows.append(
                f"{dphi:.9e},{res.dphi_dl:.9e},{res.amplitude_normalized:.9e}"
            )
    theory = _write_csv(
        out_dir / "phase_theory.csv",
        "dphi_fwm,dphi_dl,amplitude_normalized",
        theory_rows,
    )
    return {"phase_scatter": scatter, "phase_theory": theory}


def render_phase_scatter(out_dir: Path) -> Path:
    data = np.genfromtxt(out_dir / "phase_scatter.csv", delimiter=",", names=True)
    theory = np.genfromtxt(out_dir / "phase_theory.csv", delimiter=",", names=True)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(theory["dphi_fwm"], theory["dphi_dl"], "--", color="tab:blue", lw=1,
             label="phasor model")
    ax1.plot(data["dphi_fwm"], data["dphi_dl"], ".", color="tab:cyan", ms=4, alpha=0.7,
             label="per-scan fits")
    ax1.set_xlabel(r"$\Delta\phi_{\mathrm{FWM}}$ (rad)")
    ax1.set_ylabel(r"$\Delta\phi_{\mathrm{DL}}$ (rad)")
    ax1.legend(fontsize=8)
    probe_med = np.nanmedian(data["amp_probe"])
    ax2.plot(theory["dphi_fwm"], theory["amplitude_normalized"], "-", color="tab:orange",
             lw=1, label="phasor model")
    ax2.plot(data["dphi_fwm"], data["amp_dl"] / probe_med, ".", color="tab:orange",
             ms=4, alpha=0.6, label="fit amplitudes")
    ax2.set_xlabel(r"$\Delta\phi_{\mathrm{FWM}}$ (rad)")
    ax2.set_ylabel("combined amplitude / probe amplitude")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "phase_scatter.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def bin_quadrature_table(
    bins: list[PhaseBin], out_dir: Path, max_points_per_case: int = 400
) -> Path:
    rows = []
    for b in bins:
        for case in CASES:
            taken = 0
            for rec in b.records.get(case, []):
                for theta, x in zip(rec.thetas, rec.xs):
                    rows.append(
                        f"{b.index},{b.lo:.9e},{b.hi:.9e},{b.count(case)},"
                        f"{case},{theta:.9e},{x:.9e}"
                    )
                    taken += 1
                    if taken >= max_points_per_case:
                        break
                if taken >= max_points_per_case:
                    break
    return _write_csv(
        out_dir / "bin_quadratures.csv",
        "bin_index,lo,hi,count,case,theta,x",
        rows,
    )


def render_bin_quadratures(out_dir: Path, bin_indices: list[int] | None = None) -> Path:
    data = np.genfromtxt(
        out_dir / "bin_quadratures.csv", delimiter=",", names=True,
        dtype=None, encoding="utf-8",
    )
    present = sorted(set(int(b) for b in np.atleast_1d(data["bin_index"])))
    if bin_indices is None:
        step = max(1, len(present) // 4)
        bin_indices = present[::step][:4]
    fig, axes = plt.subplots(1, len(bin_indices), figsize=(3.2 * len(bin_indices), 3.2),
                             sharey=True, squeeze=False)
    for ax, b in zip(axes[0], bin_indices):
        sel = np.atleast_1d(data)[np.atleast_1d(data["bin_index"]) == b]
        for case in ("probe", "dl"):
            pts = sel[sel["case"] == case]
            if not len(pts):
                continue
            ax.plot(pts["theta"], pts["x"], ".", ms=3, alpha=0.5,
                    color=CASE_COLORS[case], label=case)
            order = np.argsort(pts["theta"])
            theta = pts["theta"][order]
            # overlay the average fitted cosine for orientation
            amp = 0.5 * (np.percentile(pts["x"], 97) - np.percentile(pts["x"], 3))
            phase = math.atan2(np.mean(pts["x"] * np.sin(pts["theta"])),
                               np.mean(pts["x"] * np.cos(pts["theta"])))
            grid = np.linspace(-math.pi, math.pi, 200)
            ax.plot(grid, amp * np.cos(grid - phase), "-", lw=1,
                    color=CASE_COLORS[case])
        lo = float(sel["lo"][0]) if len(sel) else 0.0
        hi = float(sel["hi"][0]) if len(sel) else 0.0
        ax.set_title(f"bin {b}: ({lo:.2f}, {hi:.2f}]", fontsize=9)
        ax.set_xlabel(r"$\theta$ (rad)")
    axes[0][0].set_ylabel("quadrature x")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "bin_quadratures.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def locus_table(report_rows: list[dict], out_dir: Path) -> Path:
    """Wigner-maximum locations per (case, bin)."""
    rows = []
    for row in report_rows:
        if row.get("wigner_max") is None or row.get("bin_index") is None:
            continue
        lo, hi = row["bin_range"]
        rows.append(
            f"{row['case']},{row['bin_index']},{lo:.9e},{hi:.9e},{row['n_points']},"
            f"{row['wigner_max']['x']:.9e},{row['wigner_max']['p']:.9e}"
        )
    return _write_csv(
        out_dir / "wigner_max_locus.csv",
        "case,bin_index,lo,hi,count,x,p",
        rows,
    )


def render_locus(out_dir: Path) -> Path:
    data = np.genfromtxt(
        out_dir / "wigner_max_locus.csv", delimiter=",", names=True,
        dtype=None, encoding="utf-8",
    )
    data = np.atleast_1d(data)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for case in CASES:
        sel = data[data["case"] == case]
        if not len(sel):
            continue
        ax.plot(sel["x"], sel["p"], "o-", ms=5, lw=0.8, color=CASE_COLORS[case],
                label=case, alpha=0.8)
    ax.axhline(0, color="gray", lw=0.5)
    ax.axvline(0, color="gray", lw=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel("p")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title("Wigner maxima per mixing-phase bin", fontsize=10)
    fig.tight_layout()
    path = out_dir / "wigner_max_locus.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def metric_tables(report_rows: list[dict], out_dir: Path) -> dict[str, Path]:
    photon_rows, fid_rows = [], []
    for row in report_rows:
        if row.get("bin_index") is None:
            continue
        lo, hi = row["bin_range"]
        center = _bin_center(lo, hi)
        base = f"{row['bin_index']},{lo:.9e},{hi:.9e},{center:.9e},{row['n_points']},{row['case']}"
        photon_rows.append(
            base
            + f",{row['mean_photon']['value']:.9e},{_fmt_err(row['mean_photon']['err'])}"
        )
        fid = row.get("fidelity_vs_input")
        fid_rows.append(
            base
            + f",{_fmt_val(fid)},{_fmt_err(fid['err'] if fid else None)}"
            + f",{row['coherent_overlap']['value']:.9e}"
            + f",{_fmt_err(row['coherent_overlap']['err'])}"
            + f",{row['purity']['value']:.9e},{_fmt_err(row['purity']['err'])}"
        )
    photon = _write_csv(
        out_dir / "mean_photon_by_bin.csv",
        "bin_index,lo,hi,center,count,case,mean_photon,mean_photon_err",
        photon_rows,
    )
    fidelity = _write_csv(
        out_dir / "fidelity_by_bin.csv",
        "bin_index,lo,hi,center,count,case,fidelity_vs_input,fidelity_vs_input_err,"
        "coherent_overlap,coherent_overlap_err,purity,purity_err",
        fid_rows,
    )
    return {"mean_photon_by_bin": photon, "fidelity_by_bin": fidelity}


def _fmt_val(pair) -> str:
    if pair is None or pair.get("value") is None:
        return "nan"
    return f"{pair['value']:.9e}"


def _fmt_err(err) -> str:
    return "nan" if err is None else f"{err:.9e}"


def render_metric_curves(out_dir: Path, input_mean_photon: float | None = None) -> dict[str, Path]:
    photon = np.genfromtxt(
        out_dir / "mean_photon_by_bin.csv", delimiter=",", names=True,
        dtype=None, encoding="utf-8",
    )
    fid = np.genfromtxt(
        out_dir / "fidelity_by_bin.csv", delimiter=",", names=True,
        dtype=None, encoding="utf-8",
    )
    photon, fid = np.atleast_1d(photon), np.atleast_1d(fid)
    out = {}

    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for case in CASES:
        sel = photon[photon["case"] == case]
        if not len(sel):
            continue
        order = np.argsort(sel["center"])
        ax.errorbar(sel["center"][order], sel["mean_photon"][order],
                    yerr=_nan_to_none(sel["mean_photon_err"][order]),
                    fmt="o--", ms=4, lw=1, color=CASE_COLORS[case], label=case)
    if input_mean_photon is not None:
        ax.axhline(input_mean_photon, color="tab:red", lw=1, label="probe input")
    ax.set_xlabel(r"$\Delta\phi_{\mathrm{FWM}}$ bin center (rad)")
    ax.set_ylabel("mean photon number")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "mean_photon_by_bin.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    out["mean_photon_by_bin"] = path

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
    for case in CASES:
        sel = fid[fid["case"] == case]
        if not len(sel):
            continue
        order = np.argsort(sel["center"])
        if np.any(np.isfinite(sel["fidelity_vs_input"])):
            ax1.errorbar(sel["center"][order], sel["fidelity_vs_input"][order],
                         yerr=_nan_to_none(sel["fidelity_vs_input_err"][order]),
                         fmt="o--", ms=4, lw=1, color=CASE_COLORS[case], label=case)
        ax2.errorbar(sel["center"][order], sel["coherent_overlap"][order],
                     yerr=_nan_to_none(sel["coherent_overlap_err"][order]),
                     fmt="o--", ms=4, lw=1, color=CASE_COLORS[case], label=case)
    ax1.set_ylabel("fidelity vs input")
    ax2.set_ylabel("overlap with coherent state")
    for ax in (ax1, ax2):
        ax.set_xlabel(r"$\Delta\phi_{\mathrm{FWM}}$ bin center (rad)")
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "fidelity_by_bin.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    out["fidelity_by_bin"] = path
    return out


def _nan_to_none(arr):
    return None if np.all(np.isnan(arr)) else np.nan_to_num(arr)


def render_wigner_maps(
    out_dir: Path, wigner_files: dict[tuple[int, str], Path], max_panels: int = 10
) -> Path | None:
    from .io import read_wigner

    keys = sorted(k for k in wigner_files if k[1] == "dl")
    if not keys:
        return None
    step = max(1, len(keys) // max_panels)
    keys = keys[::step][:max_panels]
    cols = min(5, len(keys))
    rows = math.ceil(len(keys) / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.6 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.set_axis_off()
    for ax, key in zip(axes.ravel(), keys):
        grid = read_wigner(wigner_files[key])
        ax.set_axis_on()
        extent = (grid.x_axis[0], grid.x_axis[-1], grid.p_axis[0], grid.p_axis[-1])
        vmax = float(np.abs(grid.values).max())
        ax.imshow(grid.values.T, origin="lower", extent=extent, cmap="RdBu_r",
                  vmin=-vmax, vmax=vmax)
        ax.set_title(f"bin {key[0]} ({key[1]})", fontsize=8)
    fig.tight_layout()
    path = out_dir / "wigner_maps.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
