"""File formats for every pipeline artifact.

Traces are written either as a binary pair (``<stem>.npy`` samples plus
``<stem>.json`` metadata, byte-deterministic for equal seeds) or as a CSV
whose ``#``-prefixed header lines carry the acquisition settings as
key=value pairs followed by one ``time,voltage`` row per sample.  All other
artifacts are plain CSV or JSON.  Writes go through a temp-file rename so
partially written files never appear under their final names.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .extract import PhaseBin, QuadratureRecord, SinusoidFit
from .synth import GroundTruth, HomodyneTrace, PulseSchedule, ScanConfig
from .tomography import DensityMatrix, ReconstructionReport, WignerGrid

TRUTH_COLUMNS = "scan_id,phi_p,dphi_fwm,dphi_dl,E_E,E_F"
RECORD_COLUMNS = "scan_id,case,theta,x,dphi_fwm,dphi_dl,degenerate"
MANIFEST_COLUMNS = "bin_index,lo,hi,count_probe,count_dl,count_fwm"


def atomic_write_text(path: Path, text: str) -> None:
    """Write text through a sibling temp file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _trace_meta(trace: HomodyneTrace) -> dict:
    return {
        "sample_rate": trace.sample_rate,
        "seed": trace.seed,
        "schedule": {
            "pulse_len": trace.schedule.pulse_len,
            "gap": trace.schedule.gap,
            "cycle": trace.schedule.cycle,
            "case_order": list(trace.schedule.case_order),
        },
        "scan": {
            "scan_freq": trace.scan.scan_freq,
            "burst_len": trace.scan.burst_len,
            "sample_rate": trace.scan.sample_rate,
            "lo_amplitude": trace.scan.lo_amplitude,
        },
    }


def _trace_from_meta(meta: dict, samples: np.ndarray) -> HomodyneTrace:
    schedule = PulseSchedule(
        pulse_len=meta["schedule"]["pulse_len"],
        gap=meta["schedule"]["gap"],
        cycle=meta["schedule"]["cycle"],
        case_order=tuple(meta["schedule"]["case_order"]),
    )
    scan = ScanConfig(
        scan_freq=meta["scan"]["scan_freq"],
        burst_len=meta["scan"]["burst_len"],
        sample_rate=meta["scan"]["sample_rate"],
        lo_amplitude=meta["scan"]["lo_amplitude"],
    )
    return HomodyneTrace(
        samples=samples,
        sample_rate=meta["sample_rate"],
        schedule=schedule,
        scan=scan,
        seed=meta["seed"],
        truth=None,
    )


def write_trace(trace: HomodyneTrace, path: str | Path, fmt: str = "npy") -> Path:
    """Write a trace as ``npy`` (binary pair) or ``csv``; returns the path."""
    path = Path(path)
    if fmt == "npy":
        buf = _npy_bytes(trace.samples)
        atomic_write_bytes(path.with_suffix(".npy"), buf)
        atomic_write_text(path.with_suffix(".json"), dump_json(_trace_meta(trace)))
        return path.with_suffix(".npy")
    if fmt == "csv":
        meta = _trace_meta(trace)
        lines = []
        flat = {
            "sample_rate": meta["sample_rate"],
            "seed": meta["seed"],
            **{f"schedule.{k}": v for k, v in meta["schedule"].items()},
            **{f"scan.{k}": v for k, v in meta["scan"].items()},
        }
        for key, value in flat.items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"# {key}={value}")
        t = np.arange(len(trace.samples)) / trace.sample_rate
        body = "\n".join(
            f"{ti:.9e},{vi:.9e}" for ti, vi in zip(t, trace.samples)
        )
        atomic_write_text(path.with_suffix(".csv"), "\n".join(lines) + "\n" + body + "\n")
        return path.with_suffix(".csv")
    raise FileFormatError(f"unknown trace format {fmt!r}")


def _npy_bytes(arr: np.ndarray) -> bytes:
    import io as _io

    buf = _io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def read_trace(path: str | Path) -> HomodyneTrace:
    """Read a trace written by :func:`write_trace` (either format)."""
    path = Path(path)
    if path.suffix == ".npy":
        meta_path = path.with_suffix(".json")
        if not meta_path.exists():
            raise FileFormatError(f"missing trace metadata file {meta_path}")
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        samples = np.load(path)
        return _trace_from_meta(meta, samples)
    if path.suffix == ".csv":
        return _read_trace_csv(path)
    raise FileFormatError(f"unknown trace extension {path.suffix!r}")


def _read_trace_csv(path: Path) -> HomodyneTrace:
    header: dict[str, str] = {}
    samples: list[float] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" not in body:
                    raise FileFormatError(
                        f"{path}:{lineno}: header line lacks key=value"
                    )
                key, value = body.split("=", 1)
                header[key.strip()] = value.strip()
            else:
                parts = line.split(",")
                if len(parts) != 2:
                    raise FileFormatError(
                        f"{path}:{lineno}: expected 'time,voltage', got {line!r}"
                    )
                try:
                    samples.append(float(parts[1]))
                except ValueError as exc:
                    raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
    required = {
        "sample_rate", "seed",
        "schedule.pulse_len", "schedule.gap", "schedule.cycle", "schedule.case_order",
        "scan.scan_freq", "scan.burst_len", "scan.sample_rate", "scan.lo_amplitude",
    }
    missing = required - set(header)
    if missing:
        raise FileFormatError(f"{path}: trace header missing keys {sorted(missing)}")
    meta = {
        "sample_rate": float(header["sample_rate"]),
        "seed": int(header["seed"]),
        "schedule": {
            "pulse_len": float(header["schedule.pulse_len"]),
            "gap": float(header["schedule.gap"]),
            "cycle": float(header["schedule.cycle"]),
            "case_order": header["schedule.case_order"].split(","),
        },
        "scan": {
            "scan_freq": float(header["scan.scan_freq"]),
            "burst_len": float(header["scan.burst_len"]),
            "sample_rate": float(header["scan.sample_rate"]),
            "lo_amplitude": float(header["scan.lo_amplitude"]),
        },
    }
    return _trace_from_meta(meta, np.asarray(samples))


def write_truth(truth: GroundTruth, path: str | Path) -> Path:
    path = Path(path)
    rows = [TRUTH_COLUMNS]
    for i in range(len(truth)):
        rows.append(
            f"{truth.scan_id[i]},{truth.phi_p[i]:.12e},{truth.dphi_fwm[i]:.12e},"
            f"{truth.dphi_dl[i]:.12e},{truth.e_probe[i]:.12e},{truth.e_fwm[i]:.12e}"
        )
    atomic_write_text(path, "\n".join(rows) + "\n")
    return path


def read_truth(path: str | Path) -> GroundTruth:
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    e_probe = data["E_E"]
    e_fwm = data["E_F"]
    dphi = data["dphi_fwm"]
    ratio = np.divide(e_fwm, e_probe, out=np.zeros_like(e_fwm), where=e_probe > 0)
    e_dl = e_probe * np.sqrt(1 + ratio**2 + 2 * ratio * np.cos(dphi))
    return GroundTruth(
        scan_id=data["scan_id"].astype(int),
        phi_p=data["phi_p"],
        dphi_fwm=dphi,
        dphi_dl=data["dphi_dl"],
        e_probe=e_probe,
        e_fwm=e_fwm,
        e_dl=e_dl,
    )


def write_records(records: list[QuadratureRecord], path: str | Path) -> Path:
    path = Path(path)
    rows = [RECORD_COLUMNS]
    for rec in records:
        flag = int(rec.degenerate)
        for theta, x in zip(rec.thetas, rec.xs):
            rows.append(
                f"{rec.scan_id},{rec.case},{theta:.9e},{x:.9e},"
                f"{rec.dphi_fwm:.9e},{rec.dphi_dl:.9e},{flag}"
            )
    atomic_write_text(path, "\n".join(rows) + "\n")
    return path


def read_records(path: str | Path) -> list[QuadratureRecord]:
    """Rebuild quadrature records from CSV, grouping rows by scan and case."""
    groups: dict[tuple[int, str], dict] = {}
    order: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != RECORD_COLUMNS:
            raise FileFormatError(f"{path}:1: expected header {RECORD_COLUMNS!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise FileFormatError(f"{path}:{lineno}: expected 7 columns")
            try:
                key = (int(parts[0]), parts[1])
                theta, x = float(parts[2]), float(parts[3])
                dphi_fwm, dphi_dl = float(parts[4]), float(parts[5])
                degenerate = bool(int(parts[6]))
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
            if key not in groups:
                groups[key] = {
                    "thetas": [], "xs": [],
                    "dphi_fwm": dphi_fwm, "dphi_dl": dphi_dl,
                    "degenerate": degenerate,
                }
                order.append(key)
            groups[key]["thetas"].append(theta)
            groups[key]["xs"].append(x)
    records = []
    for key in order:
        g = groups[key]
        placeholder = SinusoidFit(
            amplitude=0.0, phase=0.0, offset=0.0, residual_rms=0.0,
            degenerate=g["degenerate"],
        )
        records.append(
            QuadratureRecord(
                scan_id=key[0],
                case=key[1],
                thetas=np.asarray(g["thetas"]),
                xs=np.asarray(g["xs"]),
                fit=placeholder,
                dphi_fwm=g["dphi_fwm"],
                dphi_dl=g["dphi_dl"],
                degenerate=g["degenerate"],
            )
        )
    return records


def write_manifest(bins: list[PhaseBin], path: str | Path) -> Path:
    path = Path(path)
    rows = [MANIFEST_COLUMNS]
    for b in bins:
        rows.append(
            f"{b.index},{b.lo:.9e},{b.hi:.9e},"
            f"{b.count('probe')},{b.count('dl')},{b.count('fwm')}"
        )
    atomic_write_text(path, "\n".join(rows) + "\n")
    return path


def read_manifest(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != MANIFEST_COLUMNS:
            raise FileFormatError(f"{path}:1: expected header {MANIFEST_COLUMNS!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise FileFormatError(f"{path}:{lineno}: expected 6 columns")
            out.append(
                {
                    "bin_index": int(parts[0]),
                    "lo": float(parts[1]),
                    "hi": float(parts[2]),
                    "count_probe": int(parts[3]),
                    "count_dl": int(parts[4]),
                    "count_fwm": int(parts[5]),
                }
            )
    return out


def write_density_matrix(rho: DensityMatrix, path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "cutoff": rho.cutoff,
        "real": rho.elems.real.tolist(),
        "imag": rho.elems.imag.tolist(),
    }
    atomic_write_text(path, dump_json(payload))
    return path


def read_density_matrix(path: str | Path) -> DensityMatrix:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        elems = np.asarray(payload["real"]) + 1j * np.asarray(payload["imag"])
        return DensityMatrix(int(payload["cutoff"]), elems)
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"{path}: not a density-matrix file ({exc})") from exc


def write_wigner(grid: WignerGrid, path: str | Path) -> Path:
    path = Path(path)
    rows = ["x,p,w"]
    for i, x in enumerate(grid.x_axis):
        for j, p in enumerate(grid.p_axis):
            rows.append(f"{x:.9e},{p:.9e},{grid.values[i, j]:.9e}")
    atomic_write_text(path, "\n".join(rows) + "\n")
    return path


def read_wigner(path: str | Path) -> WignerGrid:
    data = np.genfromtxt(path, delimiter=",", names=True)
    x_axis = np.unique(data["x"])
    p_axis = np.unique(data["p"])
    values = data["w"].reshape(len(x_axis), len(p_axis))
    return WignerGrid(x_axis=x_axis, p_axis=p_axis, values=values)


def report_to_dict(report: ReconstructionReport) -> dict:
    def pair(value, err):
        return {"value": value, "err": err}

    payload = {
        "case": report.case,
        "bin_index": report.source_bin,
        "bin_range": list(report.bin_range) if report.bin_range else None,
        "n_points": report.n_points,
        "log_likelihood": report.log_likelihood,
        "iterations": report.iterations,
        "converged": report.converged,
        "purity": pair(report.purity, report.purity_err),
        "mean_photon": pair(report.mean_photon, report.mean_photon_err),
        "coherent_overlap": pair(report.coherent_overlap, report.coherent_overlap_err),
        "wigner_max": (
            {"x": report.wigner_max_location[0], "p": report.wigner_max_location[1]}
            if report.wigner_max_location
            else None
        ),
    }
    if report.fidelity_vs_input is not None:
        payload["fidelity_vs_input"] = pair(
            report.fidelity_vs_input, report.fidelity_vs_input_err
        )
    return payload


def write_report(report: ReconstructionReport, path: str | Path) -> Path:
    path = Path(path)
    atomic_write_text(path, dump_json(report_to_dict(report)))
    return path


def read_report(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
