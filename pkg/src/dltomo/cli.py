"""Command-line pipeline: simulate, extract, bin, reconstruct, report.

A run directory accumulates the artifacts of each stage::

    trace.npy/.json      main acquisition burst (csv selectable)
    vacuum.npy/.json     blocked-input burst for calibration
    reference.npy/.json  no-cell burst for the input-state reference
    truth.csv            per-scan ground truth sidecar
    config.json          resolved run configuration echo
    records.csv          calibrated quadrature records
    bins.csv             bin manifest
    report_bin*.json     per (bin, case) reconstruction reports
    rho_bin*.json        density matrices
    wigner_bin*.csv      Wigner grids
    *.csv / *.png        figure tables and renders (report stage)

Every command is deterministic for a given seed; exit codes are 0 on
success, 1 on runtime failure, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import figures
from . import io as dio
from .atomic import AtomicParams, FieldSet, load_params
from .errors import ConfigError, FileFormatError, ParameterError, PipelineError
from .extract import (
    PhaseBin,
    bin_records,
    calibrate_vacuum,
    degenerate_count,
    split_shots,
    to_quadrature_records,
)
from .synth import (
    CASES,
    NoiseConfig,
    PulseSchedule,
    ScanConfig,
    synth_burst,
    vacuum_burst,
)
from .tomography import QuadratureDataset, build_report

logger = logging.getLogger("dltomo")

PAPER_SCALE_RATE = 1e8

DEFAULT_FIELDS = dict(Ep=3.3, Es=6.094, Ec1=0.1, Ec2=0.032968)


@dataclass
class RunConfig:
    """Everything one pipeline run needs, JSON-serializable."""

    atomic: str | dict = "paper-default"
    fields: dict = field(default_factory=lambda: dict(DEFAULT_FIELDS))
    schedule: dict = field(default_factory=dict)
    scan: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    n_bins: int = 10
    cutoff: int = 24
    steps: int = 1000
    bootstrap: int = 10
    seed: int | None = None
    trace_format: str = "npy"

    def resolve(self):
        params = (
            load_params(self.atomic)
            if isinstance(self.atomic, str)
            else AtomicParams(**self.atomic)
        )
        try:
            fields = FieldSet(**self.fields)
            schedule = PulseSchedule(**{
                **self.schedule,
                **(
                    {"case_order": tuple(self.schedule["case_order"])}
                    if "case_order" in self.schedule
                    else {}
                ),
            })
            scan = ScanConfig(**self.scan)
            noise = NoiseConfig(**self.noise)
        except TypeError as exc:
            raise ConfigError(f"bad run configuration: {exc}") from exc
        if self.n_bins < 1 or self.cutoff < 2 or self.steps < 1 or self.bootstrap < 0:
            raise ConfigError("n_bins, cutoff, steps, bootstrap out of range")
        if self.trace_format not in ("npy", "csv"):
            raise ConfigError(f"trace_format must be npy or csv, got {self.trace_format!r}")
        return params, fields, schedule, scan, noise

    def to_json(self) -> str:
        return dio.dump_json(asdict(self))


_RUN_KEYS = set(RunConfig.__dataclass_fields__)
_ATOMIC_KEYS = set(AtomicParams.__dataclass_fields__)


def load_run_config(path_or_name: str | None) -> RunConfig:
    """Load a run config from a JSON file or bundled name.

    A JSON object whose keys are all AtomicParams fields is treated as a
    bare atomic preset and wrapped in the default run configuration.
    """
    if path_or_name is None:
        return RunConfig()
    path = Path(path_or_name)
    if not path.exists():
        from .atomic import _preset_dirs

        for base in _preset_dirs():
            candidate = base / f"{path_or_name}.json"
            if candidate.exists():
                path = candidate
                break
        else:
            raise ConfigError(f"config file or bundled name not found: {path_or_name!r}")
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if data and set(data) <= _ATOMIC_KEYS:
        return RunConfig(atomic=data)
    unknown = set(data) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return RunConfig(**data)


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    for name in ("n_bins", "cutoff", "steps", "bootstrap"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    if getattr(args, "trace_format", None):
        config.trace_format = args.trace_format
    if getattr(args, "paper_scale", False):
        config.scan = {**config.scan, "sample_rate": PAPER_SCALE_RATE}
    return config


def _child_seeds(seed: int, n: int = 4) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    config = _apply_overrides(load_run_config(args.config), args)
    if config.seed is None:
        raise ConfigError("simulate requires a seed (--seed or config key)")
    params, fields, schedule, scan, noise = config.resolve()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    seed_trace, seed_vacuum, seed_ref, _ = _child_seeds(config.seed)
    trace = synth_burst(params, fields, schedule, scan, noise, seed_trace, config.steps)
    dio.write_trace(trace, out / "trace", fmt=config.trace_format)
    dio.write_truth(trace.truth, out / "truth.csv")

    vac = vacuum_burst(schedule, scan, noise, seed_vacuum)
    dio.write_trace(vac, out / "vacuum", fmt=config.trace_format)

    # No-cell reference: zero optical depth passes the probe through intact.
    ref_params = replace(params, alpha_p=0.0, alpha_s=0.0)
    ref = synth_burst(ref_params, fields, schedule, scan, noise, seed_ref, steps=1)
    dio.write_trace(ref, out / "reference", fmt=config.trace_format)
    dio.write_truth(ref.truth, out / "reference_truth.csv")

    dio.atomic_write_text(out / "config.json", config.to_json())
    logger.info(
        "event=simulate out=%s samples=%d scans=%d sample_rate=%g seed=%d",
        out, len(trace.samples), len(trace.truth), scan.sample_rate, config.seed,
    )
    return 0


def _load_scale(args, trace, schedule, scan) -> float:
    if getattr(args, "scale", None) is not None:
        return args.scale
    vacuum_path = getattr(args, "vacuum", None)
    if vacuum_path is None:
        sibling = Path(args.trace).parent / ("vacuum" + Path(args.trace).suffix)
        if sibling.exists():
            vacuum_path = sibling
        else:
            raise ConfigError(
                "no calibration source: pass --scale or --vacuum, or keep "
                "vacuum.* next to the trace"
            )
    vac = dio.read_trace(vacuum_path)
    return calibrate_vacuum(vac, schedule, scan)


def cmd_extract(args) -> int:
    trace = dio.read_trace(args.trace)
    schedule, scan = trace.schedule, trace.scan
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scale = _load_scale(args, trace, schedule, scan)
    shots = split_shots(trace)
    records = to_quadrature_records(shots, schedule, scan, scale)
    dio.write_records(records, out / "records.csv")
    n_bins = args.n_bins or 10
    bins = bin_records(records, n_bins)
    dio.write_manifest(bins, out / "bins.csv")
    excluded = degenerate_count(records)
    logger.info(
        "event=extract shots=%d records=%d degenerate_excluded=%d scale=%.6g bins=%d",
        len(shots), len(records), excluded, scale, n_bins,
    )
    if excluded == len(records):
        logger.warning("event=extract all records degenerate (vacuum-level trace?)")
    return 0


def cmd_bin(args) -> int:
    records = dio.read_records(args.records)
    bins = bin_records(records, args.n_bins or 10)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dio.write_manifest(bins, out / "bins.csv")
    logger.info(
        "event=bin records=%d bins=%d", len(records), args.n_bins or 10
    )
    return 0


def _dataset_for(
    bin_: PhaseBin, case: str, rotation_key: str
) -> tuple[QuadratureDataset, float]:
    """Pool a bin's case records and its mean alignment phase."""
    thetas, xs, rots = [], [], []
    for rec in bin_.records[case]:
        thetas.append(rec.thetas)
        xs.append(rec.xs)
        rots.append(getattr(rec, rotation_key))
    if not thetas:
        return QuadratureDataset(np.array([]), np.array([]), bin_.index, case), 0.0
    rotation = float(
        np.angle(np.mean(np.exp(1j * np.asarray(rots))))
    )  # circular mean of the per-scan case phase
    return (
        QuadratureDataset(np.concatenate(thetas), np.concatenate(xs), bin_.index, case),
        rotation,
    )


_ROTATION_KEY = {"probe": None, "dl": "dphi_dl", "fwm": "dphi_fwm"}


def _reconstruct_task(task):
    """Worker for one (bin, case) reconstruction; must be picklable."""
    (dataset, rotation, cutoff, bootstrap, seed, ref_elems, wigner_span, bin_range) = task
    from .tomography import DensityMatrix

    reference = DensityMatrix(cutoff, ref_elems) if ref_elems is not None else None
    axes = np.arange(-wigner_span, wigner_span + 1e-9, 0.125)
    report, grid = build_report(
        dataset,
        cutoff=cutoff,
        reference=reference,
        reference_rotation=rotation,
        bootstrap_resamples=bootstrap,
        bootstrap_seed=seed,
        wigner_axes=(axes, axes),
    )
    report.bin_range = bin_range
    return report, grid


def cmd_reconstruct(args) -> int:
    records = dio.read_records(args.records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cutoff = args.cutoff or 24
    n_bins = args.n_bins or 10
    bootstrap = args.bootstrap if args.bootstrap is not None else 10
    seed = args.seed if args.seed is not None else 0
    bins = bin_records(records, n_bins)
    selection = (
        {int(k) for k in args.bins.split(",")} if getattr(args, "bins", None) else None
    )

    reference = None
    if getattr(args, "reference_records", None):
        ref_records = dio.read_records(args.reference_records)
        thetas = np.concatenate(
            [r.thetas for r in ref_records if r.case == "probe" and not r.degenerate]
        )
        xs = np.concatenate(
            [r.xs for r in ref_records if r.case == "probe" and not r.degenerate]
        )
        ref_data = QuadratureDataset(thetas, xs, None, "probe")
        ref_result, _ = _reconstruct_task(
            (ref_data, 0.0, cutoff, 0, seed, None, _wigner_span(cutoff), None)
        )
        reference = ref_result.rho
        dio.write_report(ref_result, out / "report_reference.json")
        dio.write_density_matrix(reference, out / "rho_reference.json")
        logger.info(
            "event=reconstruct_reference points=%d mean_photon=%.4f",
            len(ref_data), ref_result.mean_photon,
        )

    tasks = []
    labels = []
    for b in bins:
        if selection is not None and b.index not in selection:
            continue
        for case in CASES:
            if b.count(case) == 0:
                logger.warning(
                    "event=reconstruct skip bin=%d case=%s reason=empty", b.index, case
                )
                continue
            rotation_key = _ROTATION_KEY[case]
            if rotation_key is None:
                dataset, rotation = _dataset_for(b, case, "dphi_dl")[0], 0.0
            else:
                dataset, rotation = _dataset_for(b, case, rotation_key)
            ref_elems = reference.elems if reference is not None else None
            tasks.append(
                (dataset, rotation, cutoff, bootstrap, seed, ref_elems,
                 _wigner_span(cutoff), (b.lo, b.hi))
            )
            labels.append((b.index, case))

    jobs = max(1, args.jobs or 1)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_reconstruct_task, tasks))
    else:
        results = [_reconstruct_task(t) for t in tasks]

    for (bin_index, case), (report, grid) in zip(labels, results):
        stem = f"bin{bin_index}_{case}"
        dio.write_report(report, out / f"report_{stem}.json")
        dio.write_density_matrix(report.rho, out / f"rho_{stem}.json")
        if grid is not None:
            dio.write_wigner(grid, out / f"wigner_{stem}.csv")
        logger.info(
            "event=reconstruct bin=%d case=%s points=%d iters=%d converged=%s "
            "mean_photon=%.4f overlap=%.4f",
            bin_index, case, report.n_points, report.iterations, report.converged,
            report.mean_photon, report.coherent_overlap,
        )
    return 0


def _wigner_span(cutoff: int) -> float:
    # covers the brightest representable states with room for tails
    return float(math.ceil(2.0 * math.sqrt(cutoff) + 2.0))


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)

    report_rows = []
    for path in sorted(run_dir.glob("report_bin*.json")):
        report_rows.append(dio.read_report(path))
    if not report_rows:
        raise ConfigError(f"no reconstruction reports under {run_dir}")

    records = dio.read_records(run_dir / "records.csv")
    bins = bin_records(records, args.n_bins or _infer_n_bins(run_dir))

    bundle = figures.FigureBundle()
    bundle.tables.update(figures.phase_scatter_tables(records, out))
    bundle.tables["bin_quadratures"] = figures.bin_quadrature_table(bins, out)
    bundle.tables["wigner_max_locus"] = figures.locus_table(report_rows, out)
    bundle.tables.update(figures.metric_tables(report_rows, out))

    input_nbar = None
    ref_path = run_dir / "report_reference.json"
    if ref_path.exists():
        input_nbar = dio.read_report(ref_path)["mean_photon"]["value"]

    bundle.images["phase_scatter"] = figures.render_phase_scatter(out)
    bundle.images["bin_quadratures"] = figures.render_bin_quadratures(out)
    bundle.images["wigner_max_locus"] = figures.render_locus(out)
    bundle.images.update(figures.render_metric_curves(out, input_nbar))
    wigner_files = {}
    for path in run_dir.glob("wigner_bin*.csv"):
        stem = path.stem.replace("wigner_bin", "")
        idx, case = stem.split("_", 1)
        wigner_files[(int(idx), case)] = path
    maps = figures.render_wigner_maps(out, wigner_files)
    if maps:
        bundle.images["wigner_maps"] = maps
    logger.info(
        "event=report tables=%d images=%d out=%s",
        len(bundle.tables), len(bundle.images), out,
    )
    return 0


def _infer_n_bins(run_dir: Path) -> int:
    manifest = run_dir / "bins.csv"
    if manifest.exists():
        return len(dio.read_manifest(manifest))
    return 10


def cmd_pipeline(args) -> int:
    out = Path(args.out)
    config = _apply_overrides(load_run_config(args.config), args)
    cmd_simulate(args)

    suffix = ".csv" if config.trace_format == "csv" else ".npy"
    extract_args = argparse.Namespace(
        trace=str(out / ("trace" + suffix)), out=out, scale=None, vacuum=None,
        n_bins=config.n_bins,
    )
    cmd_extract(extract_args)

    ref_extract = argparse.Namespace(
        trace=str(out / ("reference" + suffix)),
        out=out / "reference_run", scale=None,
        vacuum=str(out / ("vacuum" + suffix)), n_bins=config.n_bins,
    )
    cmd_extract(ref_extract)

    recon_args = argparse.Namespace(
        records=out / "records.csv", out=out, cutoff=config.cutoff,
        n_bins=config.n_bins, bootstrap=config.bootstrap, seed=config.seed,
        jobs=args.jobs, bins=None,
        reference_records=out / "reference_run" / "records.csv",
    )
    cmd_reconstruct(recon_args)

    report_args = argparse.Namespace(run=out, out=out, n_bins=config.n_bins)
    cmd_report(report_args)
    logger.info("event=pipeline done out=%s", out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dltomo",
        description="Simulate and analyze double-lambda homodyne experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_seed=False):
        p.add_argument("--config", help="run config JSON path or bundled name")
        p.add_argument("--seed", type=int, default=None, required=False)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--n-bins", dest="n_bins", type=int, default=None)
        p.add_argument("--cutoff", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)

    p_sim = sub.add_parser("simulate", help="synthesize trace, vacuum, reference bursts")
    common(p_sim)
    p_sim.add_argument("--paper-scale", action="store_true",
                       help="use the 100 MHz acquisition rate")
    p_sim.add_argument("--trace-format", choices=("npy", "csv"), default=None)
    p_sim.add_argument("--steps", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_ext = sub.add_parser("extract", help="split shots, fit phases, write records")
    p_ext.add_argument("--trace", required=True)
    p_ext.add_argument("--out", required=True)
    p_ext.add_argument("--vacuum", default=None, help="vacuum trace for calibration")
    p_ext.add_argument("--scale", type=float, default=None,
                       help="calibration scale override (quadrature units/volt)")
    p_ext.add_argument("--n-bins", dest="n_bins", type=int, default=None)
    p_ext.set_defaults(func=cmd_extract)

    p_bin = sub.add_parser("bin", help="rebin an existing records file")
    p_bin.add_argument("--records", required=True)
    p_bin.add_argument("--out", required=True)
    p_bin.add_argument("--n-bins", dest="n_bins", type=int, default=None)
    p_bin.set_defaults(func=cmd_bin)

    p_rec = sub.add_parser("reconstruct", help="per-bin maximum-likelihood states")
    p_rec.add_argument("--records", required=True)
    p_rec.add_argument("--out", required=True)
    p_rec.add_argument("--reference-records", dest="reference_records", default=None)
    p_rec.add_argument("--cutoff", type=int, default=None)
    p_rec.add_argument("--n-bins", dest="n_bins", type=int, default=None)
    p_rec.add_argument("--bootstrap", type=int, default=None,
                       help="bootstrap resamples per state (default 10)")
    p_rec.add_argument("--bins", default=None, help="comma-separated bin selection")
    p_rec.add_argument("--seed", type=int, default=None)
    p_rec.add_argument("--jobs", type=int, default=1)
    p_rec.set_defaults(func=cmd_reconstruct)

    p_rep = sub.add_parser("report", help="figure tables and renders from a run dir")
    p_rep.add_argument("--run", required=True)
    p_rep.add_argument("--out", default=None)
    p_rep.add_argument("--n-bins", dest="n_bins", type=int, default=None)
    p_rep.set_defaults(func=cmd_report)

    p_all = sub.add_parser("pipeline", help="simulate through report in one call")
    common(p_all)
    p_all.add_argument("--paper-scale", action="store_true")
    p_all.add_argument("--trace-format", choices=("npy", "csv"), default=None)
    p_all.add_argument("--steps", type=int, default=None)
    p_all.add_argument("--bootstrap", type=int, default=None)
    p_all.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname).1s %(name)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError, FileFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
