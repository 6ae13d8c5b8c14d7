"""Command-line pipeline driver.

Subcommands: ``phantom gen``, ``render``, ``dataset gen``, ``dataset folds``,
``eval seg``, ``eval psi``, ``report plots``. Each prints a single JSON
summary line to stdout on success. Errors go to stderr as single-line JSON
``{"error": ..., "kind": "validation" | "runtime"}``; the exit code is 0 on
success, 1 for validation problems (bad flags, missing inputs, schema
mismatch) and 2 for failures during the actual work.

Everything is deterministic for a fixed seed: rendering threads (``--threads``,
0 = all cores) never change output bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import dataset as ds
from . import metrics
from .geometry import RigidTransform, TransformBounds, compute_psi, psi_of_posed_patient
from .phantom import PhantomSpec, generate_phantom, phantom_seed
from .projector import CameraModel, RenderSettings, project_mask, render_drr, set_render_threads
from .volume_io import FormatError, read_image, read_landmarks, read_volume, write_image


class _ParseError(Exception):
    pass


class CliValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ParseError(message)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": message, "kind": kind}), file=sys.stderr)


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, separators=(",", ":")))


def _load_camera(path: str | None) -> CameraModel:
    if path is None:
        return CameraModel()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"camera file not found: {p}")
    obj = json.loads(p.read_text(encoding="ascii"))
    known = {
        "source_to_detector_mm",
        "source_to_isocenter_mm",
        "detector_pixels",
        "detector_pixel_mm",
    }
    unknown = set(obj) - known
    if unknown:
        raise CliValidationError(f"{p}: unknown camera keys {sorted(unknown)}")
    kwargs = dict(obj)
    for key in ("detector_pixels", "detector_pixel_mm"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return CameraModel(**kwargs)


def _settings(args) -> RenderSettings:
    return RenderSettings(
        step_mm=args.step_mm,
        mask_threshold=args.mask_threshold,
        normalize=not args.no_normalize,
    )


def _add_render_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--camera-json", help="JSON file overriding camera defaults")
    p.add_argument("--step-mm", type=float, default=None, help="ray-march step (default: half the smallest voxel spacing)")
    p.add_argument("--mask-threshold", type=float, default=0.5)
    p.add_argument("--no-normalize", action="store_true", help="keep raw line integrals")


def _build_parser() -> _Parser:
    parser = _Parser(prog="pelvidrr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="group", parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=0, help="render threads; 0 = all cores")

    phantom = sub.add_parser("phantom")
    phantom_sub = phantom.add_subparsers(dest="cmd", parser_class=_Parser)
    pg = phantom_sub.add_parser("gen", help="generate synthetic pelvis patients")
    common(pg)
    pg.add_argument("--count", type=int, required=True)
    pg.add_argument("--dims", type=int, nargs=3, default=[128, 128, 128], metavar=("NX", "NY", "NZ"))
    pg.add_argument("--spacing", type=float, nargs=3, default=[2.0, 2.0, 2.0], metavar=("SX", "SY", "SZ"))
    pg.add_argument("--jitter", type=float, default=0.15)
    pg.add_argument("--out", required=True, help="dataset root directory")
    pg.set_defaults(handler=_cmd_phantom_gen)

    render = sub.add_parser("render", help="render one posed DRR (+ mask)")
    common(render)
    render.add_argument("--volume", required=True)
    render.add_argument("--mask")
    render.add_argument("--landmarks")
    for flag in ("--rx", "--ry", "--rz"):
        render.add_argument(flag, type=float, default=0.0, help="rotation, degrees")
    for flag in ("--tx", "--ty", "--tz"):
        render.add_argument(flag, type=float, default=0.0, help="translation, mm")
    _add_render_flags(render)
    render.add_argument("--out", required=True, help="output directory")
    render.set_defaults(handler=_cmd_render)

    data = sub.add_parser("dataset")
    data_sub = data.add_subparsers(dest="cmd", parser_class=_Parser)
    dg = data_sub.add_parser("gen", help="generate a manifest of posed DRR/mask pairs")
    common(dg)
    dg.add_argument("--preset", choices=sorted(ds.PRESETS), required=True)
    dg.add_argument("--patients-dir", required=True)
    dg.add_argument("--n-per-patient", type=int, required=True)
    dg.add_argument("--bounds", type=float, nargs=4, metavar=("RX", "RY", "RZ", "T"),
                    help="override preset pose bounds")
    _add_render_flags(dg)
    dg.add_argument("--out", required=True, help="dataset root directory")
    dg.set_defaults(handler=_cmd_dataset_gen)

    df = data_sub.add_parser("folds", help="assign patient-level cross-validation folds")
    common(df)
    df.add_argument("--manifest", required=True)
    df.add_argument("--k", type=int, required=True)
    df.add_argument("--out", help="output manifest path (default: rewrite in place)")
    df.set_defaults(handler=_cmd_dataset_folds)

    ev = sub.add_parser("eval")
    ev_sub = ev.add_subparsers(dest="cmd", parser_class=_Parser)
    es = ev_sub.add_parser("seg", help="Dice-score predicted masks against a manifest")
    common(es)
    es.add_argument("--pred-dir", required=True, help="directory of <sample_id>.pgm predictions")
    es.add_argument("--manifest", required=True)
    es.add_argument("--out", required=True, help="report JSON path")
    es.set_defaults(handler=_cmd_eval_seg)

    ep = ev_sub.add_parser("psi", help="score PSI predictions against a manifest")
    common(ep)
    ep.add_argument("--pred-csv", required=True, help="CSV with header sample_id,psi_pred_deg")
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--out", required=True, help="report JSON path")
    ep.set_defaults(handler=_cmd_eval_psi)

    rep = sub.add_parser("report")
    rep_sub = rep.add_subparsers(dest="cmd", parser_class=_Parser)
    rp = rep_sub.add_parser("plots", help="emit CSV/SVG plot data from a report")
    common(rp)
    rp.add_argument("--report-json", required=True)
    rp.add_argument("--out", required=True, help="output directory")
    rp.set_defaults(handler=_cmd_report_plots)

    return parser


# ---------------------------------------------------------------------------
# Handlers


def _cmd_phantom_gen(args) -> None:
    if args.count < 1:
        raise CliValidationError(f"--count must be >= 1, got {args.count}")
    out = Path(args.out)
    patients = []
    for i in range(args.count):
        spec = PhantomSpec(
            seed=phantom_seed(args.seed, i),
            dims=tuple(args.dims),
            spacing_mm=tuple(args.spacing),
            jitter=args.jitter,
        )
        volume, mask, landmarks = generate_phantom(spec)
        patient = ds.Patient(f"phantom_{i:03d}", volume, mask, landmarks)
        ds.write_patient(out, patient)
        patients.append(patient.patient_id)
    _print_json({"patients": patients, "out": str(out)})


def _cmd_render(args) -> None:
    volume = read_volume(args.volume)
    cam = _load_camera(args.camera_json)
    settings = _settings(args)
    set_render_threads(args.threads)
    t = RigidTransform(
        euler_deg=(args.rx, args.ry, args.rz),
        translation_mm=(args.tx, args.ty, args.tz),
    ).with_pivot(volume.center)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image(render_drr(volume, t, cam, settings), out / "drr.f32")
    info = {
        "euler_deg": list(t.euler_deg),
        "translation_mm": list(t.translation_mm),
        "pivot_mm": [float(v) for v in t.pivot_mm],
    }
    if args.mask:
        mask = read_volume(args.mask)
        write_image(project_mask(mask, t, cam, settings), out / "mask.pgm")
        info["mask"] = "mask.pgm"
    if args.landmarks:
        landmarks = read_landmarks(args.landmarks)
        info["psi_deg"] = psi_of_posed_patient(landmarks, t)
        info["psi_neutral_deg"] = compute_psi(landmarks)
    (out / "render_info.json").write_text(
        json.dumps(info, sort_keys=True, separators=(",", ":")) + "\n", encoding="ascii"
    )
    _print_json(info)


def _cmd_dataset_gen(args) -> None:
    if args.n_per_patient < 1:
        raise CliValidationError(f"--n-per-patient must be >= 1, got {args.n_per_patient}")
    task, bounds = ds.PRESETS[args.preset]
    if args.bounds is not None:
        rx, ry, rz, tr = args.bounds
        bounds = TransformBounds(rot_x_deg=rx, rot_y_deg=ry, rot_z_deg=rz, trans_mm=tr)
    patients = ds.load_patients(args.patients_dir)
    cam = _load_camera(args.camera_json)
    settings = _settings(args)
    set_render_threads(args.threads)
    manifest = ds.gen_dataset(
        patients,
        n_per_patient=args.n_per_patient,
        bounds=bounds,
        cam=cam,
        settings=settings,
        global_seed=args.seed,
        out_dir=args.out,
        task=task,
    )
    _print_json({
        "manifest": str(Path(args.out) / "manifest.jsonl"),
        "task": task,
        "patients": len(patients),
        "records": len(manifest.records),
    })


def _cmd_dataset_folds(args) -> None:
    manifest = ds.read_manifest(args.manifest)
    folded = ds.assign_folds(manifest, k=args.k, seed=args.seed)
    out = args.out or args.manifest
    ds.write_manifest(folded, out)
    counts = {}
    for pid in folded.patient_ids():
        fold = next(r.fold for r in folded.records if r.patient_id == pid)
        counts[str(fold)] = counts.get(str(fold), 0) + 1
    _print_json({"manifest": str(out), "k": args.k, "patients_per_fold": counts})


def _cmd_eval_seg(args) -> None:
    manifest = ds.read_manifest(args.manifest)
    root = Path(args.manifest).parent
    by_id = {r.sample_id: r for r in manifest.records}
    pred_dir = Path(args.pred_dir)
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    pred_paths = sorted(pred_dir.glob("*.pgm"))
    if not pred_paths:
        raise CliValidationError(f"no .pgm predictions under {pred_dir}")
    per_image = []
    for path in pred_paths:
        sample_id = path.stem
        if sample_id not in by_id:
            raise CliValidationError(f"prediction {path.name} matches no manifest sample")
        truth = read_image(root / by_id[sample_id].mask_path)
        per_image.append((sample_id, metrics.dice(read_image(path), truth)))
    score = metrics.seg_score(per_image)
    metrics.write_report(args.out, seg=score)
    _print_json({
        "report": str(args.out),
        "n_images": len(per_image),
        "mean_dice": score.mean,
        "std_dice": score.std,
    })


def _read_predictions_csv(path: Path) -> list[tuple[str, float]]:
    if not path.is_file():
        raise FileNotFoundError(f"predictions CSV not found: {path}")
    with path.open(newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows or rows[0] != ["sample_id", "psi_pred_deg"]:
        raise CliValidationError(f"{path}: expected header 'sample_id,psi_pred_deg'")
    out: list[tuple[str, float]] = []
    seen: set[str] = set()
    for row in rows[1:]:
        if len(row) != 2:
            raise CliValidationError(f"{path}: malformed row {row!r}")
        sample_id, value = row
        if sample_id in seen:
            raise CliValidationError(f"{path}: duplicate sample_id {sample_id!r}")
        seen.add(sample_id)
        try:
            out.append((sample_id, float(value)))
        except ValueError as e:
            raise CliValidationError(f"{path}: bad psi_pred_deg for {sample_id!r}") from e
    if not out:
        raise CliValidationError(f"{path}: no prediction rows")
    return out


def _cmd_eval_psi(args) -> None:
    manifest = ds.read_manifest(args.manifest)
    by_id = {r.sample_id: r for r in manifest.records}
    pairs = []
    for sample_id, pred in _read_predictions_csv(Path(args.pred_csv)):
        if sample_id not in by_id:
            raise CliValidationError(f"prediction for unknown sample {sample_id!r}")
        rec = by_id[sample_id]
        pairs.append((sample_id, rec.patient_id, rec.psi_deg, pred))
    report = metrics.psi_error_report(pairs)
    metrics.write_report(args.out, psi=report)
    _print_json({
        "report": str(args.out),
        "n_samples": len(pairs),
        "mean_abs_error_deg": report.overall_mean_abs_error_deg,
        "std_abs_error_deg": report.overall_std_abs_error_deg,
    })


def _cmd_report_plots(args) -> None:
    psi, seg = metrics.read_report(args.report_json)
    if psi is None and seg is None:
        raise CliValidationError(f"{args.report_json}: report holds neither psi nor seg results")
    written = metrics.emit_plots(args.out, psi=psi, seg=seg, seed=args.seed)
    _print_json({"written": [p.name for p in written], "out": str(args.out)})


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _ParseError as e:
        _emit_error("validation", str(e))
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    handler = getattr(args, "handler", None)
    if handler is None:
        _emit_error("validation", "no subcommand given (see --help)")
        return 1
    try:
        handler(args)
        return 0
    except (CliValidationError, FileNotFoundError, FormatError, ds.ManifestError) as e:
        _emit_error("validation", str(e))
        return 1
    except ValueError as e:
        _emit_error("validation", str(e))
        return 1
    except Exception as e:
        _emit_error("runtime", f"{type(e).__name__}: {e}")
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
