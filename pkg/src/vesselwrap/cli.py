"""Batch command-line entry points.

Commands: assess, evaluate, uncertainty, loss, phantom. All machine
output is JSON with stable key order and fixed rounding (degrees to 2
decimals, losses to 6), so identical inputs yield byte-identical
documents. Exit codes: 0 ok, 2 input error, 3 schema/channel error,
4 partial batch failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluation, loss as loss_mod, overlay, phantom as phantom_mod, uncertainty as unc
from .involvement import (
    DpcgCategory,
    InvolvementReport,
    dpcg_classify,
    filter_critical_volume,
    scan_involvement,
)
from .volume import (
    ChannelId,
    LayeredLabelVolume,
    MaskVolume,
    MissingChannelError,
    ProbVolume,
    VolumeFormatError,
    decode_layered,
    read_volume,
    write_volume,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SCHEMA = 3
EXIT_PARTIAL = 4

SCHEMA_ASSESSMENT = "vesselwrap.assessment/1"
SCHEMA_METRICS = "vesselwrap.metrics/1"

VESSEL_KEYS = ((ChannelId.ARTERY, "artery"), (ChannelId.VEIN, "vein"))


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _deg(x: float) -> float:
    return round(float(x), 2)


def _loss_value(x: float) -> float:
    return round(float(x), 6)


def _metric(x: float | None) -> float | None:
    return None if x is None else round(float(x), 4)


def _emit(doc: dict, output: str | None) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if output is None or output == "-":
        sys.stdout.write(text)
        return
    path = Path(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_mask(path, threshold_hint: str = "") -> MaskVolume:
    try:
        vol = read_volume(path)
    except VolumeFormatError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    if isinstance(vol, LayeredLabelVolume):
        return decode_layered(vol)
    if isinstance(vol, MaskVolume):
        return vol
    raise CliError(
        f"{path}: expected a mask or layered-label volume, got probabilities{threshold_hint}",
        EXIT_INPUT,
    )


def _report_dict(report: InvolvementReport) -> dict:
    return {
        "present": report.present,
        "max_involvement_deg": _deg(report.max_span_deg),
        "argmax_slice": report.argmax_slice,
        "slices": [
            {
                "z": s.z,
                "present": s.present,
                "max_span_deg": _deg(s.max_span_deg),
                "component_spans_deg": [_deg(v) for v in s.component_spans_deg],
            }
            for s in report.slices
        ],
    }


def _vessel_reports(masks: MaskVolume, connectivity: int, span_method: str):
    reports = {}
    for cid, _ in VESSEL_KEYS:
        reports[cid] = scan_involvement(masks, cid, connectivity, span_method)
    return reports


def _config_echo(args, sweep: bool) -> dict:
    cfg = {
        "connectivity": args.connectivity,
        "span_method": args.span_method,
        "threshold": args.threshold,
        "filter_mode": args.filter_mode,
        "critical": bool(getattr(args, "critical", False)),
        "units": {"angles": "deg"},
    }
    if sweep:
        cfg["ks"] = [float(k) for k in args.ks]
    return cfg


def _assessment_doc(scan_id: str, reports, category: DpcgCategory, args, sweep_entries=None) -> dict:
    doc = {
        "schema": SCHEMA_ASSESSMENT,
        "tool_version": __version__,
        "scan_id": scan_id,
        "config": _config_echo(args, sweep_entries is not None),
        "vessels": {key: _report_dict(reports[cid]) for cid, key in VESSEL_KEYS},
        "dpcg_category": category.label,
    }
    if sweep_entries is not None:
        doc["sweep"] = [
            {
                "k": float(entry.k),
                "vessels": {key: _report_dict(entry.reports[cid]) for cid, key in VESSEL_KEYS},
                "dpcg_category": entry.category.label,
            }
            for entry in sweep_entries
        ]
    return doc


def _write_contact_overlays(masks: MaskVolume, reports, directory, scan_id: str, connectivity: int):
    out = Path(directory)
    for cid, key in VESSEL_KEYS:
        report = reports[cid]
        for s in report.slices:
            if not s.present:
                continue
            rgb = overlay.contact_overlay(masks, cid, s.z, connectivity)
            overlay.write_ppm(out / f"{scan_id}_{key}_z{s.z:03d}.ppm", rgb)


def _load_fold_field(paths, threshold: float) -> unc.UncertaintyField:
    """Folds are probability volume headers, or directories of sample headers."""
    prob_folds: list[ProbVolume] = []
    sample_folds: list[unc.SampleSet] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            headers = sorted(p.glob("*.json"))
            if not headers:
                raise CliError(f"sample directory {p} holds no volume headers", EXIT_INPUT)
            samples = []
            for h in headers:
                vol = read_volume(h)
                if not isinstance(vol, ProbVolume):
                    raise CliError(f"{h}: samples must be probability volumes", EXIT_INPUT)
                samples.append(vol)
            sample_folds.append(unc.SampleSet(tuple(samples)))
        else:
            vol = read_volume(p)
            if not isinstance(vol, ProbVolume):
                raise CliError(f"{p}: folds must be probability volumes", EXIT_INPUT)
            prob_folds.append(vol)
    if prob_folds and sample_folds:
        raise CliError("mix of deterministic folds and sample directories", EXIT_INPUT)
    try:
        if sample_folds:
            return unc.sample_mean_std(sample_folds)
        return unc.fold_mean_std(prob_folds)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None


def cmd_assess(args) -> int:
    masks = _load_mask(args.input)
    scan_id = args.scan_id or Path(args.input).stem
    try:
        if args.critical:
            masks = filter_critical_volume(masks, args.filter_mode)
        reports = _vessel_reports(masks, args.connectivity, args.span_method)
    except MissingChannelError as exc:
        raise CliError(str(exc), EXIT_SCHEMA) from None
    category = dpcg_classify(
        reports[ChannelId.VEIN].max_span_deg, reports[ChannelId.ARTERY].max_span_deg
    )

    sweep_entries = None
    if args.fold:
        field = _load_fold_field(args.fold, args.threshold)
        try:
            sweep_entries = unc.uncertainty_sweep(
                field, [float(k) for k in args.ks], args.threshold,
                args.connectivity, args.span_method,
            )
        except MissingChannelError as exc:
            raise CliError(str(exc), EXIT_SCHEMA) from None

    if args.overlay:
        _write_contact_overlays(masks, reports, args.overlay, scan_id, args.connectivity)

    _emit(_assessment_doc(scan_id, reports, category, args, sweep_entries), args.output)
    return EXIT_OK


def _read_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read manifest: {exc}", EXIT_INPUT) from None
    entries = []
    seen = set()
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CliError(f"manifest line {i}: {exc}", EXIT_INPUT) from None
        if "scan_id" not in entry or "prediction" not in entry:
            raise CliError(f"manifest line {i}: needs scan_id and prediction", EXIT_INPUT)
        if entry["scan_id"] in seen:
            raise CliError(f"manifest line {i}: duplicate scan id {entry['scan_id']!r}", EXIT_INPUT)
        seen.add(entry["scan_id"])
        entries.append(entry)
    return entries


def _dice_stats_dict(stats: evaluation.DiceStats) -> dict:
    return {
        "mean": _metric(stats.mean),
        "std_per_case": _metric(stats.std_per_case),
        "std_per_fold": _metric(stats.std_per_fold),
        "n": stats.n,
    }


def _rate_dict(value: float | None, reason: str) -> dict:
    if value is None:
        return {"value": None, "reason": reason}
    return {"value": _metric(value), "reason": None}


def _metrics_doc(report: evaluation.MetricsReport, args) -> dict:
    involvement = {}
    for key in ("artery", "vein", "scan"):
        counts = report.confusion[key]
        involvement[key] = {
            "confusion": counts.as_dict(),
            "sensitivity": _rate_dict(report.sensitivity[key], "tp+fn == 0"),
            "specificity": _rate_dict(report.specificity[key], "tn+fp == 0"),
        }
    r2 = {
        key: _rate_dict(report.r2[key], report.r2_reason[key] or "")
        for key in ("artery", "vein")
    }
    buckets = {
        key: [
            {"bucket": row.bucket, "matched": row.matched, "total": row.total}
            for row in report.buckets[key]
        ]
        for key in ("artery", "vein")
    }
    return {
        "schema": SCHEMA_METRICS,
        "tool_version": __version__,
        "config": _config_echo(args, sweep=False),
        "n_scans": report.n_scans,
        "dice": {k: _dice_stats_dict(v) for k, v in report.dice.items()},
        "involvement": involvement,
        "r2_max_involvement": r2,
        "dpcg_buckets": buckets,
        "failures": list(report.failures),
    }


_TABLE_ROWS = (
    ("Tumor Dice", ("dice", "tumor")),
    ("Artery Dice", ("dice", "artery")),
    ("Vein Dice", ("dice", "vein")),
    ("Artery Overlap Dice", ("dice", "artery_overlap")),
    ("Vein Overlap Dice", ("dice", "vein_overlap")),
    ("Artery Sensitivity", ("sens", "artery")),
    ("Artery Specificity", ("spec", "artery")),
    ("Vein Sensitivity", ("sens", "vein")),
    ("Vein Specificity", ("spec", "vein")),
    ("Scan Sensitivity", ("sens", "scan")),
    ("Scan Specificity", ("spec", "scan")),
    ("Artery R2", ("r2", "artery")),
    ("Vein R2", ("r2", "vein")),
)


def _metrics_table(report: evaluation.MetricsReport) -> str:
    lines = [f"{'Metric':<22}  {'Value':>14}"]
    for label, (kind, key) in _TABLE_ROWS:
        if kind == "dice":
            stats = report.dice.get(key)
            value = "n/a" if stats is None else f"{stats.mean:.4f} +- {stats.std_per_case:.4f}"
        elif kind == "sens":
            v = report.sensitivity[key]
            value = "undefined" if v is None else f"{v:.4f}"
        elif kind == "spec":
            v = report.specificity[key]
            value = "undefined" if v is None else f"{v:.4f}"
        else:
            v = report.r2[key]
            value = "undefined" if v is None else f"{v:.4f}"
        lines.append(f"{label:<22}  {value:>14}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    entries = _read_manifest(args.manifest)
    base = Path(args.manifest).parent
    evals = []
    failures = []
    for entry in entries:
        scan_id = str(entry["scan_id"])
        try:
            pred = _load_mask(base / entry["prediction"])
            if "ground_truth" not in entry:
                raise CliError("entry lacks ground_truth", EXIT_INPUT)
            gt = _load_mask(base / entry["ground_truth"])
            gt_critical = None
            if args.critical:
                if "critical_ground_truth" not in entry:
                    raise CliError("critical evaluation needs critical_ground_truth", EXIT_INPUT)
                gt_critical = _load_mask(base / entry["critical_ground_truth"])
            evals.append(
                evaluation.evaluate_scan(
                    pred,
                    gt,
                    scan_id=scan_id,
                    fold=entry.get("fold"),
                    gt_critical=gt_critical,
                    critical=args.critical,
                    filter_mode=args.filter_mode,
                    connectivity=args.connectivity,
                    span_method=args.span_method,
                )
            )
        except (CliError, MissingChannelError, VolumeFormatError, ValueError) as exc:
            failures.append(f"{scan_id}: {exc}")
    evals.sort(key=lambda ev: ev.scan_id)
    report = evaluation.build_metrics_report(evals, failures)
    _emit(_metrics_doc(report, args), args.output)
    if args.table or (args.output not in (None, "-")):
        sys.stdout.write(_metrics_table(report))
    for failure in failures:
        sys.stderr.write(f"error: {failure}\n")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_uncertainty(args) -> int:
    field = _load_fold_field(args.fold, args.threshold)
    try:
        entries = unc.uncertainty_sweep(
            field, [float(k) for k in args.ks], args.threshold,
            args.connectivity, args.span_method,
        )
    except MissingChannelError as exc:
        raise CliError(str(exc), EXIT_SCHEMA) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(field.mean, out / "mean.json")
    write_volume(field.std, out / "std.json")
    doc = {
        "schema": SCHEMA_ASSESSMENT,
        "tool_version": __version__,
        "scan_id": args.scan_id,
        "config": _config_echo(args, sweep=True),
        "uncertainty_kind": field.kind,
        "sweep": [
            {
                "k": float(e.k),
                "vessels": {key: _report_dict(e.reports[cid]) for cid, key in VESSEL_KEYS},
                "dpcg_category": e.category.label,
            }
            for e in entries
        ],
    }
    _emit(doc, str(out / "uncertainty.json"))
    if args.overlay:
        heat_dir = Path(args.overlay)
        for cid in (ChannelId.TUMOR, ChannelId.ARTERY, ChannelId.VEIN):
            if not field.mean.has_channel(cid):
                continue
            mean = field.mean.channel(cid)
            std = field.std.channel(cid)
            name = cid.name.lower()
            for z in range(field.mean.dims[0]):
                if float(std[z].max()) < overlay.HEAT_CLIP:
                    continue
                rgb = overlay.heatmap_overlay(mean[z], std[z])
                overlay.write_ppm(heat_dir / f"{args.scan_id}_{name}_z{z:03d}.ppm", rgb)
    return EXIT_OK


_GRADCHECK_MAX_ELEMENTS = 16384


def cmd_loss(args) -> int:
    try:
        pred_vol = read_volume(args.prediction)
        gt_vol = read_volume(args.ground_truth)
    except VolumeFormatError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    if isinstance(pred_vol, LayeredLabelVolume) or isinstance(gt_vol, LayeredLabelVolume):
        raise CliError("loss expects multi-channel volumes", EXIT_INPUT)
    if pred_vol.channels != gt_vol.channels or pred_vol.dims != gt_vol.dims:
        raise CliError("prediction and ground truth geometry differ", EXIT_SCHEMA)

    pred = pred_vol.data.astype(np.float64)
    gt = gt_vol.data.astype(np.float64)
    weights = loss_mod.LossWeights(args.beta, args.alpha_w)
    channels = pred_vol.channels
    try:
        values = {
            "bce": _loss_value(loss_mod.bce(pred, gt)),
            "dice": _loss_value(loss_mod.soft_dice_loss(pred, gt)),
            "overlap": _loss_value(loss_mod.overlap_loss(pred, gt, channels)),
            "combined": _loss_value(loss_mod.combined_loss(pred, gt, weights, channels)),
        }
    except MissingChannelError as exc:
        raise CliError(str(exc), EXIT_SCHEMA) from None
    doc = {
        "schema": "vesselwrap.loss/1",
        "tool_version": __version__,
        "weights": {"beta": args.beta, "alpha_w": args.alpha_w},
        **values,
    }
    if args.gradcheck:
        if pred.size > _GRADCHECK_MAX_ELEMENTS:
            raise CliError(
                f"gradcheck is quadratic in tensor size; use a fixture below "
                f"{_GRADCHECK_MAX_ELEMENTS} elements",
                EXIT_INPUT,
            )
        try:
            doc["gradcheck_max_rel_error"] = {
                name: float(
                    f"{loss_mod.gradcheck_loss(name, pred, gt, weights, channels):.3e}"
                )
                for name in ("bce", "dice", "overlap", "combined")
            }
        except ValueError as exc:
            raise CliError(str(exc), EXIT_INPUT) from None
    _emit(doc, args.output)
    return EXIT_OK


def cmd_phantom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scene == "wrap":
        spec = phantom_mod.PhantomSpec(
            vessel_radius_px=args.radius,
            wrap_span_deg=args.span,
            wrap_center_deg=args.center_deg,
            vessel_channel=ChannelId.ARTERY if args.channel == "artery" else ChannelId.VEIN,
            jitter_seed=args.seed,
        )
        scene, truth = phantom_mod.gen_wrap_scene(spec)
        write_volume(scene, out / "scene.json")
        _emit(_truth_doc(truth), str(out / "truth.json"))
    elif args.scene == "uncertainty":
        spec = phantom_mod.PhantomSpec(
            vessel_radius_px=args.radius,
            wrap_span_deg=args.span,
            wrap_center_deg=args.center_deg,
            vessel_channel=ChannelId.ARTERY if args.channel == "artery" else ChannelId.VEIN,
            band_extra_deg=args.band_extra_deg,
            jitter_seed=args.seed,
        )
        folds, truths = phantom_mod.gen_uncertainty_scene(spec, tuple(float(k) for k in args.ks))
        for i, fold in enumerate(folds):
            write_volume(fold, out / f"fold{i}.json")
        doc = {"per_k": {f"{k:g}": _truth_doc(t) for k, t in sorted(truths.items())}}
        _emit(doc, str(out / "truth.json"))
    else:  # confusion
        cases = phantom_mod.gen_confusion_suite(args.seed)
        manifest_lines = []
        expected = {}
        for case in cases:
            write_volume(case.pred, out / f"{case.name}_pred.json")
            write_volume(case.gt, out / f"{case.name}_gt.json")
            manifest_lines.append(
                json.dumps(
                    {
                        "scan_id": case.name,
                        "prediction": f"{case.name}_pred.json",
                        "ground_truth": f"{case.name}_gt.json",
                    }
                )
            )
            expected[case.name] = {"vessel": case.vessel.name.lower(), "cell": case.expected}
        (out / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")
        _emit({"expected": expected}, str(out / "expected.json"))
    return EXIT_OK


def _truth_doc(truth: phantom_mod.PhantomTruth) -> dict:
    return {
        "max_span_deg": _deg(truth.max_span_deg),
        "present": truth.present,
        "dpcg_category": truth.category.label,
        "span_by_slice_deg": {str(z): _deg(v) for z, v in sorted(truth.span_by_slice.items())},
    }


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--span-method", choices=("largest-gap", "minmax"), default="largest-gap")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--filter-mode", choices=("voxel", "component"), default="voxel")
    p.add_argument("--output", "-o", default=None, help="write JSON here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vesselwrap",
        description="Tumor-vessel involvement assessment from segmentation volumes",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="involvement + DPCG grade for one scan")
    p.add_argument("input", help="mask or layered-label volume header")
    p.add_argument("--scan-id", default=None)
    p.add_argument("--critical", action="store_true", help="drop vessels overlapping the pancreas")
    p.add_argument("--fold", action="append", default=[],
                   help="probability fold volume or sample directory (repeatable)")
    p.add_argument("--ks", type=float, nargs="+", default=[-1.0, 0.0, 1.0, 2.0])
    p.add_argument("--overlay", default=None, help="write per-slice contact overlays here")
    _add_common_flags(p)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("evaluate", help="metric suite over a JSON-lines manifest")
    p.add_argument("manifest")
    p.add_argument("--critical", action="store_true")
    p.add_argument("--table", action="store_true", help="also print the text table")
    _add_common_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("uncertainty", help="mean/std volumes and a sigma sweep")
    p.add_argument("--fold", action="append", required=True,
                   help="probability fold volume or sample directory (repeatable)")
    p.add_argument("--ks", type=float, nargs="+", default=[-1.0, 0.0, 1.0, 2.0])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scan-id", default="scan")
    p.add_argument("--overlay", default=None, help="write heat maps here")
    _add_common_flags(p)
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("loss", help="loss kernel values for a prediction/target pair")
    p.add_argument("prediction")
    p.add_argument("ground_truth")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--alpha-w", type=float, default=0.8, dest="alpha_w")
    p.add_argument("--gradcheck", action="store_true")
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("phantom", help="write synthetic scenes with truth sidecars")
    p.add_argument("scene", choices=("wrap", "confusion", "uncertainty"))
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=float, default=8.0)
    p.add_argument("--span", type=float, default=180.0)
    p.add_argument("--center-deg", type=float, default=90.0)
    p.add_argument("--channel", choices=("artery", "vein"), default="vein")
    p.add_argument("--band-extra-deg", type=float, default=25.0)
    p.add_argument("--ks", type=float, nargs="+", default=[-1.0, 0.0, 1.0, 2.0])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_phantom)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code
    except VolumeFormatError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except MissingChannelError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_SCHEMA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
