"""Command-line pipeline: simulate, recover, fit-shape, estimate, detect, report.

Every run emits exactly one manifest record (JSON) describing the command,
its inputs and outputs, the physical and solver parameters in effect, the
exit status, and the wall time.  The manifest goes to --manifest when
given, otherwise to standard output.  Exit codes are stable: 0 success,
2 input or parameter error, 3 solver non-convergence, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import estimate as est
from . import forward, inverse
from .errors import (
    CalibrationError,
    CodecError,
    DetectorError,
    DimensionError,
    DomainError,
    EstimationError,
    FitError,
    ParameterError,
    SolverError,
)
from .geometry import ScanParams
from .raster import Image, Mask, load_image, save_image

__all__ = ["main"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_ESTIMATION = 4

_INPUT_ERRORS = (CodecError, ParameterError, DimensionError, DomainError, OSError)
_ESTIMATION_ERRORS = (FitError, EstimationError, CalibrationError, DetectorError)


@dataclass
class RunManifest:
    """One record per CLI run; reruns with equal inputs reproduce outputs."""

    command: str
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    params: dict | None = None
    solver: dict | None = None
    artifacts: list | None = None
    result: dict | None = None
    exit_status: int = EXIT_OK
    timing_ms: float = 0.0

    def write(self, path: str | None) -> None:
        text = json.dumps(asdict(self), indent=2) + "\n"
        if path:
            Path(path).write_text(text)
        else:
            sys.stdout.write(text)


def _parse_artifacts(text: str) -> tuple[str, ...]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    return forward._normalize_artifacts(names)


def _load_params(args) -> ScanParams:
    params = ScanParams.from_json(Path(args.params).read_text())
    overrides = {}
    for flag, attr in (
        ("l_px", "l"),
        ("theta0_rad", "theta0"),
        ("sigma_slope", "sigma_slope"),
        ("d_px", "d"),
        ("alpha", "alpha"),
        ("s_max", "s_max"),
        ("spine", "spine_side"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[attr] = value
    return params.replace(**overrides) if overrides else params


def _solver_config(args) -> inverse.SolverConfig:
    return inverse.SolverConfig(
        regularization=args.deblur_reg,
        max_iterations=args.deblur_maxiter,
        tolerance=args.deblur_tol,
        method=args.deblur_method,
    )


def _params_doc(params: ScanParams) -> dict:
    return json.loads(params.to_json())


def _add_param_overrides(parser) -> None:
    group = parser.add_argument_group("parameter overrides")
    group.add_argument("--l-px", dest="l_px", type=float, help="length scale l in px")
    group.add_argument(
        "--theta0-rad", dest="theta0_rad", type=float, help="spine angle in rad"
    )
    group.add_argument("--sigma-slope", dest="sigma_slope", type=float)
    group.add_argument("--d-px", dest="d_px", type=float, help="light distance in px")
    group.add_argument("--alpha", dest="alpha", type=int, choices=(1, 2))
    group.add_argument("--s-max", dest="s_max", type=float)
    group.add_argument("--spine", dest="spine", choices=("left", "right"))


def _add_solver_flags(parser) -> None:
    group = parser.add_argument_group("deblur solver")
    group.add_argument("--deblur-reg", type=float, default=1e-3)
    group.add_argument("--deblur-tol", type=float, default=1e-8)
    group.add_argument("--deblur-maxiter", type=int, default=2000)
    group.add_argument(
        "--deblur-method",
        choices=("iterative-normal-equations", "sparse-direct"),
        default="iterative-normal-equations",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descan",
        description="Simulate and invert the artifacts of scanning a curved book page.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="apply scan artifacts to a flat-page image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--params", required=True, help="ScanParams JSON file")
    p.add_argument("--artifacts", default="distort,blur,darken")
    p.add_argument("--supersample", type=int, default=1)
    p.add_argument("--manifest")
    _add_param_overrides(p)

    p = sub.add_parser("recover", help="invert scan artifacts given parameters")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--params", required=True)
    p.add_argument("--artifacts", default="distort,blur,darken")
    p.add_argument("--supersample", type=int, default=1)
    p.add_argument("--manifest")
    _add_param_overrides(p)
    _add_solver_flags(p)

    p = sub.add_parser("fit-shape", help="fit (l, theta0) to x,z profile samples")
    p.add_argument("points", help="CSV with x,z header")
    p.add_argument("out_params", help="fitted ScanParams JSON to write")
    p.add_argument("--report", help="write the full fit diagnostics JSON here")
    p.add_argument("--manifest")

    p = sub.add_parser(
        "estimate", help="fit darkening parameters from whitespace luminance"
    )
    p.add_argument("input")
    p.add_argument("mask", help="PGM mask; bright pixels mark whitespace")
    p.add_argument("out_params")
    p.add_argument("--alpha", type=int, choices=(1, 2), default=2)
    p.add_argument("--spine", choices=("left", "right"), default="left")
    p.add_argument("--report")
    p.add_argument("--manifest")

    p = sub.add_parser("detect", help="spectral artifact detectors")
    p.add_argument("input")
    p.add_argument("out_report")
    p.add_argument("--manifest")

    p = sub.add_parser("report", help="per-column RMS between two images")
    p.add_argument("original")
    p.add_argument("recovered")
    p.add_argument("out_csv")
    p.add_argument("--manifest")

    return parser


def _read_points_csv(path: str) -> np.ndarray:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["x", "z"]:
            raise EstimationError(f"{path}: expected CSV header 'x,z'")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise EstimationError(f"{path}:{line_no}: malformed sample {row!r}")
    return np.asarray(rows, dtype=np.float64)


def _fitted_scan_params(fit: est.FitResult, width_hint: float) -> ScanParams:
    """Promote a fitted subset to a full ScanParams document.

    Unfitted keys take neutral defaults (no blur, point source at the far
    distance unless fitted); s_max is chosen so the grid pitch is one pixel
    for a scan of the hinted width, matching real-scan column semantics.
    """
    l = float(fit.params["l"])
    return ScanParams(
        l=l,
        theta0=float(fit.params["theta0"]),
        sigma_slope=0.0,
        d=float(fit.params.get("d", max(10.0 * l, 1.0))),
        alpha=int(fit.params.get("alpha", 2)),
        s_max=max(width_hint - 1, 1.0) / l,
        spine_side="left",
    )


def _cmd_simulate(args, manifest: RunManifest) -> int:
    params = _load_params(args)
    artifacts = _parse_artifacts(args.artifacts)
    manifest.params = _params_doc(params)
    manifest.artifacts = list(artifacts)
    image = load_image(args.input)
    out = forward.simulate(image, params, artifacts, supersample=args.supersample)
    save_image(out, args.output)
    return EXIT_OK


def _cmd_recover(args, manifest: RunManifest) -> int:
    params = _load_params(args)
    artifacts = _parse_artifacts(args.artifacts)
    cfg = _solver_config(args)
    manifest.params = _params_doc(params)
    manifest.artifacts = list(artifacts)
    manifest.solver = asdict(cfg)
    image = load_image(args.input)
    out = inverse.recover(image, params, cfg, artifacts, supersample=args.supersample)
    save_image(out, args.output)
    return EXIT_OK


def _cmd_fit_shape(args, manifest: RunManifest) -> int:
    points = _read_points_csv(args.points)
    fit = est.fit_shape(points)
    if args.report:
        Path(args.report).write_text(fit.to_json())
        manifest.outputs.append(args.report)
    manifest.result = {
        "params": fit.as_dict()["params"],
        "residual_rms": fit.residual_rms,
        "converged": fit.converged,
        "iterations": fit.iterations,
    }
    if not fit.converged:
        print(f"fit-shape failed to converge: {fit.message}", file=sys.stderr)
        return EXIT_ESTIMATION
    width_hint = float(np.max(points[:, 0])) + 1.0
    Path(args.out_params).write_text(_fitted_scan_params(fit, width_hint).to_json())
    return EXIT_OK


def _cmd_estimate(args, manifest: RunManifest) -> int:
    scan = load_image(args.input)
    mask_img = load_image(args.mask)
    if mask_img.channels != 1:
        raise DimensionError("mask must be a single-channel PGM")
    if args.spine == "right":
        scan = Image(scan.pixels[:, ::-1, :])
        mask_img = Image(mask_img.pixels[:, ::-1, :])
    mask = Mask(mask_img.pixels[:, :, 0] >= 0.5)
    fit = est.estimate_from_whitespace(scan, mask, args.alpha)
    if args.report:
        Path(args.report).write_text(fit.to_json())
        manifest.outputs.append(args.report)
    manifest.result = {
        "params": fit.as_dict()["params"],
        "residual_rms": fit.residual_rms,
        "converged": fit.converged,
        "message": fit.message,
    }
    if not fit.converged:
        print(f"estimate failed to converge: {fit.message}", file=sys.stderr)
        return EXIT_ESTIMATION
    params = _fitted_scan_params(fit, scan.width).replace(spine_side=args.spine)
    Path(args.out_params).write_text(params.to_json())
    return EXIT_OK


def _cmd_detect(args, manifest: RunManifest) -> int:
    report = est.detect_artifacts(load_image(args.input))
    Path(args.out_report).write_text(report.to_json())
    manifest.result = {
        "low_wavenumber_energy": report.low_wavenumber_energy,
        "mean_wavenumber": report.mean_wavenumber,
        "baseline": report.baseline,
    }
    return EXIT_OK


def _cmd_report(args, manifest: RunManifest) -> int:
    original = load_image(args.original)
    recovered = load_image(args.recovered)
    curve, global_rms = est.column_rms_report(original, recovered)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["column", "rms"])
    for col, value in enumerate(curve):
        writer.writerow([col, f"{value:.9f}"])
    Path(args.out_csv).write_text(buffer.getvalue())
    manifest.result = {"global_rms": global_rms}
    return EXIT_OK


_HANDLERS = {
    "simulate": (_cmd_simulate, ["input", "params"], ["output"]),
    "recover": (_cmd_recover, ["input", "params"], ["output"]),
    "fit-shape": (_cmd_fit_shape, ["points"], ["out_params"]),
    "estimate": (_cmd_estimate, ["input", "mask"], ["out_params"]),
    "detect": (_cmd_detect, ["input"], ["out_report"]),
    "report": (_cmd_report, ["original", "recovered"], ["out_csv"]),
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler, input_attrs, output_attrs = _HANDLERS[args.command]
    manifest = RunManifest(
        command=args.command,
        inputs=[getattr(args, a) for a in input_attrs],
        outputs=[getattr(args, a) for a in output_attrs],
    )
    started = time.perf_counter()
    try:
        status = handler(args, manifest)
    except SolverError as exc:
        print(f"descan {args.command}: {exc}", file=sys.stderr)
        status = EXIT_SOLVER
    except _ESTIMATION_ERRORS as exc:
        print(f"descan {args.command}: {exc}", file=sys.stderr)
        status = EXIT_ESTIMATION
    except _INPUT_ERRORS as exc:
        print(f"descan {args.command}: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    manifest.exit_status = status
    manifest.timing_ms = (time.perf_counter() - started) * 1000.0
    manifest.write(getattr(args, "manifest", None))
    return status


if __name__ == "__main__":
    sys.exit(main())
