"""Command-line entry point.

Every command reads one JSON document, writes one result document (or a
table/CSV rendering of it) and exits with the code carried by the library
exception, so scripts can branch on failure classes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np

from . import reorder
from .chain import find_equilibrium, normal_modes, scan_field
from .constants import TWO_PI
from .cooling import LaserField, rate_report, wavevector
from .errors import IonChainError, InputError
from .qls.protocols import run_protocol
from .trap import BE9, CA40, MG24, MG25, AL27, ClampWarning, IonSpecies, TrapModel, fit_trap_from_reference

SPECIES = {sp.name: sp for sp in (BE9, MG24, MG25, AL27, CA40)}
PERTURBATION_KEYS = {
    "uniform_field_V_per_m": "uniform_field",
    "axial_gradient_J_per_m": "axial_gradient",
    "cubic_scale_m": "cubic_scale",
    "twist_coeff_V_per_m2": "twist_coeff",
}


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------------------
# input parsing


def parse_species(item) -> IonSpecies:
    if isinstance(item, str):
        if item not in SPECIES:
            raise InputError(f"unknown species {item!r}; known: {sorted(SPECIES)}")
        return SPECIES[item]
    if isinstance(item, dict):
        try:
            return IonSpecies.from_dict(item)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid species: {exc}") from None
    raise InputError(f"invalid species entry {item!r}")


def parse_ions(items) -> tuple[IonSpecies, ...]:
    if not isinstance(items, list) or not items:
        raise InputError("'ions' must be a non-empty list")
    return tuple(parse_species(x) for x in items)


def parse_trap(doc) -> TrapModel:
    """A full trap document, or ``{"fit": {...}}`` with reference secular
    frequencies in MHz plus optional perturbation keys."""
    if not isinstance(doc, dict):
        raise InputError("'trap' must be an object")
    if "fit" not in doc:
        return TrapModel.from_dict(doc)
    fit = doc["fit"]
    try:
        sa, sb = parse_species(fit["species_a"]), parse_species(fit["species_b"])
        fa = np.asarray(fit["freqs_a_MHz"], dtype=float) * 1e6
        fb = np.asarray(fit["freqs_b_MHz"], dtype=float) * 1e6
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid trap fit: {exc}") from None
    extra = {PERTURBATION_KEYS[k]: v for k, v in doc.items() if k in PERTURBATION_KEYS}
    kwargs = {}
    if "reference_mass_amu" in fit:
        kwargs["reference_mass_amu"] = float(fit["reference_mass_amu"])
    if "rf_drive_MHz" in fit:
        kwargs["rf_drive"] = TWO_PI * float(fit["rf_drive_MHz"]) * 1e6
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        return fit_trap_from_reference(sa, fa, sb, fb, **kwargs, **extra)


def parse_laser(doc) -> LaserField:
    """Laser in lab units: wavelength (nm), direction, linewidth and detuning
    in MHz (divided by 2 pi) and a saturation parameter."""
    if not isinstance(doc, dict):
        raise InputError("laser must be an object")
    try:
        k = wavevector(float(doc["wavelength_nm"]) * 1e-9, doc.get("direction", [0.0, 0.0, 1.0]))
        gamma = TWO_PI * float(doc["linewidth_MHz"]) * 1e6
        det = TWO_PI * float(doc["detuning_MHz"]) * 1e6
        s = float(doc["saturation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid laser specification: {exc}") from None
    if not (gamma > 0 and s >= 0 and math.isfinite(det)):
        raise InputError("laser needs a positive linewidth, finite detuning and s >= 0")
    return LaserField.from_saturation(k, s, det, gamma)


def load_json(path: str) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be an object")
    return doc, raw


# ---------------------------------------------------------------------------
# output


def manifest(command: str, raw: bytes, seed, elapsed: float | None) -> dict:
    return {
        "command": command,
        "input_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": seed,
        "version": tool_version(),
        "wall_time_s": elapsed,
    }


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, default=_json_default) + "\n"


# ---------------------------------------------------------------------------
# commands; each returns (result document, text rendering, csv rendering)


def cmd_modes(args, doc):
    trap = parse_trap(doc.get("trap"))
    ions = parse_ions(doc.get("ions"))
    modes = normal_modes(trap, find_equilibrium(trap, ions))
    csv_lines = ["mode,label,frequency_MHz," + ",".join(f"{c}{j + 1}" for j in range(len(ions)) for c in "xyz")]
    labels = modes.labels()
    for a in range(modes.n_modes - 1, -1, -1):
        comps = ",".join(f"{v:.9f}" for v in modes.eigenvectors[:, a])
        csv_lines.append(f"{a},{labels[a]},{modes.frequencies_hz[a] / 1e6:.9f},{comps}")
    return {"modes": modes.to_dict()}, modes.to_table(), "\n".join(csv_lines) + "\n"


def cmd_scan(args, doc):
    trap = parse_trap(doc.get("trap"))
    ions = parse_ions(doc.get("ions"))
    if args.points < 2:
        raise InputError("a scan needs at least two points")
    if not args.max > args.min:
        raise InputError("--max must exceed --min")
    values = np.linspace(args.min, args.max, args.points)
    scan = scan_field(trap, ions, args.axis, values)
    text = scan.to_csv(shift=True)
    return {"scan": scan.to_dict()}, text, scan.to_csv(shift=args.shift)


def cmd_cooling(args, doc):
    trap = parse_trap(doc.get("trap"))
    ions = parse_ions(doc.get("ions"))
    if args.laser:
        laser_doc, _ = load_json(args.laser)
    else:
        laser_doc = doc.get("laser")
    laser = parse_laser(laser_doc)
    ion = doc.get("laser_ion", 0)
    if not isinstance(ion, int) or not 0 <= ion < len(ions):
        raise InputError("laser_ion must index an ion of the chain")
    modes = normal_modes(trap, find_equilibrium(trap, ions))
    report = rate_report(modes, laser, ion, force=args.force)
    lines = [f"{'mode':>12}{'f/MHz':>10}{'eta':>10}{'cool/s':>14}{'heat/s':>14}{'nbar_ss':>12}"]
    for row in report["modes"]:
        def fmt(v, spec):
            return format(v, spec) if v is not None else "-"
        lines.append(
            f"{row['label']:>12}{row['frequency_MHz']:>10.3f}{fmt(row['eta'], '.4f'):>10}"
            f"{fmt(row['cooling_rate_n0_quanta_per_s'], '.4g'):>14}"
            f"{fmt(row['heating_rate_quanta_per_s'], '.4g'):>14}{fmt(row['nbar_ss'], '.3f'):>12}"
        )
    csv = "\n".join(
        ["label,frequency_MHz,eta,cooling_rate_n0_quanta_per_s,heating_rate_quanta_per_s,nbar_ss"]
        + [
            ",".join(str(row[k]) for k in ("label", "frequency_MHz", "eta", "cooling_rate_n0_quanta_per_s",
                                           "heating_rate_quanta_per_s", "nbar_ss"))
            for row in report["modes"]
        ]
    )
    return {"cooling": report}, "\n".join(lines), csv + "\n"


def cmd_qls(args, doc):
    out = run_protocol(doc, seed=args.seed, trajectories=args.trajectories, workers=args.workers)
    res = out["result"]
    text = "\n".join(f"{k}: {v}" for k, v in res.items() if not isinstance(v, (dict, list)) or k == "populations")
    csv = None
    hist = res.get("mean_true_posterior_by_round")
    if hist:
        csv = "round,mean_true_posterior\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(hist))
    return {"qls": out}, text, csv


def _reorder_runs(doc):
    kind = doc.get("kind", "ramp")
    if kind == "asymmetric":
        trap = parse_trap(doc.get("trap"))
        ions = parse_ions(doc.get("ions"))
        try:
            field = float(doc["field_V_per_m"])
            twist = float(doc["twist_V_per_m2"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid asymmetric schedule: {exc}") from None
        steps = int(doc.get("steps", reorder.DEFAULT_STEPS))
        res = reorder.run_asymmetric_reorder(trap, ions, field, twist, doc.get("axis", "y"), steps=steps)
        return [(ions, res.ramp, res.subcritical)]
    if kind != "ramp":
        raise InputError(f"unknown reorder kind {kind!r}")
    if doc.get("benchmark"):
        schedule = reorder.benchmark_schedule(int(doc.get("steps", reorder.DEFAULT_STEPS)))
    else:
        schedule = reorder.RampSchedule.from_dict(doc.get("schedule", {}))
    ions = parse_ions(doc.get("ions"))
    starts = reorder.enumerate_orders(ions) if doc.get("all_orders") else [ions]
    return [(o, reorder.run_symmetric_reorder(o, schedule), None) for o in starts]


def cmd_reorder(args, doc):
    runs = _reorder_runs(doc)
    results = []
    for start, ramp, sub in runs:
        entry = {
            "start_order": [sp.name for sp in start],
            "final_class": ramp.final_class.to_dict(),
            "final_order": reorder.order_label(ramp.final_class.order) if ramp.final_class.kind == "linear" else None,
            "subcritical": sub,
            "steps": len(ramp.configs) - 1,
        }
        if len(runs) == 1:
            entry["positions_um"] = ramp.positions_um().tolist()
            entry["classes"] = [c.label for c in ramp.classes]
        results.append(entry)
    lines = []
    for e in results:
        flag = "  (sub-critical: order unchanged)" if e["subcritical"] else ""
        lines.append(f"{','.join(e['start_order'])} -> {e['final_order'] or e['final_class']['geometry']}{flag}")
    csv = runs[0][1].to_csv() if len(runs) == 1 else None
    return {"reorder": {"runs": results}}, "\n".join(lines), csv


COMMANDS = {
    "modes": cmd_modes,
    "scan": cmd_scan,
    "cooling": cmd_cooling,
    "qls": cmd_qls,
    "reorder": cmd_reorder,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="input JSON document")
    out = common.add_mutually_exclusive_group()
    out.add_argument("--json", action="store_true", help="emit the JSON result document")
    out.add_argument("--csv", action="store_true", help="emit a CSV matrix where one exists")
    common.add_argument("--timing", action="store_true", help="record wall time in the manifest")
    common.add_argument("--force", action="store_true", help="run despite a violated model assumption")

    p = argparse.ArgumentParser(prog="ionchain", description="Mixed-species ion chain modelling tools.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("modes", parents=[common], help="equilibrium and normal modes")
    s = sub.add_parser("scan", parents=[common], help="mode frequencies versus applied field")
    s.add_argument("--axis", default="y", choices=["x", "y", "z"])
    s.add_argument("--min", type=float, default=0.0, help="V/m")
    s.add_argument("--max", type=float, default=200.0, help="V/m")
    s.add_argument("--points", type=int, default=21)
    s.add_argument("--shift", action="store_true", help="add shift-from-zero-field columns to the CSV")
    c = sub.add_parser("cooling", parents=[common], help="Doppler cooling and heating rates")
    c.add_argument("--laser", help="laser JSON (overrides the 'laser' key of the config)")
    q = sub.add_parser("qls", parents=[common], help="quantum-logic protocol Monte Carlo")
    q.add_argument("--seed", type=int)
    q.add_argument("--trajectories", type=int)
    q.add_argument("--workers", type=int, help="thread count; results do not depend on it")
    sub.add_parser("reorder", parents=[common], help="quasi-static reordering ramps")
    return p


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        doc, raw = load_json(args.config)
        result, text, csv = COMMANDS[args.command](args, doc)
    except IonChainError as exc:
        where = f" (step {exc.step})" if getattr(exc, "step", None) is not None else ""
        axis = f" [axis {exc.axis}]" if getattr(exc, "axis", None) else ""
        stderr.write(f"error{where}{axis}: {exc}\n")
        return exc.exit_code
    elapsed = time.perf_counter() - t0 if args.timing else None
    seed = result.get("qls", {}).get("seed") if args.command == "qls" else None
    result["manifest"] = manifest(args.command, raw, seed, elapsed)
    if args.json:
        stdout.write(dumps(result))
    elif args.csv:
        if csv is None:
            stderr.write("error: this result has no CSV form\n")
            return InputError.exit_code
        stdout.write(csv)
    else:
        stdout.write(text.rstrip("\n") + "\n")
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
