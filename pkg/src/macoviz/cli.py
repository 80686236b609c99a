"""``maco`` command line.

Exit codes: 0 success, 1 usage / invalid input, 2 I/O or file format,
3 model or objective mismatch, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics, plotting
from .baselines import BASELINE_LR, cbr_visualize, fourier_visualize
from .concepts import IMPORTANCE_PROXY, fit_concepts, patch_index_map, rank_concepts, top_patches, cut_patches
from .concepts import visualize_concept
from .errors import InvalidInputError, MacoError
from .evaluation import (
    CANONICAL_ABLATION,
    MACO_DRAWS,
    METHODS,
    ablation_run,
    evaluate_methods,
    shapes_testbed,
)
from .imageio import list_images, load_image, load_image_dir, save_png, save_result, write_json
from .maco import OptimizerConfig, fingerprint, maco_visualize
from .models import generate_shapes_dataset, load_model
from .objectives import inversion_objective, parse_objective
from .spectral import compute_magnitude_template, load_template, save_template
from .transforms import resize_bilinear

log = logging.getLogger("macoviz")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MODEL, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(MacoError):
    exit_code = EXIT_USAGE


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """Command name plus its parameters; the fingerprint ignores flag order."""

    command: str
    params: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return fingerprint({"command": self.command, **self.params})

    def to_dict(self) -> dict:
        return {"command": self.command, "params": self.params, "fingerprint": self.fingerprint}

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "json", "verbose")}
        return cls(args.command, params)


def _size(text):
    try:
        h, _, w = text.lower().partition("x")
        size = (int(h), int(w or h))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if min(size) < 2:
        raise argparse.ArgumentTypeError("sizes must be at least 2")
    return size


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _emit(args, document, table: str):
    """Machine-readable JSON on stdout with ``--json``, the text table otherwise."""
    if args.json:
        sys.stdout.write(json.dumps(document, indent=2, sort_keys=True, default=_plain) + "\n")
    else:
        sys.stdout.write(table.rstrip("\n") + "\n")


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(type(value).__name__)


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# template

def cmd_template(args):
    if args.data == "builtin:shapes":
        data = generate_shapes_dataset(args.count, args.seed, max(args.size))
        images, label = data.images, f"builtin:shapes n={args.count} seed={args.seed}"
    else:
        images, label = load_image_dir(args.data), str(args.data)
    template = compute_magnitude_template(images, args.size, label)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_template(template, out)
    hf = metrics.template_hf_ratio(template)
    document = {"path": str(out), "source_count": template.source_count, "source_label": label,
                "size": list(template.size), "hf_ratio": hf, "run_config": RunConfig.from_args(args).to_dict()}
    _emit(args, document, _table(["source_count", "hf_ratio", "size"],
                                 [[template.source_count, hf, "x".join(map(str, template.size))]]))


# visualize / invert

def _config(args, method):
    lr = args.lr if args.lr is not None else (1.0 if method == "maco" else BASELINE_LR)
    draws = args.draws if args.draws is not None else (MACO_DRAWS if method == "maco" else 1)
    return OptimizerConfig(steps=args.steps, learning_rate=lr, seed=args.seed, transform_draws=draws)


def _require_template(args):
    if not args.template:
        raise UsageError("--template is required for method maco")
    return load_template(args.template)


def _run(model, objective, args):
    config = _config(args, args.method)
    if args.method == "maco":
        return maco_visualize(model, objective, _require_template(args), config)
    size = tuple(args.size) if args.size else (load_template(args.template).size if args.template else (64, 64))
    if args.method == "fourier":
        return fourier_visualize(model, objective, size, config)
    return cbr_visualize(model, objective, size, config)


def _write_visualization(args, result, name, extra_entries=()):
    out = _out_dir(args.out)
    png, sidecar = save_result(result, out, name)
    document = json.loads(sidecar.read_text())
    document["run_config"] = RunConfig.from_args(args).to_dict()
    write_json(sidecar, document)
    plotting.write_gallery(out, [(png.name, f"{result.method} {result.objective}"), *extra_entries],
                           title=f"{result.method}: {result.objective}")
    rows = [[result.method, result.objective, result.seed, result.initial_objective, result.final_objective,
             result.clamped_fraction]]
    _emit(args, document, _table(["method", "objective", "seed", "initial", "final", "clamped"], rows))


def cmd_visualize(args):
    if args.method == "maco" and not args.template:
        raise UsageError("--template is required for method maco")
    model = load_model(args.model)
    objective = parse_objective(args.objective, model)
    result = _run(model, objective, args)
    _write_visualization(args, result, args.name)


def cmd_invert(args):
    if args.method == "maco" and not args.template:
        raise UsageError("--template is required for method maco")
    model = load_model(args.model)
    h, w, _ = model.input_size
    reference = load_image(args.reference, (h, w))
    objective = inversion_objective(args.layer, reference, model, f"inversion:{args.layer}:@{Path(args.reference).name}")
    result = _run(model, objective, args)
    out = _out_dir(args.out)
    save_png(out / "reference.png", reference)
    _write_visualization(args, result, args.name, [("reference.png", "reference")])


# concepts

def cmd_concepts(args):
    template = _require_template(args)
    model = load_model(args.model)
    images = load_image_dir(args.class_images)
    basis = fit_concepts(model, args.layer, images, args.rank, args.iterations, args.seed, args.grid)
    out = _out_dir(args.out)
    basis.save(out / "concepts.macomdl")
    index = patch_index_map(len(images), args.grid)
    order = rank_concepts(basis.U)
    importance = basis.U.mean(axis=0)
    config = _config(args, "maco")
    entries, rows, concepts = [], [], []
    h, w, _ = model.input_size
    for rank_pos, c in enumerate(order):
        result = visualize_concept(model, args.layer, basis.W[c], template, replace(config, seed=args.seed + c))
        name = f"concept{c}"
        save_result(result, out, name)
        entries.append((f"{name}.png", f"concept {c} ({IMPORTANCE_PROXY} {importance[c]:.3g})"))
        patches = []
        for j, ref in enumerate(top_patches(basis.U, index, c, args.top)):
            patch = cut_patches(images[ref.image_index], args.grid)[ref.row * args.grid + ref.col]
            rel = f"{name}_patch{j}.png"
            save_png(out / rel, resize_bilinear(np.asarray(patch, dtype=np.float64), (h, w)))
            entries.append((rel, f"concept {c} patch {j}: image {ref.image_index} ({ref.row},{ref.col})"))
            patches.append({"image_index": ref.image_index, "row": ref.row, "col": ref.col,
                            "coefficient": ref.coefficient})
        concepts.append({"concept": c, "rank": rank_pos, "importance": float(importance[c]),
                         "final_objective": result.final_objective, "top_patches": patches})
        rows.append([rank_pos, c, float(importance[c]), result.final_objective])
    plotting.write_gallery(out, entries, title=f"Concepts at {args.layer}")
    document = {"layer": args.layer, "rank": args.rank, "importance_proxy": IMPORTANCE_PROXY,
                "reconstruction_error": basis.reconstruction_error[-1], "concepts": concepts,
                "run_config": RunConfig.from_args(args).to_dict()}
    write_json(out / "concepts.json", document)
    _emit(args, document, _table(["rank", "concept", IMPORTANCE_PROXY, "final_objective"], rows))


# evaluate / ablate

_SCORE_HEADER = ["method", "plausibility", "fid", "mean_objective", "hf_ratio"]


def _score_rows(reports):
    models = sorted(reports[0].transferability)
    header = _SCORE_HEADER + [f"transfer:{m}" for m in models]
    rows = [[r.label, r.plausibility, r.fid, r.mean_objective, r.spectrum_hf_ratio]
            + [r.transferability[m] for m in models] for r in reports]
    return header, rows


def _write_scores(args, reports, document, title):
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header, rows = _score_rows(reports)
    document["run_config"] = RunConfig.from_args(args).to_dict()
    write_json(out, document)
    table = _table(header, rows)
    out.with_suffix(".txt").write_text(table)
    if args.emit == "csv":
        out.with_suffix(".csv").write_text(_csv(header, rows))
    plotting.scores_figure(reports, out.with_suffix(".png"), title=title)
    _emit(args, document, table)


def _testbed(args):
    if args.testbed != "shapes":
        raise UsageError(f"unknown testbed {args.testbed!r}; only 'shapes' is available")
    return shapes_testbed(args.testbed_seed)


def cmd_evaluate(args):
    methods = [m for m in args.methods.split(",") if m]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    testbed = _testbed(args)
    reports = evaluate_methods(testbed, methods, args.seeds, args.per_class, args.steps)
    document = {"testbed": testbed.describe(), "seeds": args.seeds, "per_class": args.per_class,
                "methods": {m: r.to_dict() for m, r in reports.items()}}
    _write_scores(args, list(reports.values()), document, "Method comparison (median over seeds)")


_TOGGLE_ROWS = dict(CANONICAL_ABLATION)
_TOGGLE_ALIASES = {"-transparency": "- transparency", "-crop": "- crop", "-noise": "- noise"}


def cmd_ablate(args):
    names = [_TOGGLE_ALIASES.get(t, t) for t in args.toggles.split(",") if t]
    unknown = [n for n in names if n not in _TOGGLE_ROWS]
    if unknown or not names:
        raise UsageError(f"unknown ablation rows {unknown}; choose from full,-transparency,-crop,-noise,fourier")
    testbed = _testbed(args)
    reports = ablation_run(testbed, [(n, _TOGGLE_ROWS[n]) for n in names], args.seed, args.per_class, args.steps)
    document = {"testbed": testbed.describe(), "seed": args.seed, "per_class": args.per_class,
                "rows": [r.to_dict() for r in reports]}
    _write_scores(args, reports, document, "Ablation")


# report

def _report_images(directory):
    """Lossless ``.npy`` reconstructions when present, PNGs otherwise."""
    arrays = list_images(directory, (".npy",))
    if arrays:
        return [load_image(p) for p in arrays], "npy"
    return load_image_dir(directory), "png"


def cmd_report(args):
    try:
        images, source = _report_images(args.images)
        log_map, hf = metrics.spectrum_report(images)
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from exc
    out = _out_dir(args.out)
    panels = {f"images ({len(images)})": (log_map, hf)}
    rows = [["images", len(images), hf]]
    document = {"images": str(args.images), "count": len(images), "source": source, "hf_ratio": hf}
    if args.template:
        template = load_template(args.template)
        full = metrics.full_plane_magnitude(template.magnitude.astype(np.float64), template.width).mean(axis=0)
        t_hf = metrics.hf_ratio_from_magnitude(full)
        panels["template"] = (np.fft.fftshift(np.log1p(full)), t_hf)
        rows.append(["template", template.source_count, t_hf])
        document["template_hf_ratio"] = t_hf
        document["hf_ratio_difference"] = hf - t_hf
    plotting.spectrum_figure(panels, out / "spectrum.png")
    plotting.radial_profile_figure({k: v[0] for k, v in panels.items()}, out / "radial_profile.png")
    document["run_config"] = RunConfig.from_args(args).to_dict()
    write_json(out / "spectrum.json", document)
    header = ["source", "count", "hf_ratio"]
    (out / "spectrum.csv").write_text(_csv(header, rows))
    _emit(args, document, _table(header, rows))


# parser

def _add_optimizer_flags(p, with_method=True):
    if with_method:
        p.add_argument("--method", choices=METHODS, default="maco")
    p.add_argument("--template", help="magnitude template file (required for maco)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=256)
    p.add_argument("--lr", type=float, default=None, help=f"default 1.0 for maco, {BASELINE_LR} for baselines")
    p.add_argument("--draws", type=int, default=None,
                   help=f"transform samples averaged per step (default {MACO_DRAWS} for maco, 1 otherwise)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maco", description="Phase-only feature visualization under a fixed magnitude spectrum.")
    parser.add_argument("--json", action="store_true", help="print machine-readable JSON on stdout")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("template", help="compute a magnitude template")
    p.add_argument("--data", required=True, help="image directory or builtin:shapes")
    p.add_argument("--size", type=_size, required=True, help="HxW")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=2000, help="images drawn from builtin:shapes")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_template)

    p = sub.add_parser("visualize", help="render one objective")
    p.add_argument("--model", required=True, help="ref:<seed>[:<arch>] or plugin:<name>[:<path>]")
    p.add_argument("--objective", required=True, help="logit:<k> | channel:<layer>:<i> | direction:<layer>:@file")
    _add_optimizer_flags(p)
    p.add_argument("--size", type=_size, help="canvas size for baselines (default: template size or 64x64)")
    p.add_argument("--name", default="visualization")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("invert", help="feature inversion of a reference image")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--reference", required=True)
    _add_optimizer_flags(p)
    p.add_argument("--size", type=_size)
    p.add_argument("--name", default="inversion")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("concepts", help="NMF concepts of patch activations, rendered with MACO")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--class-images", required=True)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--grid", type=int, default=3)
    p.add_argument("--top", type=int, default=8, help="top patches kept per concept")
    _add_optimizer_flags(p, with_method=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_concepts)

    for name, func, helptext in (("evaluate", cmd_evaluate, "compare methods on the testbed"),
                                 ("ablate", cmd_ablate, "ablation grid on the testbed")):
        p = sub.add_parser(name, help=helptext)
        if name == "evaluate":
            p.add_argument("--methods", default=",".join(METHODS))
            p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
        else:
            p.add_argument("--toggles", default="full,-transparency,-crop,-noise,fourier")
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--testbed", default="shapes")
        p.add_argument("--testbed-seed", type=int, default=0)
        p.add_argument("--per-class", type=int, default=10)
        p.add_argument("--steps", type=int, default=256)
        p.add_argument("--emit", choices=["json", "csv"], default="json")
        p.add_argument("--out", required=True, help="report JSON path; .txt/.png (and .csv) written beside it")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="spectrum diagnostic of a folder of outputs")
    p.add_argument("--images", required=True)
    p.add_argument("--template")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except MacoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, EOFError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
