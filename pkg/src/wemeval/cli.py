"""Command-line surface: evaluation runs, flow decomposition, mechanism
verification, and fixture generation, all deterministic per (inputs, config, seed).

Reports are line-delimited JSON: one effective-config record, one record per
trajectory pair (or a per-pair error record), and a final aggregate. Worker
count never changes report content; timing goes to stderr only.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import formats
from .features import EMBEDDER_EXTERNAL, EMBEDDER_REFERENCE, EmbedderSpec
from .flow import DegenerateMatchesError, estimate_homography, render_camera_flow, residual_object_flow
from .manifest import ManifestError, load_manifest, save_manifest
from .metrics import METRIC_NAMES, MetricConfig, evaluate_all
from .microsim import (
    CameraMotion,
    ChunkSpec,
    ObjectSpec,
    SimConfig,
    SimConfigError,
    default_catalog,
    generate_trajectory,
)
from .rollout import PhaseLabel
from .verify import run_verification

THREADS_ENV = "WEMEVAL_THREADS"


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_lines(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config file must be a JSON object")
    return doc


def _build_metric_config(args: argparse.Namespace, file_cfg: dict) -> MetricConfig:
    """Precedence: flags > config file > built-in defaults."""
    cfg = MetricConfig()
    known = {
        "lpsa_window": int, "fphs_window": int, "tau_cpdm": float, "tau_pmpa": float,
        "resample_steps": int, "top_fraction": float, "eps": float,
    }
    updates = {}
    for key, cast in known.items():
        if key in file_cfg:
            updates[key] = cast(file_cfg[key])
        flag = getattr(args, key, None)
        if flag is not None:
            updates[key] = flag
    embedder_cfg = dict(file_cfg.get("embedder", {}))
    if getattr(args, "embedder", None) is not None:
        embedder_cfg["kind"] = args.embedder
    if getattr(args, "embedder_grid", None) is not None:
        embedder_cfg["grid"] = args.embedder_grid
    if getattr(args, "embedder_source", None) is not None:
        embedder_cfg["source"] = args.embedder_source
    if embedder_cfg:
        updates["embedder"] = EmbedderSpec(
            kind=embedder_cfg.get("kind", EMBEDDER_REFERENCE),
            grid=int(embedder_cfg.get("grid", 8)),
            source=embedder_cfg.get("source"),
        )
    return replace(cfg, **updates)


def _resolve_workers(args: argparse.Namespace, file_cfg: dict) -> int:
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        workers = int(env)
    elif args.workers is not None:
        workers = args.workers
    else:
        workers = int(file_cfg.get("workers", 1))
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    return workers


@dataclass(frozen=True)
class RunConfig:
    """One eval run: metric config, worker count, output path, and seed."""

    metrics: MetricConfig
    workers: int
    out: str | None
    seed: int

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")


def _eval_pair(index: int, gen_path: str, gt_path: str, cfg: MetricConfig):
    try:
        gen = load_manifest(gen_path)
        gt = load_manifest(gt_path)
        report = evaluate_all(gen, gt, cfg)
        return index, report.to_dict(), None
    except (ManifestError, ValueError) as exc:
        return index, None, str(exc)


def _cmd_eval(args: argparse.Namespace) -> int:
    try:
        file_cfg = _load_config_file(args.config)
        run = RunConfig(
            metrics=_build_metric_config(args, file_cfg),
            workers=_resolve_workers(args, file_cfg),
            out=args.out,
            seed=args.seed if args.seed is not None else int(file_cfg.get("seed", 0)),
        )
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"eval: bad configuration: {exc}", file=sys.stderr)
        return 2
    cfg = run.metrics
    workers = run.workers

    if args.pairs:
        try:
            pair_doc = json.loads(Path(args.pairs).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"eval: bad pairs file: {exc}", file=sys.stderr)
            return 2
        base = Path(args.pairs).parent
        pairs = [(str(base / p["gen"]), str(base / p["gt"])) for p in pair_doc]
    elif args.gen and args.gt:
        pairs = [(args.gen, args.gt)]
    else:
        print("eval: provide --gen/--gt or --pairs", file=sys.stderr)
        return 2

    # Worker count is deliberately not echoed: content is worker-invariant and
    # reports must stay byte-identical across worker counts.
    lines = [_dump({"config": {**cfg.to_dict(), "seed": run.seed}})]
    started = time.perf_counter()
    if workers == 1:
        results = [_eval_pair(i, g, t, cfg) for i, (g, t) in enumerate(pairs)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda item: _eval_pair(*item),
                                    [(i, g, t, cfg) for i, (g, t) in enumerate(pairs)]))
    elapsed = time.perf_counter() - started

    results.sort(key=lambda r: r[0])
    succeeded = []
    failed = 0
    for index, report, error in results:
        if error is None:
            succeeded.append(report)
            lines.append(_dump(report))
        else:
            failed += 1
            lines.append(_dump({"error": {"pair": index, "gen": pairs[index][0],
                                          "gt": pairs[index][1], "message": error}}))
    aggregate = {}
    for name in METRIC_NAMES:
        values = [r["scores"][name] for r in succeeded if r["scores"].get(name) is not None]
        aggregate[name] = float(np.mean(values)) if values else None
    lines.append(_dump({"aggregate": {"scores": aggregate, "pairs": len(pairs), "failed": failed}}))
    _write_lines(lines, run.out)
    print(
        f"evaluated {len(pairs)} pair(s) in {elapsed:.3f}s "
        f"({len(pairs) / elapsed:.2f} trajectories/s, workers={workers})",
        file=sys.stderr,
    )
    if failed == 0:
        return 0
    return 2 if not succeeded else 1


def _parse_matches(doc: object) -> list[np.ndarray] | np.ndarray:
    """One match set ([[sx, sy, dx, dy], ...] or [[[sx, sy], [dx, dy]], ...]),
    or a list of such sets (one per flow field)."""

    def one_set(items: list) -> np.ndarray:
        rows = []
        for item in items:
            flat = np.asarray(item, dtype=np.float64).ravel()
            if flat.size != 4:
                raise ValueError("each match needs exactly 4 numbers")
            rows.append([[flat[0], flat[1]], [flat[2], flat[3]]])
        return np.asarray(rows)

    if not isinstance(doc, list) or not doc:
        raise ValueError("matches file must hold a non-empty JSON array")
    try:
        return one_set(doc)
    except (ValueError, TypeError):
        return [one_set(entry) for entry in doc]


def _cmd_decompose_flow(args: argparse.Namespace) -> int:
    try:
        fields = formats.read_flow_file(args.flow)
    except (OSError, formats.FormatError) as exc:
        print(f"decompose-flow: {exc}", file=sys.stderr)
        return 2
    try:
        matches = _parse_matches(json.loads(Path(args.matches).read_text(encoding="utf-8")))
    except (OSError, ValueError) as exc:
        print(f"decompose-flow: bad matches file: {exc}", file=sys.stderr)
        return 2
    if isinstance(matches, list) and len(matches) != len(fields):
        print(
            f"decompose-flow: {len(matches)} match sets for {len(fields)} flow fields",
            file=sys.stderr,
        )
        return 2

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    homographies = []
    camera_fields = []
    residual_fields = []
    for i, field in enumerate(fields):
        match_set = matches[i] if isinstance(matches, list) else matches
        try:
            h, _ = estimate_homography(match_set, threshold=args.threshold,
                                       iterations=args.iterations, seed=args.seed)
        except (ValueError, DegenerateMatchesError) as exc:
            print(f"decompose-flow: field {i}: {exc}", file=sys.stderr)
            return 2
        camera = render_camera_flow(h, field.width, field.height)
        camera_fields.append(camera)
        residual_fields.append(residual_object_flow(field, camera))
        homographies.append(h.h.tolist())

    (out_dir / "homographies.json").write_text(
        json.dumps(homographies, indent=2) + "\n", encoding="utf-8"
    )
    formats.write_flow_file(out_dir / "camera_flow.bin", camera_fields)
    formats.write_flow_file(out_dir / "residual_flow.bin", residual_fields)
    return 0


def _cmd_verify_mechanisms(args: argparse.Namespace) -> int:
    records = run_verification(args.seed, args.trials, inject_fault=args.inject_fault)
    _write_lines([_dump(r) for r in records], args.out)
    return 0 if all(r["passed"] for r in records) else 1


def _catalog_from_file(path: str) -> list[tuple[str, SimConfig]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = []
    for fx in doc["fixtures"]:
        chunks = []
        for c in fx["chunks"]:
            camera = None
            if c.get("camera") is not None:
                cam = c["camera"]
                camera = CameraMotion(
                    kind=cam["kind"], dx=cam.get("dx", 0.0), dy=cam.get("dy", 0.0),
                    degrees=cam.get("degrees", 0.0), factor=cam.get("factor", 1.0),
                )
            motion = tuple(c["object_motion"]) if c.get("object_motion") is not None else None
            chunks.append(ChunkSpec(phase=PhaseLabel(c["phase"]), steps=int(c["steps"]),
                                    camera=camera, object_motion=motion))
        objects = tuple(
            ObjectSpec(shape=o["shape"], size=float(o["size"]), intensity=float(o["intensity"]),
                       position=tuple(o["position"]))
            for o in fx.get("objects", [])
        )
        cfg = SimConfig(
            seed=int(fx["seed"]), width=int(fx["width"]), height=int(fx["height"]),
            chunks=tuple(chunks), objects=objects, ego_object=int(fx.get("ego_object", 0)),
            noise_sigma=float(fx.get("noise_sigma", 0.0)),
        )
        entries.append((str(fx["name"]), cfg))
    return entries


def _cmd_gen_fixtures(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"gen-fixtures: cannot create {out_dir}: {exc}", file=sys.stderr)
        return 2
    if args.catalog:
        try:
            entries = _catalog_from_file(args.catalog)
        except (OSError, KeyError, ValueError, SimConfigError) as exc:
            print(f"gen-fixtures: bad catalog: {exc}", file=sys.stderr)
            return 2
    else:
        entries = default_catalog(size=args.size, t=args.frames)

    catalog = []
    had_error = False
    for name, cfg in entries:
        try:
            traj, _ = generate_trajectory(cfg)
        except SimConfigError as exc:
            print(f"gen-fixtures: fixture '{name}': {exc}", file=sys.stderr)
            had_error = True
            continue
        fixture_dir = out_dir / name
        fixture_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = save_manifest(traj, fixture_dir / "manifest.json")
        phases = [c.phase.value for c in cfg.chunks]
        catalog.append(
            {
                "name": name,
                "seed": cfg.seed,
                "manifest": str(manifest_path.relative_to(out_dir)),
                "phases": phases,
                "frames_per_chunk": [c.steps for c in cfg.chunks],
                "dims": [cfg.width, cfg.height],
                "expected": {
                    "self_eval_unit_scores": True,
                    "camera_flow_matches_recorded_homography": True,
                    "residual_flow_within_ego_mask": "Manip" in phases,
                    "cpdm_applicable": len(set(phases)) > 1,
                    "fphs_applicable": any(a != b for a, b in zip(phases, phases[1:])),
                },
            }
        )
    (out_dir / "catalog.json").write_text(
        json.dumps({"fixtures": catalog}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"gen-fixtures: wrote {len(catalog)} fixture(s) to {out_dir}", file=sys.stderr)
    return 1 if had_error else 0


def _cmd_report(args: argparse.Namespace) -> int:
    config_line = None
    trajectory_lines = []
    errors = 0
    for path in args.inputs:
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            if not raw.strip():
                continue
            record = json.loads(raw)
            if "config" in record and "aggregate" not in record:
                config_line = config_line or record
            elif "trajectory" in record:
                trajectory_lines.append(record)
            elif "error" in record:
                errors += 1
    lines = []
    if config_line is not None:
        lines.append(_dump(config_line))
    lines.extend(_dump(r) for r in trajectory_lines)
    aggregate = {}
    for name in METRIC_NAMES:
        values = [r["scores"][name] for r in trajectory_lines if r["scores"].get(name) is not None]
        aggregate[name] = float(np.mean(values)) if values else None
    lines.append(_dump({"aggregate": {"scores": aggregate, "pairs": len(trajectory_lines) + errors,
                                      "failed": errors}}))
    _write_lines(lines, args.out)
    return 0


def _positive_int(value: str) -> int:
    parsed = int(value)
    if parsed < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return parsed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wemeval",
                                     description="Embodied rollout evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="evaluate generated-vs-ground-truth trajectory pairs")
    p_eval.add_argument("--gen", help="generated trajectory manifest")
    p_eval.add_argument("--gt", help="ground-truth trajectory manifest")
    p_eval.add_argument("--pairs", help="JSON file: [{'gen': path, 'gt': path}, ...]")
    p_eval.add_argument("--out", help="report file (default stdout)")
    p_eval.add_argument("--config", help="JSON config file (flags override it)")
    p_eval.add_argument("--workers", type=_positive_int, default=None,
                        help=f"parallel workers (env {THREADS_ENV} overrides)")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--lpsa-window", dest="lpsa_window", type=_positive_int, default=None)
    p_eval.add_argument("--fphs-window", dest="fphs_window", type=_positive_int, default=None)
    p_eval.add_argument("--tau-cpdm", dest="tau_cpdm", type=float, default=None)
    p_eval.add_argument("--tau-pmpa", dest="tau_pmpa", type=float, default=None)
    p_eval.add_argument("--resample-steps", dest="resample_steps", type=_positive_int, default=None)
    p_eval.add_argument("--top-fraction", dest="top_fraction", type=float, default=None)
    p_eval.add_argument("--eps", type=float, default=None)
    p_eval.add_argument("--embedder", choices=[EMBEDDER_REFERENCE, EMBEDDER_EXTERNAL], default=None)
    p_eval.add_argument("--embedder-grid", dest="embedder_grid", type=_positive_int, default=None)
    p_eval.add_argument("--embedder-source", dest="embedder_source", default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_flow = sub.add_parser("decompose-flow", help="split raw flow into camera and residual parts")
    p_flow.add_argument("--flow", required=True, help="flow binary file")
    p_flow.add_argument("--matches", required=True, help="JSON point correspondences")
    p_flow.add_argument("--out-dir", required=True)
    p_flow.add_argument("--threshold", type=float, default=1.0, help="RANSAC inlier threshold (px)")
    p_flow.add_argument("--iterations", type=_positive_int, default=500)
    p_flow.add_argument("--seed", type=int, default=0)
    p_flow.set_defaults(func=_cmd_decompose_flow)

    p_verify = sub.add_parser("verify-mechanisms", help="run mechanism invariant checks")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--trials", type=_positive_int, default=1000)
    p_verify.add_argument("--out", help="JSONL output (default stdout)")
    p_verify.add_argument("--inject-fault", choices=["unroute-flip"], default=None,
                          help=argparse.SUPPRESS)  # test-only fault injection
    p_verify.set_defaults(func=_cmd_verify_mechanisms)

    p_gen = sub.add_parser("gen-fixtures", help="emit simulator fixtures with exact ground truth")
    p_gen.add_argument("--out-dir", required=True)
    p_gen.add_argument("--catalog", help="catalog JSON (defaults to the built-in catalog)")
    p_gen.add_argument("--size", type=_positive_int, default=64, help="frame side for the built-in catalog")
    p_gen.add_argument("--frames", type=_positive_int, default=6, help="frames per chunk for the built-in catalog")
    p_gen.set_defaults(func=_cmd_gen_fixtures)

    p_report = sub.add_parser("report", help="merge report files and recompute the aggregate")
    p_report.add_argument("inputs", nargs="+")
    p_report.add_argument("--out", help="merged report file (default stdout)")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
