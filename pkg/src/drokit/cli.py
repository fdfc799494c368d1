"""Command-line surface: sample, compute-dro, recover, roundtrip, bench,
losses.

Every command is deterministic under a fixed --seed and writes a manifest
naming its inputs (with content hashes), parameters, and outputs, enough to
reproduce the run exactly.

Exit codes: 0 success, 2 validation error, 3 data/format error, 4 tolerance
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cloud import (PointCloud, SamplingConfig, TriangleMesh, cloud_fk,
                    load_obj, sample_link_clouds, sample_object_cloud)
from .dro import compute_dro
from .errors import (ContractError, DataError, DegeneracyError, DroError,
                     FormatError, StageError, StructureError, UrdfError)
from .formats import read_dromx, read_dropc, write_dromx, write_dropc
from .kinematics import KinematicModel, LinkPoseSet, forward_kinematics, load_model
from .losses import contrastive_loss, dro_l1_loss, penetration_loss, pose_loss
from .metrics import read_grasp_records
from .optimizer import SolveParams, recover_grasp
from .rng import substream

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_TOLERANCE = 4

# wrist translation range for random grasp draws; tabletop scale keeps the
# multilateration geometry well-conditioned
TRIAL_WRIST_RANGE = 0.3

_VALIDATION_ERRORS = (ContractError, StructureError, UrdfError)
_DATA_ERRORS = (DataError, FormatError, DegeneracyError)


class ToleranceFailure(DroError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ContractError(f"{what} not specified (flag or config)")
    p = Path(path)
    if not p.is_file():
        raise ContractError(f"{what} not found: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(out_dir: Path, name: str, command: str, seed, inputs: dict,
              params: dict, outputs: list[Path]) -> None:
    doc = {
        "tool": {"name": "dro", "version": __version__},
        "command": command,
        "seed": seed,
        "inputs": {k: {"path": str(p), "sha256": _sha256(Path(p))}
                   for k, p in inputs.items()},
        "params": params,
        "outputs": {p.name: {"path": str(p), "sha256": _sha256(p)}
                    for p in outputs},
    }
    _write_json(out_dir / name, doc)


def _load_model_file(path) -> KinematicModel:
    p = _require_file(path, "model file")
    return load_model(p.read_text())


def _load_meshes(model: KinematicModel, mesh_dir) -> dict[str, TriangleMesh]:
    if mesh_dir is None:
        raise ContractError("mesh directory not specified (flag or config)")
    d = Path(mesh_dir)
    if not d.is_dir():
        raise ContractError(f"mesh directory not found: {d}")
    meshes = {}
    for link in model.links:
        f = d / f"{link}.obj"
        if f.is_file():
            meshes[link] = load_obj(f.read_text())
    if not meshes:
        raise DataError(f"no link meshes found in {d}")
    return meshes


def _parse_q(text: str, n_dof: int) -> np.ndarray:
    try:
        q = np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ContractError(f"could not parse configuration '{text}': {exc}") from exc
    if len(q) != n_dof:
        raise ContractError(f"configuration has {len(q)} entries, model needs {n_dof}")
    return q


def _resolve_q(args, model: KinematicModel) -> np.ndarray:
    if args.q is not None:
        return _parse_q(args.q, model.n_dof)
    if args.grasp_file is not None:
        records = read_grasp_records(_require_file(args.grasp_file, "grasp file"))
        if not records:
            raise DataError(f"no grasp records in {args.grasp_file}")
        idx = args.grasp_index
        if not 0 <= idx < len(records):
            raise ContractError(f"grasp index {idx} out of range (have {len(records)})")
        q = records[idx].q
        if len(q) != model.n_dof:
            raise ContractError(f"grasp has {len(q)} entries, model needs {model.n_dof}")
        return q
    raise ContractError("provide --q or --grasp-file")


def _mid_range_init(model: KinematicModel, wrist: np.ndarray) -> np.ndarray:
    q = 0.5 * (model.lower + model.upper)
    q[:6] = wrist
    return q


def _sampling_config(args, seed: int) -> SamplingConfig:
    return SamplingConfig(n_per_link=args.n_per_link, n_total=args.n_total,
                          n_object=args.n_object,
                          object_noise_sigma=args.noise_sigma,
                          object_pool=args.object_pool, seed=seed)


def _solve_params(args) -> SolveParams:
    return SolveParams(step_bound=args.step_bound, max_iters=args.max_iters,
                       tol_step=args.tol_step, tol_residual=args.tol_residual,
                       damping=args.damping)


def _geometric_links(model: KinematicModel, canonical) -> list[str]:
    return [l for l in model.links if l in canonical or l in model.tip_links]


def _random_trial_config(model: KinematicModel, rng: np.random.Generator) -> np.ndarray:
    q = np.empty(model.n_dof)
    q[:3] = rng.uniform(-TRIAL_WRIST_RANGE, TRIAL_WRIST_RANGE, 3)
    q[3:6] = rng.uniform(-np.pi, np.pi, 3)
    q[6:] = rng.uniform(model.lower[6:], model.upper[6:])
    return q


def _link_errors(model: KinematicModel, links: list[str], q_a, q_b) -> np.ndarray:
    pa = forward_kinematics(model, q_a)
    pb = forward_kinematics(model, q_b)
    return np.array([np.linalg.norm(pa.translation(l) - pb.translation(l))
                     for l in links])


# ---------------------------------------------------------------- commands

def cmd_sample(args) -> int:
    model = _load_model_file(args.model)
    meshes = _load_meshes(model, args.mesh_dir)
    cfg = _sampling_config(args, args.seed)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    canonical = sample_link_clouds(model, meshes, cfg)
    labels = [l for l, pts in canonical.items() for _ in range(len(pts))]
    robot_cloud = PointCloud(np.vstack(list(canonical.values())), labels)
    robot_path = out_dir / "robot_canonical.dropc"
    write_dropc(robot_path, robot_cloud)
    outputs = [robot_path]

    inputs = {"model": args.model}
    counts = {"robot_points": len(robot_cloud),
              "links": {l: int(len(pts)) for l, pts in canonical.items()}}
    if args.object is not None:
        obj_path = _require_file(args.object, "object mesh")
        obj_cloud = sample_object_cloud(load_obj(obj_path.read_text()), cfg)
        object_out = out_dir / "object.dropc"
        write_dropc(object_out, obj_cloud)
        outputs.append(object_out)
        inputs["object"] = str(obj_path)
        counts["object_points"] = len(obj_cloud)

    _manifest(out_dir, "sample_manifest.json", "sample", args.seed, inputs,
              {"sampling": vars(cfg), "counts": counts}, outputs)
    print(json.dumps({"written": [str(p) for p in outputs]}))
    return EXIT_OK


def cmd_compute_dro(args) -> int:
    robot_path = _require_file(args.robot_cloud, "robot cloud")
    object_path = _require_file(args.object_cloud, "object cloud")
    model = _load_model_file(args.model)
    robot_cloud = read_dropc(robot_path)
    if robot_cloud.labels is None:
        raise DataError(f"{robot_path}: robot cloud must be labeled")
    object_cloud = read_dropc(object_path)
    q = _resolve_q(args, model)

    posed = cloud_fk(model, q, robot_cloud.by_link())
    matrix = compute_dro(posed, object_cloud, block=args.block)

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / args.out
    write_dromx(out_path, matrix, dtype=args.dtype)
    inputs = {"robot_cloud": str(robot_path), "object_cloud": str(object_path),
              "model": args.model}
    if args.grasp_file is not None:
        inputs["grasp_file"] = str(args.grasp_file)
    _manifest(out_dir, "dro_manifest.json", "compute-dro", args.seed, inputs,
              {"q": [float(v) for v in q], "block": args.block, "dtype": args.dtype},
              [out_path])
    print(json.dumps({"written": [str(out_path)], "shape": list(matrix.shape)}))
    return EXIT_OK


def cmd_recover(args) -> int:
    dro_path = _require_file(args.dro, "distance matrix")
    object_path = _require_file(args.object_cloud, "object cloud")
    robot_path = _require_file(args.robot_cloud, "robot cloud")
    model = _load_model_file(args.model)
    robot_cloud = read_dropc(robot_path)
    if robot_cloud.labels is None:
        raise DataError(f"{robot_path}: robot cloud must be labeled")
    model = model.with_clouds(robot_cloud.by_link())
    object_cloud = read_dropc(object_path)
    matrix = np.asarray(read_dromx(dro_path), dtype=float)

    if matrix.shape != (len(robot_cloud), len(object_cloud)):
        raise ContractError(
            f"matrix shape {matrix.shape} does not match robot cloud "
            f"({len(robot_cloud)}) x object cloud ({len(object_cloud)})")

    if args.q_init is not None:
        q_init = _parse_q(args.q_init, model.n_dof)
    else:
        q_init = _mid_range_init(model, np.zeros(6))
    result = recover_grasp(model, matrix, object_cloud, q_init, _solve_params(args))

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    result_path = out_dir / "recover_result.json"
    _write_json(result_path, result.to_json_dict())
    outputs = [result_path]
    if args.emit_cloud:
        cloud_path = out_dir / "recovered.dropc"
        write_dropc(cloud_path, result.recovered_cloud)
        outputs.append(cloud_path)
    _manifest(out_dir, "recover_manifest.json", "recover", args.seed,
              {"dro": str(dro_path), "object_cloud": str(object_path),
               "robot_cloud": str(robot_path), "model": args.model},
              {"q_init": [float(v) for v in q_init]}, outputs[1:])
    print(json.dumps(result.to_json_dict()))
    return EXIT_OK


def _prepare_embodiment(args):
    """Shared setup for roundtrip and bench: model with clouds + object cloud."""
    model = _load_model_file(args.model)
    meshes = _load_meshes(model, args.mesh_dir)
    obj_file = _require_file(args.object, "object mesh")
    cfg = _sampling_config(args, args.seed)
    canonical = sample_link_clouds(model, meshes, cfg)
    model = model.with_clouds(canonical)
    object_cloud = sample_object_cloud(load_obj(obj_file.read_text()), cfg)
    return model, object_cloud


def _run_trial(model: KinematicModel, object_cloud: PointCloud, seed: int,
               trial: int, params: SolveParams):
    rng = substream(seed, f"trial:{trial}")
    q_true = _random_trial_config(model, rng)
    posed = cloud_fk(model, q_true, model.canonical_clouds)
    matrix = compute_dro(posed, object_cloud)
    q_init = _mid_range_init(model, q_true[:6])
    result = recover_grasp(model, matrix, object_cloud, q_init, params)
    links = _geometric_links(model, model.canonical_clouds)
    errors = _link_errors(model, links, result.q, q_true)
    joint_err = float(np.abs(result.q - q_true).mean())
    return errors, joint_err, result.elapsed


def cmd_roundtrip(args) -> int:
    out = {"trials": args.trials}
    if args.trials > 0:
        model, object_cloud = _prepare_embodiment(args)
        params = _solve_params(args)

        def run(i):
            return _run_trial(model, object_cloud, args.seed, i, params)

        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                results = list(pool.map(run, range(args.trials)))
        else:
            results = [run(i) for i in range(args.trials)]

        all_errors = np.concatenate([r[0] for r in results])
        joint_errors = [r[1] for r in results]
        stages = ("multilateration", "registration", "optimization")
        timings = {s: float(np.mean([r[2][s] for r in results])) for s in stages}
        out.update({
            "mean_link_error_m": float(all_errors.mean()),
            "max_link_error_m": float(all_errors.max()),
            "mean_joint_error": float(np.mean(joint_errors)),
            "timings_mean_s": timings,
            "tolerances": {"mean_m": args.tol_mean, "max_m": args.tol_max},
        })
        out["pass"] = bool(out["mean_link_error_m"] < args.tol_mean
                           and out["max_link_error_m"] < args.tol_max)
    payload = json.dumps(out, indent=2, sort_keys=True)
    print(payload)
    if args.output is not None:
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "roundtrip_summary.json").write_text(payload + "\n")
    if args.trials > 0 and not out["pass"]:
        raise ToleranceFailure(
            f"round-trip error {out['mean_link_error_m']:.2e} mean / "
            f"{out['max_link_error_m']:.2e} max exceeds tolerances")
    return EXIT_OK


def cmd_bench(args) -> int:
    model, object_cloud = _prepare_embodiment(args)
    params = _solve_params(args)
    rng = substream(args.seed, "trial:bench")
    q_true = _random_trial_config(model, rng)
    posed = cloud_fk(model, q_true, model.canonical_clouds)
    matrix = compute_dro(posed, object_cloud)
    q_init = _mid_range_init(model, q_true[:6])

    stages = ("multilateration", "registration", "optimization")
    samples: dict[str, list[float]] = {s: [] for s in stages}
    samples["total"] = []
    for run in range(args.warmup + args.runs):
        t0 = time.perf_counter()
        result = recover_grasp(model, matrix, object_cloud, q_init, params)
        total = time.perf_counter() - t0
        if run < args.warmup:
            continue
        for s in stages:
            samples[s].append(result.elapsed[s])
        samples["total"].append(total)

    report = {
        name: {"median_s": float(statistics.median(vals)),
               "p95_s": float(np.percentile(vals, 95))}
        for name, vals in samples.items()
    }
    payload = json.dumps(report, indent=2, sort_keys=True)
    print(payload)
    if args.output is not None:
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bench_timings.json").write_text(payload + "\n")
    return EXIT_OK


def cmd_losses(args) -> int:
    kind = args.kind
    if kind == "dro-l1":
        pred = read_dromx(_require_file(args.files[0], "prediction matrix"))
        gt = read_dromx(_require_file(args.files[1], "ground-truth matrix"))
        out = {"dro_l1": dro_l1_loss(np.asarray(pred, dtype=float),
                                     np.asarray(gt, dtype=float))}
    elif kind == "contrastive":
        phi_a = read_dromx(_require_file(args.files[0], "feature matrix A"))
        phi_b = read_dromx(_require_file(args.files[1], "feature matrix B"))
        pts = read_dropc(_require_file(args.files[2], "point cloud"))
        out = {"contrastive": contrastive_loss(np.asarray(phi_a, dtype=float),
                                               np.asarray(phi_b, dtype=float),
                                               pts.points, tau=args.tau, lam=args.lam)}
    elif kind == "pose":
        def load_poses(path, what):
            f = _require_file(path, what)
            try:
                return LinkPoseSet.from_json_dict(json.loads(f.read_text()))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{f}: not a valid pose file: {exc}") from exc

        poses = load_poses(args.files[0], "pose file")
        gt = load_poses(args.files[1], "ground-truth pose file")
        common = [l for l in poses.links if l in gt]
        if not common:
            raise DataError("pose files share no links")
        values = [pose_loss((poses.rotation(l), poses.translation(l)),
                            (gt.rotation(l), gt.translation(l))) for l in common]
        out = {"pose": float(np.mean(values))}
    elif kind == "penetration":
        cloud = read_dropc(_require_file(args.files[0], "point cloud"))
        mesh = load_obj(_require_file(args.files[1], "object mesh").read_text())
        out = {"penetration": penetration_loss(cloud, mesh)}
    else:  # pragma: no cover - argparse restricts choices
        raise ContractError(f"unknown loss kind '{kind}'")
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- argument plumbing

_EXPECTED_FILES = {"dro-l1": 2, "contrastive": 3, "pose": 2, "penetration": 2}


def _add_sampling_flags(p):
    p.add_argument("--n-per-link", type=int, default=512)
    p.add_argument("--n-total", type=int, default=512)
    p.add_argument("--n-object", type=int, default=512)
    p.add_argument("--noise-sigma", type=float, default=0.002)
    p.add_argument("--object-pool", type=int, default=65536)


def _add_solver_flags(p):
    p.add_argument("--step-bound", type=float, default=0.5)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol-step", type=float, default=1e-4)
    p.add_argument("--tol-residual", type=float, default=1e-5)
    p.add_argument("--damping", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dro",
        description="Distance-matrix grasp toolkit: sampling, ground-truth "
                    "matrices, and joint recovery.")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON config file supplying defaults")
    parser.add_argument("--output", type=str, default=None,
                        help="output directory (default .)")
    parser.add_argument("--threads", type=int,
                        default=None, help="worker threads (env DRO_THREADS overrides)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("sample", help="sample canonical robot and object clouds")
    p.add_argument("--model", default=None, help="URDF file")
    p.add_argument("--mesh-dir", default=None, help="directory of <link>.obj meshes")
    p.add_argument("--object", default=None, help="object OBJ file")
    _add_sampling_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("compute-dro", help="ground-truth distance matrix at a grasp")
    p.add_argument("robot_cloud", help="canonical labeled DROPC file")
    p.add_argument("object_cloud", help="object DROPC file")
    p.add_argument("--model", default=None)
    p.add_argument("--q", default=None, help="comma-separated configuration")
    p.add_argument("--grasp-file", default=None, help="grasp-record JSONL file")
    p.add_argument("--grasp-index", type=int, default=0)
    p.add_argument("--block", type=int, default=4)
    p.add_argument("--dtype", choices=("f64", "f32"), default="f64")
    p.add_argument("--out", default="dro.dromx")
    p.set_defaults(func=cmd_compute_dro)

    p = sub.add_parser("recover", help="recover a grasp configuration from a matrix")
    p.add_argument("dro", help="DROMX file")
    p.add_argument("object_cloud", help="object DROPC file")
    p.add_argument("--model", default=None)
    p.add_argument("--robot-cloud", required=True, help="canonical labeled DROPC file")
    p.add_argument("--q-init", default=None, help="comma-separated initial configuration")
    p.add_argument("--emit-cloud", action="store_true",
                   help="also write the recovered labeled cloud")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("roundtrip", help="random grasps -> matrices -> recovery check")
    p.add_argument("--model", default=None)
    p.add_argument("--mesh-dir", default=None)
    p.add_argument("--object", default=None)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--tol-mean", type=float, default=1e-3)
    p.add_argument("--tol-max", type=float, default=5e-3)
    _add_sampling_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("bench", help="stage timing of the recovery pipeline")
    p.add_argument("--model", default=None)
    p.add_argument("--mesh-dir", default=None)
    p.add_argument("--object", default=None)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    _add_sampling_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("losses", help="batch loss evaluation over files")
    p.add_argument("kind", choices=sorted(_EXPECTED_FILES))
    p.add_argument("files", nargs="+")
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=10.0)
    p.set_defaults(func=cmd_losses)

    return parser


def _apply_config(args) -> None:
    """Fill unset args from the JSON config file, validating paths."""
    if args.config is None:
        return
    cfg_path = _require_file(args.config, "config file")
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"config {cfg_path} is not valid JSON: {exc}") from exc
    mapping = {
        "model_path": "model", "mesh_dir": "mesh_dir", "object_path": "object",
        "seed": "seed", "output_dir": "output",
    }
    for key, attr in mapping.items():
        if key in cfg and getattr(args, attr, None) is None:
            setattr(args, attr, cfg[key])
    for section, keys in (("sampling", ("n_per_link", "n_total", "n_object",
                                        "object_noise_sigma", "object_pool")),
                          ("solve", ("step_bound", "max_iters", "tol_step",
                                     "tol_residual", "damping"))):
        for key in cfg.get(section, {}):
            if key not in keys:
                raise ContractError(f"config {section}.{key} is not a known field")
            attr = "noise_sigma" if key == "object_noise_sigma" else key
            if hasattr(args, attr):
                setattr(args, attr, cfg[section][key])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        if args.seed is None:
            args.seed = 0
        if args.output is None:
            args.output = "."
        env_threads = os.environ.get("DRO_THREADS")
        if env_threads is not None:
            args.threads = int(env_threads)
        elif args.threads is None:
            args.threads = 1
        if args.threads < 1:
            raise ContractError("--threads must be at least 1")
        if getattr(args, "kind", None) is not None:
            expected = _EXPECTED_FILES[args.kind]
            if len(args.files) != expected:
                raise ContractError(f"losses {args.kind} takes {expected} files, "
                                    f"got {len(args.files)}")
        return args.func(args)
    except ToleranceFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, _DATA_ERRORS) else EXIT_VALIDATION
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
