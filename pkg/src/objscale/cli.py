"""Command-line front end.

Exit codes: 0 success, 1 input or usage error, 2 domain failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation, joint, priors, scale, sim
from .errors import (DegenerateGeometry, GaugeError, NoAssociations, NoUsableObjects,
                     ObjScaleError, ParseError, SingularNormalEquations, UnknownClass,
                     ValidationError)
from .geometry import RigidPose

log = logging.getLogger("objscale")

DEFAULT_NOISE = sim.NoiseConfig(bbox_sigma_px=2.0, pixel_sigma_px=1.0, dim_noise_frac=0.05,
                                detection_prob_mean=0.8, detection_prob_std=0.1)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _seed_range(text):
    try:
        a, b = text.split("..")
        a, b = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if b < a:
        raise argparse.ArgumentTypeError("empty seed range")
    return list(range(a, b + 1))


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None


# -- simulate ---------------------------------------------------------------------------------

def _sim_setup(doc, preset):
    """Scene spec and noise from a preset name plus optional JSON overrides."""
    base = sim.PRESETS[doc.get("preset", preset)] if doc.get("preset", preset) in sim.PRESETS else None
    if base is None:
        raise UsageError(f"unknown preset {doc.get('preset')!r}")
    spec = sim.SceneSpec.from_dict({**base.to_dict(), **doc.get("scene", {})})
    noise = sim.NoiseConfig.from_dict({**DEFAULT_NOISE.to_dict(), **doc.get("noise", {})})
    return spec, noise


def cmd_simulate(args):
    doc = {}
    if args.spec:
        doc = _read_json(args.spec)
    spec, noise = _sim_setup(doc, args.preset)
    if args.noise_free:
        noise = sim.NoiseConfig()
    repo = priors.load_priors(args.priors) if args.priors else priors.builtin_sample_priors()
    scene = sim.generate_scene(spec, args.seed, repo)
    obs = sim.observe(scene, replace(noise, rng_seed=args.seed), priors=repo)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim.save_scene(scene, out / "scene.json")
    sim.save_map(obs.map, out / "map.json")
    priors.save_priors(repo, out / "priors.json")
    _write(out / "detections.json", sim.dumps([
        {"frame": d.frame, "object_id": d.object_id, "class": d.class_name,
         "bbox": d.bbox.as_array().tolist(), "prob": d.prob} for d in obs.detections]))
    sim.export_trajectories(scene, [p for _, p in obs.map.cameras],
                            out / "gt.txt", out / "est_unscaled.txt")
    _write(out / "config.json", sim.dumps({"preset": args.preset, "seed": args.seed,
                                           "scene": spec.to_dict(), "noise": noise.to_dict()}))
    print(f"wrote scene with {len(scene.objects)} objects, {len(scene.cameras)} cameras to {out}")
    return 0


# -- estimate -----------------------------------------------------------------------------------

def _options(args):
    return scale.PipelineOptions(outlier_elimination=not args.no_outlier_elim,
                                 dimension_selection=not args.no_dim_select,
                                 uncertainty=not args.no_uncertainty,
                                 confidence_floor=args.confidence_floor)


def _weights(args):
    return scale.ConfidenceWeights(args.w1, args.w2, args.w3, args.a, args.b)


def _sample_row(s: scale.DimensionSample, status):
    return {"object_id": s.object_id, "dim_index": s.dim_index, "dim": s.dim,
            "prior_mean": s.prior.mean, "prior_std": s.prior.std,
            "confidence": s.confidence, "local_scale": s.local_scale, "status": status}


def _load_objects(path):
    doc = _read_json(path)
    try:
        if isinstance(doc, list):
            return [scale.ObjectEstimate.from_dict(d) for d in doc], None, None
        umap = sim.UnscaledMap.from_dict(doc) if "cameras" in doc else None
        ests = umap.estimates if umap else [scale.ObjectEstimate.from_dict(d) for d in doc["estimates"]]
        return ests, doc.get("true_scale"), umap
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ObjScaleError):
            raise
        raise ParseError(f"{path}: malformed objects: {exc!r}") from None


def _estimate_single(args, repo):
    objects, truth, _ = _load_objects(args.map)
    sol = scale.run_pipeline(objects, repo, _weights(args), _options(args))
    rows = [_sample_row(s, "inlier") for s in sol.inliers] + \
           [_sample_row(s, "outlier") for s in sol.outliers]
    rows.sort(key=lambda r: (r["object_id"], r["dim_index"]))
    report = {"scale": sol.scale, "weighted_residual": sol.weighted_residual,
              "num_inliers": sol.num_inliers, "inlier_ids": sol.inlier_ids,
              "outlier_ids": sorted({s.object_id for s in sol.outliers}),
              "skipped_ids": sol.skipped_ids, "rejected_ids": sol.rejected_ids,
              "true_scale": truth,
              "rse_if_truth_known": None if truth is None else evaluation.rse(sol.scale, truth),
              "samples": rows}
    _write(args.out, evaluation.dumps_json(report))
    _write(Path(args.out).with_suffix(".csv"), evaluation.report_csv(rows))
    msg = f"scale {sol.scale:.6g} from {sol.num_inliers} dimensions"
    if truth is not None:
        msg += f", RSE {100 * report['rse_if_truth_known']:.3f}%"
    print(msg)
    return 0


def sweep(spec, noise, seeds, repo, weights=scale.ConfidenceWeights(),
          options=scale.PipelineOptions()):
    """One record per seed: simulate, observe, estimate, score."""
    records = []
    for seed in seeds:
        t0 = time.perf_counter()
        scene = sim.generate_scene(spec, seed, repo)
        obs = sim.observe(scene, replace(noise, rng_seed=seed), priors=repo,
                          point_observations=False)
        rec = {"seed": seed}
        try:
            sol = scale.run_pipeline(obs.map.estimates, repo, weights, options)
        except NoUsableObjects as exc:
            rec.update(scale=None, rse=None, ate=None, num_inliers=0, error=str(exc))
        else:
            est = [RigidPose(p.rotation, sol.scale * p.translation) for _, p in obs.map.cameras]
            ate = evaluation.ate_rmse(evaluation.Trajectory(scene.trajectory.stamps, est),
                                      scene.trajectory, "none").rmse
            rec.update(scale=sol.scale, rse=evaluation.rse(sol.scale, scene.true_scale),
                       ate=ate, num_inliers=sol.num_inliers, error=None)
        rec["runtime_ms"] = 1e3 * (time.perf_counter() - t0)
        records.append(rec)
    return records


def aggregate(records):
    agg = {}
    for key in ("rse", "ate"):
        vals = np.array([r[key] for r in records if r[key] is not None], dtype=float)
        if vals.size:
            agg[key] = {"mean": float(vals.mean()), "std": float(vals.std()),
                        "median": float(np.median(vals)), "max": float(vals.max())}
    agg["num_runs"] = len(records)
    agg["num_failed"] = sum(r["rse"] is None for r in records)
    return agg


def _estimate_sweep(args, repo):
    spec, noise = _sim_setup(_read_json(args.map), "indoor")
    records = sweep(spec, noise, args.seeds, repo, _weights(args), _options(args))
    agg = aggregate(records)
    _write(args.out, evaluation.dumps_json({"records": records, "aggregate": agg}))
    rows = [{k: r[k] for k in ("seed", "scale", "rse", "ate", "num_inliers", "runtime_ms")}
            for r in records]
    if "rse" in agg:
        rows.append({"seed": "mean", "scale": None, "rse": agg["rse"]["mean"],
                     "ate": agg.get("ate", {}).get("mean"), "num_inliers": None, "runtime_ms": None})
        rows.append({"seed": "std", "scale": None, "rse": agg["rse"]["std"],
                     "ate": agg.get("ate", {}).get("std"), "num_inliers": None, "runtime_ms": None})
    _write(Path(args.out).with_suffix(".csv"), evaluation.report_csv(rows))
    if "rse" not in agg:
        print("no seed produced a usable estimate", file=sys.stderr)
        return 2
    print(f"RSE(%) {100 * agg['rse']['mean']:.2f}  std {100 * agg['rse']['std']:.2f}  "
          f"over {agg['num_runs']} seeds")
    return 0


def cmd_estimate(args):
    repo = priors.load_priors(args.priors)
    if args.seeds:
        return _estimate_sweep(args, repo)
    return _estimate_single(args, repo)


# -- optimize -----------------------------------------------------------------------------------

def cmd_optimize(args):
    problem = joint.load_problem(args.problem)
    config = joint.SolverConfig(max_iterations=args.max_iters,
                                robust_kernel="huber" if args.huber else None)
    solved, report = joint.solve(problem, config)
    joint.save_problem(solved, args.out)
    _write(Path(args.out).with_suffix(".report.json"), evaluation.dumps_json(report.to_dict()))
    print(f"{report.reason}: chi2 {report.initial_chi2:.6g} -> {report.final_chi2:.6g} "
          f"in {report.iterations} iterations")
    return 0


# -- eval ---------------------------------------------------------------------------------------------

def cmd_eval(args):
    est = evaluation.load_tum(args.est)
    gt = evaluation.load_tum(args.gt)
    res = evaluation.ate_rmse(est, gt, args.mode, args.max_dt)
    report = evaluation.metrics_report(res, args.mode)
    sim3 = res.alignment
    if args.mode != "sim3":
        try:
            sim3 = evaluation.ate_rmse(est, gt, "sim3", args.max_dt).alignment
        except DegenerateGeometry as exc:
            # a collinear path (a straight drive) still has an ATE, but no
            # unique similarity alignment
            log.warning("no ground-truth scale: %s", exc)
            sim3 = None
    # the similarity scale mapping the estimate onto ground truth is the
    # ground-truth scale factor of the estimate's map
    report["gt_scale"] = None if sim3 is None else sim3.scale
    report["estimated_scale"] = args.scale_estimate
    report["rse"] = None if sim3 is None else evaluation.rse(args.scale_estimate, sim3.scale)
    _write(args.out, evaluation.dumps_json(report))
    row = {k: report[k] for k in ("mode", "num_pairs", "ate_rmse", "ate_mean", "ate_max",
                                  "gt_scale", "estimated_scale", "rse")}
    _write(Path(args.out).with_suffix(".csv"), evaluation.report_csv([row]))
    msg = f"ATE({args.mode}) {res.rmse:.6g}"
    if sim3 is not None:
        msg += f"  gt scale {sim3.scale:.6g}  RSE {100 * report['rse']:.3f}%"
    print(msg)
    return 0


# -- entry point ----------------------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="objscale", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic scene and its observations")
    s.add_argument("--preset", choices=sorted(sim.PRESETS), default="indoor")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--spec", help="JSON with 'scene' and 'noise' overrides")
    s.add_argument("--priors", help="prior file (default: built-in sample priors)")
    s.add_argument("--noise-free", action="store_true")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate the absolute scale of a map")
    e.add_argument("--map", required=True,
                   help="map/objects JSON, or a simulation spec JSON when --seeds is given")
    e.add_argument("--priors", required=True)
    e.add_argument("--no-outlier-elim", action="store_true")
    e.add_argument("--no-dim-select", action="store_true")
    e.add_argument("--no-uncertainty", action="store_true")
    e.add_argument("--seeds", type=_seed_range, help="seed sweep A..B (inclusive)")
    e.add_argument("--out", required=True)
    e.add_argument("--w1", type=float, default=1.0)
    e.add_argument("--w2", type=float, default=1.0)
    e.add_argument("--w3", type=float, default=1.0)
    e.add_argument("--a", type=float, default=10.0, help="log base for the point-count term")
    e.add_argument("--b", type=float, default=15.0, help="log base for the visibility term")
    e.add_argument("--confidence-floor", type=float, default=0.0)
    e.set_defaults(func=cmd_estimate)

    o = sub.add_parser("optimize", help="joint bundle adjustment of a problem file")
    o.add_argument("--problem", required=True)
    o.add_argument("--max-iters", type=int, default=100)
    o.add_argument("--out", required=True)
    o.add_argument("--huber", action="store_true", help="Huber kernel, delta 1 (whitened)")
    o.set_defaults(func=cmd_optimize)

    v = sub.add_parser("eval", help="RSE and ATE between TUM trajectories")
    v.add_argument("--est", required=True)
    v.add_argument("--gt", required=True)
    v.add_argument("--mode", choices=["none", "rigid", "sim3"], default="none")
    v.add_argument("--max-dt", type=_positive, default=0.02)
    v.add_argument("--scale-estimate", type=_positive, default=1.0,
                   help="scale applied to the estimate (default 1: already metric)")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParseError, ValidationError, GaugeError, UnknownClass,
            FileNotFoundError, IsADirectoryError) as exc:
        print(f"objscale: error: {exc}", file=sys.stderr)
        return 1
    except (NoUsableObjects, NoAssociations, SingularNormalEquations, ObjScaleError) as exc:
        print(f"objscale: failed: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"objscale: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
