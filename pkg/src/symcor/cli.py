"""Command-line driver.

Four subcommands: ``explain`` runs the full search on a rejected input and
writes the result JSON, ``verify`` re-checks an emitted result from scratch
by sampling, ``oracle`` brute-forces a lattice ground truth on up to three
features, and ``plotdata`` flattens a result into CSV segments for
plotting.  Exit codes are a contract:

    0  success
    1  usage or parse error
    2  no interpretation found (reason is stage-tagged on stdout)
    3  instance already classifies as the desired label
    4  verification failure

Feature indices on the command line are 0-based.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import geometry, lincons, metrics, oracle, relunet, search
from .errors import CorrectionFailure
from .geometry import GrowthParams
from .metrics import DistanceConfig
from .search import SearchParams


def _read_network(path: str):
    return relunet.load_network(Path(path).read_text())


def _parse_index_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ValueError("expected comma-separated integers, got %r" % text)


def _parse_instance(text: str) -> np.ndarray:
    """Inline comma-separated floats, or a path to a JSON array / one-line CSV."""
    path = Path(text)
    if path.exists():
        raw = path.read_text().strip()
        if path.suffix == ".json" or raw.startswith("["):
            return np.array(json.loads(raw), dtype=float)
        line = next(ln for ln in raw.splitlines() if ln.strip())
        return np.array([float(tok) for tok in line.replace(",", " ").split()])
    try:
        return np.array([float(tok) for tok in text.split(",") if tok.strip()])
    except ValueError:
        raise ValueError("instance %r is neither a file nor a float list" % text)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    obj = json.loads(Path(path).read_text())
    if not isinstance(obj, dict):
        raise ValueError("config must be a JSON object")
    return obj


def _domain_bounds(config: dict, input_dim: int):
    domain = config.get("domain")
    if domain is None:
        return None
    lo = np.array(domain["lo"], dtype=float)
    hi = np.array(domain["hi"], dtype=float)
    if lo.shape != (input_dim,) or hi.shape != (input_dim,):
        raise ValueError("domain bounds must have the network's input dim")
    return lo, hi


def _build_params(config: dict, args, input_dim: int):
    """Config file first, explicit flags override field by field."""
    kw = dict(config.get("search", {}))
    for flag, key in (("n", "n"), ("m", "m"), ("shape", "shape"),
                      ("sigma", "sigma"), ("seed", "rng_seed"),
                      ("epsilon_strict", "eps_strict"), ("workers", "workers")):
        val = getattr(args, flag, None)
        if val is not None:
            kw[key] = val
    if getattr(args, "features", None):
        kw["feature_subsets"] = [_parse_index_list(args.features)]
        kw["n"] = len(kw["feature_subsets"][0])
    bounds = _domain_bounds(config, input_dim)
    growth = GrowthParams(**config.get("growth", {}))
    if config.get("distance") is not None:
        cfg = DistanceConfig.from_json(config["distance"])
    else:
        cfg = metrics.default_config(input_dim, bounds)
    if getattr(args, "e", None) is not None:
        cfg = replace(cfg, e=args.e)
    params = SearchParams(bounds=bounds, distance=cfg, growth=growth, **kw)
    return params, cfg


def _search_to_json(p: SearchParams) -> dict:
    return {
        "n": p.n,
        "m": None if p.m == math.inf else p.m,
        "max_fgsm_iters": p.max_fgsm_iters,
        "fgsm_step": p.fgsm_step,
        "mutable_features": None if p.mutable_features is None
        else list(p.mutable_features),
        "desired_label": p.desired_label,
        "rng_seed": p.rng_seed,
        "sigma": p.sigma,
        "shape": p.shape,
        "eps_strict": p.eps_strict,
        "workers": p.workers,
        "feature_subsets": None if p.feature_subsets is None
        else [list(s) for s in p.feature_subsets],
    }


def _growth_to_json(g: GrowthParams) -> dict:
    return {"init_scale": g.init_scale, "step": g.step,
            "max_stalls": g.max_stalls,
            "containment_samples": g.containment_samples,
            "max_iters": g.max_iters}


def _config_to_json(params: SearchParams, cfg: DistanceConfig) -> dict:
    out = {
        "search": _search_to_json(params),
        "distance": cfg.to_json(),
        "growth": _growth_to_json(params.growth),
        "domain": None,
    }
    if params.bounds is not None:
        lo, hi = params.bounds
        out["domain"] = {"lo": lo.tolist(), "hi": hi.tolist()}
    return out


def _emit(payload: dict, out_path: str | None):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path is None:
        print(text)
    else:
        Path(out_path).write_text(text + "\n")


def cmd_explain(args) -> int:
    net = _read_network(args.network)
    v = _parse_instance(args.instance)
    if v.shape != (net.input_dim,):
        print("error: instance has %d values, network expects %d"
              % (v.size, net.input_dim), file=sys.stderr)
        return 1
    config = _load_config(args.config)
    params, cfg = _build_params(config, args, net.input_dim)

    if relunet.classify(net, v) == params.desired_label:
        print("instance already classifies as label %d; nothing to correct"
              % params.desired_label)
        return 3

    t0 = time.perf_counter()
    try:
        interp = search.find_interpretation(net, v, params)
    except CorrectionFailure as failure:
        print("no interpretation [%s]: %s" % (failure.stage, failure))
        return 2
    elapsed = time.perf_counter() - t0

    result = {
        "interpretation": search.interpretation_to_json(interp),
        "regions": [lincons.region_to_json(r) for r in interp.regions],
        "config": _config_to_json(params, cfg),
        "elapsed": elapsed,
    }
    _emit(result, args.out)

    base_s = interp.base[list(interp.features)]
    print("interpretation found: %s over features %s"
          % (interp.correction.kind, list(interp.features)))
    print("  distance %.6g, %d regions, %d lp calls, %.2fs"
          % (interp.distance, interp.regions_explored,
             interp.diagnostics.get("lp_calls", 0), elapsed))
    print("  stable center (absolute units): %s"
          % np.array2string(base_s + interp.stable_center, precision=6))
    return 0


def _load_result(path: str):
    obj = json.loads(Path(path).read_text())
    interp = obj["interpretation"]
    base = np.array(interp["base"], dtype=float)
    correction = geometry.correction_from_json(interp["correction"], base)
    regions = [lincons.region_from_json(r) for r in obj["regions"]]
    cfg = DistanceConfig.from_json(obj["config"]["distance"])
    return obj, interp, correction, regions, cfg


def cmd_verify(args) -> int:
    if args.samples < 1:
        print("error: --samples must be >= 1", file=sys.stderr)
        return 1
    net = _read_network(args.network)
    obj, interp, correction, regions, cfg = _load_result(args.result)
    desired = int(interp["desired_label"])
    base = np.array(interp["base"], dtype=float)
    s = tuple(interp["features"])
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)

    # 1. fresh samples from the correction must all flip the label
    X = geometry.uniform_sample(correction, args.samples, rng)
    labels = np.argmax(relunet.forward(net, lincons.embed(base, s, X)), axis=1)
    flips = int((labels == desired).sum())
    flip_rate = flips / args.samples

    # 2. the stability ball around the reported center stays inside the
    #    shape and flips as well
    center = np.array(interp["stable_center"], dtype=float)
    axes = tuple(interp["stability_axes"])
    ball = metrics.ball_points(correction, center, cfg, axes=axes, rng=rng)
    ball_inside = bool(geometry.shape_membership(correction, ball).all())
    ball_labels = np.argmax(relunet.forward(net, lincons.embed(base, s, ball)),
                            axis=1)
    ball_flips = bool((ball_labels == desired).all())
    ball_ok = ball_inside and ball_flips

    # 3. informational: does the shape escape the recorded region union
    audit_violations = (geometry.audit_containment(correction, regions,
                                                   args.samples, rng)
                        if regions else None)

    print("flip rate: %.6f (%d/%d)" % (flip_rate, flips, args.samples))
    print("stability ball: %s (inside shape: %s, flips: %s)"
          % ("pass" if ball_ok else "FAIL", ball_inside, ball_flips))
    if audit_violations is not None:
        print("region audit: %d/%d samples outside the recorded union"
              % (audit_violations, args.samples))
    if flip_rate == 1.0 and ball_ok:
        print("verification passed")
        return 0
    print("verification FAILED")
    return 4


def cmd_oracle(args) -> int:
    net = _read_network(args.network)
    v = _parse_instance(args.instance)
    if v.shape != (net.input_dim,):
        print("error: instance has %d values, network expects %d"
              % (v.size, net.input_dim), file=sys.stderr)
        return 1
    s = _parse_index_list(args.features)
    config = _load_config(args.config)
    bounds = _domain_bounds(config, net.input_dim)
    if bounds is None:
        bounds = (np.zeros(net.input_dim), np.ones(net.input_dim))
    desired = config.get("search", {}).get("desired_label", 1)
    weights = None
    if config.get("distance") is not None:
        weights = np.array(config["distance"]["weights"], dtype=float)

    try:
        report = oracle.run_oracle(net, v, s, bounds, args.grid,
                                   weights=weights, desired=desired)
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    _emit(report, args.out)
    return 0


def _polygon_vertices(system: lincons.ConstraintSystem, tol: float = 1e-9) -> np.ndarray:
    """Vertices of a bounded 2-D polyhedron, in boundary order.

    Intersects boundary lines pairwise and keeps the points satisfying
    everything else; assumes the domain bounds keep the region bounded.
    """
    rows, offs = [], []
    for c in system.constraints:
        rows.append(c.coeffs)
        offs.append(c.offset)
    if system.bounds is not None:
        lo, hi = system.bounds
        for i in range(2):
            if np.isfinite(lo[i]):
                rows.append(np.eye(2)[i])
                offs.append(-lo[i])
            if np.isfinite(hi[i]):
                rows.append(-np.eye(2)[i])
                offs.append(hi[i])
    A = np.array(rows)
    b = np.array(offs)
    points = []
    for i, j in itertools.combinations(range(len(A)), 2):
        M = A[[i, j]]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        p = np.linalg.solve(M, -b[[i, j]])
        if np.all(A @ p + b >= -tol):
            points.append(p)
    if not points:
        return np.empty((0, 2))
    pts = np.unique(np.round(np.array(points), 12), axis=0)
    mid = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - mid[1], pts[:, 0] - mid[0]))
    return pts[order]


def cmd_plotdata(args) -> int:
    obj, interp, correction, regions, _ = _load_result(args.result)
    base = np.array(interp["base"], dtype=float)
    instance = np.array(interp["instance"], dtype=float)
    s = tuple(interp["features"])
    center = np.array(interp["stable_center"], dtype=float)

    if len(s) == 2:
        pos = (0, 1)
    elif args.project:
        proj = _parse_index_list(args.project)
        if len(proj) != 2 or any(f not in s for f in proj):
            print("error: --project needs two feature indices from %s"
                  % list(s), file=sys.stderr)
            return 1
        pos = tuple(s.index(f) for f in proj)
    else:
        print("error: result spans %d features; pass --project i,j" % len(s),
              file=sys.stderr)
        return 1
    fx, fy = s[pos[0]], s[pos[1]]
    offset = np.array([base[fx], base[fy]])

    def rows_of(name, pts2):
        return [(name, float(x + offset[0]), float(y + offset[1]))
                for x, y in pts2]

    out_rows = []
    if len(s) == 2 and regions:
        for idx, region in enumerate(regions):
            poly = _polygon_vertices(region.system)
            if poly.shape[0] >= 2:
                closed = np.vstack([poly, poly[:1]])
                out_rows += rows_of("region%d" % idx, closed)
    if correction.kind == "box":
        lo = correction.lo[list(pos)]
        hi = correction.hi[list(pos)]
        poly = np.array([[lo[0], lo[1]], [hi[0], lo[1]],
                         [hi[0], hi[1]], [lo[0], hi[1]], [lo[0], lo[1]]])
    else:
        verts = correction.vertices[:, list(pos)]
        mid = verts.mean(axis=0)
        order = np.argsort(np.arctan2(verts[:, 1] - mid[1],
                                      verts[:, 0] - mid[0]))
        poly = np.vstack([verts[order], verts[order][:1]])
    out_rows += rows_of("correction", poly)
    out_rows += [("instance", float(instance[fx]), float(instance[fy]))]
    out_rows += rows_of("center", [center[list(pos)]])

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "x", "y"])
        writer.writerows(out_rows)
    print("wrote %d rows to %s" % (len(out_rows), args.out))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symcor",
        description="Symbolic corrections for inputs a ReLU classifier rejects.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--network", required=True, help="network JSON path")
        p.add_argument("--instance", required=True,
                       help="inline floats 'x1,x2,...' or a file path")
        p.add_argument("--config", help="config JSON path")

    p = sub.add_parser("explain", help="search for a symbolic correction")
    common(p)
    p.add_argument("--features", help="0-based indices, e.g. '0,1'")
    p.add_argument("--n", type=int, help="subset size to enumerate")
    p.add_argument("--m", type=int, help="region cap (default 100)")
    p.add_argument("--e", type=float, help="stability scale (default 1)")
    p.add_argument("--shape", choices=("box", "simplex"))
    p.add_argument("--sigma", type=float, help="adversarial filter radius")
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon-strict", type=float, dest="epsilon_strict")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="result JSON path (stdout when omitted)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("verify", help="re-check a result by fresh sampling")
    p.add_argument("--network", required=True)
    p.add_argument("--result", required=True, help="explain's result JSON")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="grid ground truth on <=3 features")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("plotdata", help="flatten a result to plotting CSV")
    p.add_argument("--result", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--project", help="two feature indices for >2-D results")
    p.set_defaults(func=cmd_plotdata)
    return parser


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; fold into the contract
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, KeyError, ValueError,
            relunet.NetworkFormatError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
