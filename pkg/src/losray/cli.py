"""Command-line entry point: scene generation, LoS maps, tracing and benchmarks."""
from __future__ import annotations

import argparse
import gc
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .em import DEFAULT_FREQUENCY, HARD, SOFT, load_materials
from .generate import generate_scene, random_free_point
from .refine import DEFAULT_SEARCH_RADIUS, los_iou, load_predictions, perturb_attributes, reconstruct_los, \
    snap_and_refine
from .scene import SceneError, SceneParseError, load_scene, read_grid, save_scene, write_grid
from .sweep import check_tx, exact_los_map, exact_vertex_attributes, sweep_visibility_polygon, vertex_adjacency
from .synth import APS_BIN_DEG, EFFECTIVE_COUNT_DB, N_RAY, PDP_BIN_S, BeamPattern, TraceContext, aps_profile, \
    apply_beam, error_metrics, mimo_matrix, pdp_profile, read_rays, retarget_frequency, rss_map, trace_point, \
    write_metrics, write_profile, write_rays
from .tracer import DEFAULT_MAX_DEPTH, build_visibility_tree
from .vertical import DEFAULT_HEIGHT

log = logging.getLogger("losray")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_GEOMETRY = 4

BENCH_SIZES = (250, 500, 1000, 2000, 4000)


class ConfigError(Exception):
    pass


def _positive(kind):
    def conv(s):
        v = kind(s)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {s}")
        return v
    return conv


def _nonneg(s):
    v = float(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _rate(s):
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {s}")
    return v


def _existing(path):
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"no such file: {path}")
    return path


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scene(args):
    if args.scene is None:
        raise ConfigError("--scene is required")
    return load_scene(_existing(args.scene))


def _tx(args, scene):
    if args.tx is None:
        raise ConfigError("--tx is required")
    tx = (float(args.tx[0]), float(args.tx[1]))
    check_tx(tx, scene)
    return tx


def _materials(args):
    return load_materials(args.materials) if _existing(args.materials) else None


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- generate
def cmd_generate(args) -> None:
    scene = generate_scene(args.n_buildings, args.grid, args.seed, rectilinear=args.rectilinear,
                           layout=args.layout)
    out = _outdir(args)
    save_scene(scene, out / "scene.txt")
    log.info("wrote %d buildings to %s", len(scene.buildings), out / "scene.txt")


# ---------------------------------------------------------------- los
def cmd_los(args) -> None:
    scene = _scene(args)
    tx = _tx(args, scene)
    out = _outdir(args)
    exact = exact_los_map(tx, scene)
    attrs = exact_vertex_attributes(tx, scene)
    write_grid(exact, out / "los_exact.txt")
    attrs.save(out / "attributes.txt")

    if args.predictions is not None:
        pred = load_predictions(_existing(args.predictions), scene)
    else:
        pred = perturb_attributes(attrs, args.noise, args.flip, args.seed)
    if args.noise > 0 or args.flip > 0 or args.predictions is not None:
        pred.save(out / "attributes_pred.txt")
    boundary = snap_and_refine(pred, scene, args.search_radius)
    recon = reconstruct_los(pred, scene, args.search_radius)
    write_grid(recon, out / "los_reconstructed.txt")
    write_metrics({
        "m": scene.n_vertices,
        "M": boundary.boundary_vertex_count,
        "noise": float(args.noise),
        "flip": float(args.flip),
        "seed": args.seed,
        "iou": float(los_iou(recon, exact)),
        "visible_fraction": float(exact.mean()),
    }, out / "los_report.txt")


# ---------------------------------------------------------------- trace
def _trace_context(args, scene, tx):
    attrs = exact_vertex_attributes(tx, scene)
    adj = vertex_adjacency(scene)
    tree = build_visibility_tree(tx, attrs, adj, scene, args.max_depth, max_path_length=args.max_path_length,
                                 diffraction=not args.no_diffraction, reflection=not args.no_reflection)
    return TraceContext(scene, tree, _materials(args), args.frequency, args.polarization, args.n_ray)


def _receivers(scene, stride: int):
    occ = scene.occupancy
    dr = scene.resolution
    out = []
    for i in range(0, scene.grid_height, stride):
        for j in range(0, scene.grid_width, stride):
            if occ[i, j] == 0:
                out.append((i, j, ((j + 0.5) * dr, (i + 0.5) * dr)))
    return out


def _probe_pixel(scene, xy):
    dr = scene.resolution
    i, j = int(math.floor(xy[1] / dr)), int(math.floor(xy[0] / dr))
    if not (0 <= i < scene.grid_height and 0 <= j < scene.grid_width):
        raise ConfigError(f"probe {xy} outside the grid")
    if scene.occupancy[i, j]:
        raise ConfigError(f"probe {xy} lies inside a building")
    return i, j


def cmd_trace(args) -> None:
    scene = _scene(args)
    tx = _tx(args, scene)
    out = _outdir(args)
    ctx = _trace_context(args, scene, tx)
    tx3 = (*tx, args.h_tx)
    # a receiver on top of the transmitter has no defined field
    pts = [p for p in _receivers(scene, args.stride) if not (p[2] == tx and args.h_rx == args.h_tx)]
    probes = [_probe_pixel(scene, p) for p in (args.probe or [])]
    have = {(i, j) for i, j, _ in pts}
    dr = scene.resolution
    for i, j in probes:
        if (i, j) not in have:
            pts.append((i, j, ((j + 0.5) * dr, (i + 0.5) * dr)))

    def work(item):
        i, j, xy = item
        return (i, j), trace_point(tx3, (*xy, args.h_rx), ctx)

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        ray_sets = dict(pool.map(work, pts))
    write_rays(ray_sets, out / "rays.txt")
    shape = (scene.grid_height, scene.grid_width)
    rss = rss_map(ray_sets, shape, args.tx_power)
    write_grid(rss, out / "rss.txt", "{!r}")

    for bw in args.beamwidths or []:
        pattern = BeamPattern(bw, math.radians(args.boresight))
        beamed = {k: apply_beam(v, pattern) for k, v in ray_sets.items()}
        write_grid(rss_map(beamed, shape, args.tx_power), out / f"rss_bw{bw:g}.txt", "{!r}")

    for i, j in probes:
        rays = ray_sets[(i, j)]
        aps = aps_profile(rays, args.aps_bin)
        pdp = pdp_profile(rays, args.pdp_bin, args.effcount_threshold)
        write_profile(aps, out / f"aps_{j}_{i}.csv", args.tx_power)
        write_profile(pdp, out / f"pdp_{j}_{i}.csv", args.tx_power)
        write_metrics({**aps.stats, **pdp.stats}, out / f"stats_{j}_{i}.txt")

    metrics = {"n_points": len(ray_sets), "n_rays": sum(len(v) for v in ray_sets.values()),
               "tree_nodes": len(ctx.tree.nodes)}
    if args.reference is not None:
        ref = read_grid(_existing(args.reference), float)
        if ref.shape != shape:
            raise ConfigError(f"reference grid shape {ref.shape} != {shape}")
        mask = np.isfinite(rss) & np.isfinite(ref)
        metrics.update(error_metrics(rss, ref, mask))
    write_metrics(metrics, out / "metrics.txt")


# ---------------------------------------------------------------- retarget / mimo
def _load_rays(args, scene, tx):
    return read_rays(_existing(args.rays), scene, (*tx, args.h_tx), args.h_rx)


def cmd_retarget(args) -> None:
    scene = _scene(args)
    tx = _tx(args, scene)
    if args.rays is None:
        raise ConfigError("--rays is required")
    ray_sets = _load_rays(args, scene, tx)
    mats = _materials(args)
    new = {k: retarget_frequency(v, args.frequency, mats, args.polarization) for k, v in ray_sets.items()}
    out = _outdir(args)
    write_rays(new, out / "rays.txt")
    write_grid(rss_map(new, (scene.grid_height, scene.grid_width), args.tx_power), out / "rss.txt", "{!r}")


def cmd_mimo(args) -> None:
    scene = _scene(args)
    tx = _tx(args, scene)
    if args.rays is None:
        raise ConfigError("--rays is required")
    ray_sets = _load_rays(args, scene, tx)
    out = _outdir(args)
    lines = []
    for (i, j) in sorted(ray_sets):
        H = mimo_matrix(ray_sets[(i, j)], args.n_tx, args.n_rx, args.frequency, args.tx_spacing, args.rx_spacing)
        s = np.linalg.svd(H, compute_uv=False)
        rank = int(np.count_nonzero(s > 1e-9 * s[0])) if s.size and s[0] > 0 else 0
        lines.append(f"# pixel {j} {i} rank {rank}")
        for row in H:
            lines.append(" ".join(f"{_fmt(z.real)} {_fmt(z.imag)}" for z in row))
    (out / "mimo.txt").write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------- bench
def _timed(fn, repeats: int):
    # collector pauses are not part of the measured work (same as timeit)
    best = math.inf
    enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for _ in range(repeats):
            t0 = time.perf_counter()
            res = fn()
            best = min(best, time.perf_counter() - t0)
    finally:
        if enabled:
            gc.enable()
    return best, res


def loglog_slope(x, y) -> float:
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def run_bench(sizes, grid: int, seed: int, repeats: int = 3, layout: str = "urban", scenes: int = 3):
    """One row per generated scene: m, M, n, best-of-``repeats`` sweep and
    reconstruction times.  ``scenes`` scenes (one transmitter each) per size.

    Repeats run round-robin over all scenes, in a shuffled order each round,
    so that a slow stretch of wall time does not land on a single size.
    """
    cases = []
    for k, m in enumerate(sizes):
        for r in range(scenes):
            sd = seed + 1000 * k + r
            scene = generate_scene(m // 4, grid, sd, layout=layout)
            tx = random_free_point(scene, np.random.default_rng(sd))
            attrs = exact_vertex_attributes(tx, scene)
            M = snap_and_refine(attrs, scene).boundary_vertex_count
            cases.append({"size": m, "m": scene.n_vertices, "M": M, "n": scene.grid_height * scene.grid_width,
                          "sweep_s": math.inf, "recon_s": math.inf, "_job": (scene, tx, attrs)})
    order = np.random.default_rng(seed)
    for _ in range(repeats):
        for i in order.permutation(len(cases)):
            c = cases[i]
            scene, tx, attrs = c["_job"]
            c["sweep_s"] = min(c["sweep_s"], _timed(lambda: sweep_visibility_polygon(tx, scene), 1)[0])
            c["recon_s"] = min(c["recon_s"], _timed(lambda: reconstruct_los(attrs, scene), 1)[0])
    for c in cases:
        del c["_job"]
    return cases


def summarize_bench(rows) -> dict:
    """Per-size medians of the timings, log-log slopes against m and M/m ratios."""
    sizes = sorted({r["size"] for r in rows})
    per = []
    for m in sizes:
        g = [r for r in rows if r["size"] == m and r["m"] > 0]
        if g:
            per.append((float(np.median([r["m"] for r in g])),
                        float(np.median([r["sweep_s"] for r in g])),
                        float(np.median([r["recon_s"] for r in g])),
                        float(np.mean([r["M"] / r["m"] for r in g]))))
    out = {"max_mean_M_over_m": max((p[3] for p in per), default=0.0),
           "max_scene_M_over_m": max((r["M"] / r["m"] for r in rows if r["m"] > 0), default=0.0)}
    if len(per) >= 2:
        ms = [p[0] for p in per]
        out["sweep_slope"] = loglog_slope(ms, [p[1] for p in per])
        out["recon_slope"] = loglog_slope(ms, [p[2] for p in per])
    return out


def cmd_bench(args) -> None:
    rows = run_bench(args.sizes, args.grid, args.seed, args.repeats, args.layout, args.scenes)
    out = _outdir(args)
    lines = ["m,M,n,M_over_m,sweep_s,recon_s"]
    lines += [f"{r['m']},{r['M']},{r['n']},{r['M'] / max(r['m'], 1)!r},{r['sweep_s']!r},{r['recon_s']!r}"
              for r in rows]
    (out / "bench.csv").write_text("\n".join(lines) + "\n")
    write_metrics(summarize_bench(rows), out / "bench_summary.txt")


# ---------------------------------------------------------------- parser
def _add_common(p, tx=True):
    p.add_argument("--scene", help="scene file")
    if tx:
        p.add_argument("--tx", nargs=2, type=float, metavar=("X", "Y"), help="transmitter position [m]")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive(int), default=1)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_link(p):
    p.add_argument("--h-tx", type=_positive(float), default=DEFAULT_HEIGHT)
    p.add_argument("--h-rx", type=_positive(float), default=DEFAULT_HEIGHT)
    p.add_argument("--tx-power", type=float, default=0.0, help="transmit power offset [dBm]")


def _add_em(p):
    p.add_argument("--frequency", type=_positive(float), default=DEFAULT_FREQUENCY)
    p.add_argument("--materials", help="material table file")
    p.add_argument("--polarization", choices=(SOFT, HARD), default=SOFT)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="losray", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random scene")
    _add_common(p, tx=False)
    p.add_argument("--n-buildings", type=int, default=20)
    p.add_argument("--grid", type=_positive(int), default=257)
    p.add_argument("--rectilinear", action="store_true", help="allow L/U shaped footprints")
    p.add_argument("--layout", choices=("random", "urban"), default="random")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("los", help="exact and reconstructed LoS maps")
    _add_common(p)
    p.add_argument("--search-radius", type=_positive(float), default=DEFAULT_SEARCH_RADIUS)
    p.add_argument("--noise", type=_nonneg, default=0.0, help="projection noise radius [m]")
    p.add_argument("--flip", type=_rate, default=0.0, help="visibility flip rate")
    p.add_argument("--predictions", help="predicted vertex-attribute file")
    p.set_defaults(func=cmd_los)

    p = sub.add_parser("trace", help="ray sets, RSS grid and profiles")
    _add_common(p)
    _add_link(p)
    _add_em(p)
    p.add_argument("--max-depth", type=_positive(int), default=DEFAULT_MAX_DEPTH)
    p.add_argument("--max-path-length", type=_positive(float))
    p.add_argument("--no-diffraction", action="store_true")
    p.add_argument("--no-reflection", action="store_true")
    p.add_argument("--n-ray", type=_positive(int), default=N_RAY)
    p.add_argument("--stride", type=_positive(int), default=1, help="evaluate every k-th pixel")
    p.add_argument("--probe", nargs=2, type=float, action="append", metavar=("X", "Y"),
                   help="emit APS/PDP at this point (repeatable)")
    p.add_argument("--aps-bin", type=_positive(float), default=APS_BIN_DEG)
    p.add_argument("--pdp-bin", type=_positive(float), default=PDP_BIN_S)
    p.add_argument("--effcount-threshold", type=_positive(float), default=EFFECTIVE_COUNT_DB)
    p.add_argument("--beamwidths", nargs="+", type=_positive(float), help="beam sweep [deg]")
    p.add_argument("--boresight", type=float, default=0.0, help="beam azimuth [deg]")
    p.add_argument("--reference", help="reference RSS grid for error metrics")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("retarget", help="re-evaluate stored rays at a new frequency")
    _add_common(p)
    _add_link(p)
    _add_em(p)
    p.add_argument("--rays", help="ray file from 'trace'")
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("mimo", help="narrowband MIMO matrices from stored rays")
    _add_common(p)
    _add_link(p)
    p.add_argument("--frequency", type=_positive(float), default=DEFAULT_FREQUENCY)
    p.add_argument("--rays", help="ray file from 'trace'")
    p.add_argument("--n-tx", type=_positive(int), default=4)
    p.add_argument("--n-rx", type=_positive(int), default=4)
    p.add_argument("--tx-spacing", type=_positive(float), default=0.5, help="[wavelengths]")
    p.add_argument("--rx-spacing", type=_positive(float), default=0.5, help="[wavelengths]")
    p.set_defaults(func=cmd_mimo)

    p = sub.add_parser("bench", help="sweep vs reconstruction timing")
    _add_common(p, tx=False)
    p.add_argument("--sizes", nargs="+", type=_positive(int), default=list(BENCH_SIZES),
                   help="target vertex counts m")
    p.add_argument("--grid", type=_positive(int), default=257)
    p.add_argument("--repeats", type=_positive(int), default=3)
    p.add_argument("--scenes", type=_positive(int), default=3, help="scenes per size")
    p.add_argument("--layout", choices=("random", "urban"), default="urban")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SceneParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SceneError, ValueError, RuntimeError) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
