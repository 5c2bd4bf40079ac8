"""
Command-line interface for NRSR.

Every stage reads and writes plain files so it can be re-run on its own:

    nrsr gen --config scene.yaml --out scene/
    nrsr affinity scene/tracks.txt --out run/affinity.txt
    nrsr cluster run/affinity.txt -k 4 --out run/clusters.txt
    nrsr reconstruct scene/tracks.txt run/clusters.txt scene/intrinsics.txt --out run/
    nrsr eval scene/ run/ --out run/
    nrsr pipeline --scene scene/ --out run/

Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

from . import files
from .analyzer import RecurrenceAnalyzer
from .config import Config
from .evaluation import TIMING_AXES, evaluate, noise_sweep, timing_sweep
from .exceptions import ConfigError, InputFormatError
from .models import AffinityMatrix, ClusterAssignment, TrackSet
from .synthetic import generate_scene

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="Path to configuration file (YAML)", default=None)
    common.add_argument(
        "--seed", type=int, default=None, help="Master seed (overrides pipeline.seed)"
    )
    common.add_argument(
        "--workers", default=None, help="Worker processes: a positive integer or 'auto'"
    )
    common.add_argument(
        "--log-level", default=None, help="Logging level (default: pipeline.log_level)"
    )
    return common


def _sampling_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--samples", type=int, default=None, help="Samples per model (F and H)")
    parser.add_argument(
        "--exhaustive",
        action="store_true",
        help="Enumerate every minimal subset instead of sampling",
    )


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="nrsr",
        description="Non-Rigid Shape Reconstructor - recover recurring 3D shapes from 2D tracks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="Generate a synthetic scene directory")
    gen.add_argument("-o", "--out", required=True, help="Scene directory to write")

    aff = sub.add_parser("affinity", parents=[common], help="Build the pairwise rigidity affinity")
    aff.add_argument("tracks", help="Tracks file")
    aff.add_argument("-o", "--out", required=True, help="Affinity file to write")
    _sampling_flags(aff)

    clu = sub.add_parser(
        "cluster", parents=[common], help="Spectral clustering of an affinity file"
    )
    clu.add_argument("affinity", help="Affinity file")
    clu.add_argument("-k", type=int, default=None, help="Number of clusters")
    clu.add_argument("-o", "--out", required=True, help="Clusters file to write")
    clu.add_argument(
        "--plot", action="store_true", help="Also write affinity.png next to the output"
    )

    rec = sub.add_parser(
        "reconstruct", parents=[common], help="Rigid reconstruction of every cluster"
    )
    rec.add_argument("tracks", help="Tracks file")
    rec.add_argument("clusters", help="Clusters file")
    rec.add_argument("intrinsics", help="Intrinsics file")
    rec.add_argument("-o", "--out", required=True, help="Results directory")
    _sampling_flags(rec)

    ev = sub.add_parser("eval", parents=[common], help="Compare results with a synthetic scene")
    ev.add_argument("truth", help="Scene directory written by 'gen'")
    ev.add_argument("results", help="Results directory written by 'reconstruct' or 'pipeline'")
    ev.add_argument("-o", "--out", default=None, help="Report directory (default: results)")
    ev.add_argument("--plot", action="store_true", help="Also write histogram.png")

    pipe = sub.add_parser("pipeline", parents=[common], help="Run every stage end to end")
    pipe.add_argument(
        "--scene", default=None, help="Scene directory (tracks, intrinsics and truth)"
    )
    pipe.add_argument("--tracks", default=None, help="Tracks file (overrides paths.tracks)")
    pipe.add_argument(
        "--intrinsics", default=None, help="Intrinsics file (overrides paths.intrinsics)"
    )
    pipe.add_argument("-k", type=int, default=None, help="Number of clusters")
    pipe.add_argument(
        "-o", "--out", default=None, help="Results directory (overrides paths.output_dir)"
    )
    pipe.add_argument(
        "--plot", action="store_true", help="Also write affinity and histogram figures"
    )
    _sampling_flags(pipe)

    bench = sub.add_parser(
        "bench", parents=[common], help="Noise or timing sweeps on synthetic scenes"
    )
    bench.add_argument("sweep", choices=["noise", "timing"], help="Which sweep to run")
    bench.add_argument("--axis", choices=TIMING_AXES, default="frames", help="Timing axis")
    bench.add_argument(
        "--values",
        type=float,
        nargs="+",
        default=None,
        help="Sigmas (noise) or axis values (timing)",
    )
    bench.add_argument("--repeats", type=int, default=1, help="Best-of repeats per timing value")
    bench.add_argument("-o", "--out", required=True, help="Output directory")
    bench.add_argument("--plot", action="store_true", help="Also write the sweep figure")
    _sampling_flags(bench)

    return parser.parse_args(argv)


def load_config(args: argparse.Namespace) -> Config:
    """Configuration file plus command-line overrides."""
    config = Config(config_path=args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {args.seed}")
        config.set("pipeline.seed", args.seed)
    if args.workers is not None:
        config.set("pipeline.workers", args.workers)
    if args.log_level is not None:
        config.set("pipeline.log_level", args.log_level.upper())
    if getattr(args, "samples", None) is not None:
        config.set("rigidity.n_samples_f", args.samples)
        config.set("rigidity.n_samples_h", args.samples)
    if getattr(args, "exhaustive", False):
        config.set("rigidity.sampling_mode", "exhaustive")
    if getattr(args, "k", None) is not None:
        config.set("spectral.k", args.k)
    return config


def _summary(label: str, **fields) -> None:
    print(f"{label}: " + ", ".join(f"{k}={v}" for k, v in fields.items()))


def _try_plot(plot, *args) -> None:
    try:
        plot(*args)
    except ImportError as e:
        logger.warning("skipping figure: %s", e)


def cmd_gen(args: argparse.Namespace, config: Config) -> int:
    scene = config.scene_config()
    truth = generate_scene(scene)
    files.write_scene(args.out, truth)
    _summary("scene", out=args.out, N=scene.n_frames, M=scene.n_points, states=truth.n_states)
    return EXIT_OK


def cmd_affinity(args: argparse.Namespace, config: Config) -> int:
    tracks = files.read_tracks(args.tracks)
    analyzer = RecurrenceAnalyzer(config)
    start = time.perf_counter()
    affinity = analyzer.build_affinity(tracks)
    elapsed = time.perf_counter() - start
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    files.write_affinity(out, affinity)
    files.write_diagnostics(out.with_name(files.DIAGNOSTICS_FILE), affinity.diagnostics)
    _summary(
        "affinity",
        N=affinity.n,
        nonzero_fraction=f"{affinity.nonzero_fraction():.3f}",
        elapsed=f"{elapsed:.2f}s",
    )
    return EXIT_OK


def _cluster(analyzer: RecurrenceAnalyzer, affinity: AffinityMatrix) -> ClusterAssignment:
    analyzer.settings.spectral.validate_for(affinity.n)
    return analyzer.cluster(affinity)


def cmd_cluster(args: argparse.Namespace, config: Config) -> int:
    affinity = files.read_affinity(args.affinity)
    analyzer = RecurrenceAnalyzer(config)
    assignment = _cluster(analyzer, affinity)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    files.write_clusters(out, assignment, seed=config.seed)
    if args.plot:
        from .plotting import plot_affinity

        _try_plot(plot_affinity, affinity, assignment, out.with_name("affinity.png"))
    sizes = [len(assignment.members(c)) for c in range(assignment.k)]
    empty = len(assignment.empty_clusters)
    _summary("clusters", N=assignment.n, K=assignment.k, sizes=sizes, empty=empty)
    return EXIT_OK


def _reconstruct(
    analyzer: RecurrenceAnalyzer,
    tracks: TrackSet,
    assignment: ClusterAssignment,
    intrinsics_path: str,
    out_dir: Path,
    affinity: Optional[AffinityMatrix] = None,
) -> Dict[str, float]:
    if assignment.n != tracks.n_frames:
        raise InputFormatError(
            f"clusters cover N={assignment.n} frames but tracks have N={tracks.n_frames}"
        )
    intrinsics = files.read_intrinsics(intrinsics_path)
    start = time.perf_counter()
    recs = analyzer.reconstruct(tracks, assignment, intrinsics, affinity)
    recs, pair = analyzer.normalize(recs)
    elapsed = time.perf_counter() - start
    files.write_reconstructions(out_dir, recs)
    succeeded = sum(1 for r in recs if r.succeeded)
    _summary(
        "reconstruct",
        clusters=len(recs),
        succeeded=succeeded,
        landmark_pair=pair,
        elapsed=f"{elapsed:.2f}s",
    )
    return {"reconstruct": elapsed}


def cmd_reconstruct(args: argparse.Namespace, config: Config) -> int:
    tracks = files.read_tracks(args.tracks)
    assignment = files.read_clusters(args.clusters)
    analyzer = RecurrenceAnalyzer(config)
    out = Path(args.out)
    wall_times = _reconstruct(analyzer, tracks, assignment, args.intrinsics, out)
    files.write_timings(out / files.TIMINGS_FILE, wall_times)
    return EXIT_OK


def _provenance(config: Config, results: Path) -> Dict[str, object]:
    provenance: Dict[str, object] = {
        "seed": config.seed,
        "rigidity_digest": config.rigidity_params().digest(),
    }
    affinity_path = results / files.AFFINITY_FILE
    if affinity_path.exists():
        header = affinity_path.read_text().split("\n", 1)[0]
        provenance["affinity_header"] = header.lstrip("# ").strip()
    return provenance


def _evaluate_dir(config: Config, truth_dir: str, results: Path, out_dir: Path, plot: bool) -> None:
    truth = files.read_scene(truth_dir)
    assignment = files.read_clusters(results / files.CLUSTERS_FILE)
    n_frames = truth.state_of_frame.shape[0]
    if assignment.n != n_frames:
        raise InputFormatError(
            f"clusters cover N={assignment.n} frames but the scene has N={n_frames}"
        )
    recs = files.read_reconstructions(results, assignment)
    report = evaluate(
        recs,
        assignment,
        truth,
        success_noise_factor=config.get("evaluation.success_noise_factor", 5.0),
        success_offset_px=config.get("evaluation.success_offset_px", 1.0),
        hist_bins=config.get("evaluation.hist_bins", 20),
        hist_max_px=config.get("evaluation.hist_max_px"),
    )
    provenance = _provenance(config, results)
    out_dir.mkdir(parents=True, exist_ok=True)
    files.write_report(out_dir / files.REPORT_FILE, report, provenance)
    files.write_report_json(out_dir / files.REPORT_JSON_FILE, report, provenance)
    files.write_histogram(out_dir / files.HISTOGRAM_FILE, report)
    if plot:
        from .plotting import plot_histogram

        _try_plot(plot_histogram, report, out_dir / "histogram.png")
    _summary(
        "eval",
        purity=f"{report.purity:.3f}",
        success_ratio=f"{report.success_ratio:.3f}",
        mean_rmse=f"{report.mean_rmse:.3g}",
    )


def cmd_eval(args: argparse.Namespace, config: Config) -> int:
    results = Path(args.results)
    _evaluate_dir(config, args.truth, results, Path(args.out) if args.out else results, args.plot)
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace, config: Config) -> int:
    if args.scene:
        scene = Path(args.scene)
        config.set("paths.tracks", str(scene / files.TRACKS_FILE))
        config.set("paths.intrinsics", str(scene / files.INTRINSICS_FILE))
        config.set("paths.truth", str(scene))
    if args.tracks:
        config.set("paths.tracks", args.tracks)
    if args.intrinsics:
        config.set("paths.intrinsics", args.intrinsics)
    if args.out:
        config.set("paths.output_dir", args.out)

    analyzer = RecurrenceAnalyzer(config)
    settings = analyzer.settings
    if not settings.tracks_path or not settings.intrinsics_path:
        raise ConfigError("pipeline needs paths.tracks and paths.intrinsics (or --scene)")
    out = Path(settings.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    tracks = files.read_tracks(settings.tracks_path)
    settings.spectral.validate_for(tracks.n_frames)
    wall_times: Dict[str, float] = {}

    start = time.perf_counter()
    affinity = analyzer.build_affinity(tracks)
    wall_times["affinity"] = time.perf_counter() - start
    files.write_affinity(out / files.AFFINITY_FILE, affinity)
    files.write_diagnostics(out / files.DIAGNOSTICS_FILE, affinity.diagnostics)
    _summary("affinity", N=affinity.n, nonzero_fraction=f"{affinity.nonzero_fraction():.3f}")

    start = time.perf_counter()
    assignment = _cluster(analyzer, affinity)
    wall_times["cluster"] = time.perf_counter() - start
    files.write_clusters(out / files.CLUSTERS_FILE, assignment, seed=config.seed)
    if args.plot:
        from .plotting import plot_affinity

        _try_plot(plot_affinity, affinity, assignment, out / "affinity.png")

    wall_times.update(
        _reconstruct(analyzer, tracks, assignment, settings.intrinsics_path, out, affinity)
    )
    files.write_timings(out / files.TIMINGS_FILE, wall_times)

    if settings.truth_path:
        _evaluate_dir(config, settings.truth_path, out, out, args.plot)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: Config) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = config.scene_config()
    if args.sweep == "noise":
        sigmas = args.values or config.get("evaluation.sweep_sigmas")
        seeds = range(int(config.get("evaluation.sweep_seeds", 3)))
        rows = noise_sweep(scene, sigmas, config, seeds=tuple(seeds))
        columns = ["sigma", "mean_rmse", "success_ratio", "purity", "runs"]
        files.write_table(out / "noise_sweep.txt", columns, [[r[c] for c in columns] for r in rows])
        if args.plot:
            from .plotting import plot_noise_sweep

            _try_plot(plot_noise_sweep, rows, out / "noise_sweep.png")
        for row in rows:
            _summary("noise", **{c: row[c] for c in columns})
        return EXIT_OK

    if not args.values:
        raise ConfigError("bench timing needs --values")
    values = [int(v) for v in args.values]
    timings, slope = timing_sweep(args.axis, values, scene, config.rigidity_params(), args.repeats)
    files.write_table(out / f"timing_{args.axis}.txt", [args.axis, "seconds"], timings)
    if args.plot:
        from .plotting import plot_timing

        _try_plot(plot_timing, timings, slope, args.axis, out / f"timing_{args.axis}.png")
    _summary("timing", axis=args.axis, slope=f"{slope:.3f}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "affinity": cmd_affinity,
    "cluster": cmd_cluster,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    args = parse_args(argv)
    try:
        config = load_config(args)
        level = str(config.get("pipeline.log_level", "INFO")).upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ConfigError(f"pipeline.log_level is not a logging level: {level!r}")
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        logger.info("nrsr %s (seed=%d)", args.command, config.seed)
        return COMMANDS[args.command](args, config)
    except (ConfigError, InputFormatError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:
        logger.debug("command failed", exc_info=True)
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
