"""
Command-line front end: solve, metrics, generate, split, stitch, encode and validate.
Exit codes: 0 success, 1 validation failure, 2 input error.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from . import config
from .dataset.builder import (
    PRESETS,
    build_splits,
    export_jsonl,
    get_preset,
    import_jsonl,
    recompute_all,
    validate_instances,
)
from .dataset.graph_encoder import encode_graph, graph_to_dot
from .dataset.stitcher import pool_by_id, recursive_expand, replay_lineage
from .engine.grounding import answer_sets, entailed_relations, story_from_program
from .engine.parser import parse_file
from .engine.proofs import CONTRADICTION, format_trace
from .errors import NoraError
from .generation.story_generator import generate_pool, harvest_instances, load_gen_config, queryable_pairs
from .models.program import GroundAtom, Program
from .models.schemas import BinSpec, ErrorReport, Lineage, RunManifest
from .models.story import Story
from .tools.metrics import StoryReasoner, proof_to_dot

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INPUT = 2

METRIC_HEADER = ["instance_id", "source", "target", "labels", "depth", "width", "bl", "opec", "positive_depth", "exact"]


class ValidationFailed(Exception):
    """Raised by a command whose checks found violations."""

    def __init__(self, count: int):
        super().__init__(f"{count} violations")
        self.count = count


def _load_world(path) -> Program:
    logger.debug(f"Loading world rules from {path}")
    return parse_file(path)


def _load_story(path, world: Program) -> Story:
    return story_from_program(parse_file(path), world, story_id=Path(path).stem)


def _random_seed() -> int:
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def cmd_solve(args, manifest: RunManifest) -> int:
    world = _load_world(args.world)
    story = _load_story(args.story, world)
    result = answer_sets(world, story)
    print(f"Refinements: {result.refinement_count}")
    print(f"Answer sets: {len(result.ref_plus)}")
    print(f"Inconsistent refinements: {len(result.ref_minus)}")
    labels = sorted(entailed_relations(world, story, args.source, args.target, result))
    print(f"R = {{{', '.join(labels)}}}")

    if args.trace or args.dot:
        reasoner = StoryReasoner(world, story, result)
        for label in labels:
            atom = GroundAtom(label, (args.source, args.target))
            for answer_set, proof in reasoner.positive_proofs(atom):
                if args.trace:
                    print(f"\n# refinement {answer_set.origin}: {atom} ({len(proof)} steps)")
                    print(format_trace(proof, answer_set.refinement.facts))
                if args.dot:
                    print(proof_to_dot(story, proof, args.source, args.target, answer_set.refinement.facts))
        if args.trace:
            for closure, proof in reasoner.contradiction_proofs():
                print(f"\n# refinement {closure.origin}: {CONTRADICTION} ({len(proof)} steps)")
                print(format_trace(proof, closure.refinement.facts))
    manifest.instance_count = 1
    return EXIT_OK


def _metric_row(instance) -> List[str]:
    m = instance.metrics
    return [
        instance.instance_id,
        instance.source,
        instance.target,
        ",".join(instance.labels),
        str(m.depth),
        str(m.width),
        str(m.bl),
        str(m.opec),
        str(m.positive_depth),
        str(m.exact).lower(),
    ]


def cmd_metrics(args, manifest: RunManifest) -> int:
    world = _load_world(args.world)
    path = Path(args.instances)
    if path.suffix == ".jsonl":
        instances = recompute_all(world, import_jsonl(path), jobs=args.jobs)
    else:
        story = _load_story(path, world)
        reasoner = StoryReasoner(world, story)
        if not reasoner.consistent:
            raise NoraError(f"story {story.story_id} has no answer set")
        instances = harvest_instances(world, story, reasoner=reasoner)
        if args.pair:
            wanted = {tuple(p) for p in args.pair}
            missing = wanted - set(queryable_pairs(reasoner.result))
            if missing:
                logger.warning(f"No entailed relation for pairs: {sorted(missing)}")
            instances = [i for i in instances if (i.source, i.target) in wanted]

    lines = ["\t".join(METRIC_HEADER)] + ["\t".join(_metric_row(i)) for i in instances]
    _emit("\n".join(lines) + "\n", args.out, manifest)
    manifest.instance_count = len(instances)
    return EXIT_OK


def _emit(text: str, out: Optional[str], manifest: RunManifest):
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    manifest.outputs.append(str(path))


def cmd_generate(args, manifest: RunManifest) -> int:
    world = _load_world(args.world)
    cfg = load_gen_config(Path(args.config) if args.config else None)
    seed = args.seed if args.seed is not None else _random_seed()
    manifest.seed = seed
    manifest.arguments["seed"] = seed
    print(f"Seed: {seed}")
    result = generate_pool(world, cfg, seed, args.count, jobs=args.jobs)
    export_jsonl(result.instances, args.out)
    manifest.outputs.append(str(args.out))
    manifest.instance_count = len(result.instances)
    if not result.records:
        logger.error("No story could be generated")
        return EXIT_INPUT
    return EXIT_OK


def cmd_split(args, manifest: RunManifest) -> int:
    pool = import_jsonl(args.pool)
    seed = args.seed if args.seed is not None else 0
    manifest.seed = seed
    splits = build_splits(
        pool,
        args.preset,
        seed=seed,
        in_dist_fraction=args.in_dist_fraction,
        drop_unseen=args.drop_unseen,
        balance=not args.no_balance,
        bins=BinSpec(strategy=args.bins),
    )
    out = Path(args.out)
    for name, instances in splits.items():
        path = out / f"{name}.jsonl"
        export_jsonl(instances, path)
        manifest.outputs.append(str(path))
        manifest.instance_count += len(instances)
        print(f"{name}\t{len(instances)}")
    return EXIT_OK


def _read_lineage(path) -> Lineage:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if "lineage" in payload:
        payload = payload["lineage"]
    return Lineage.model_validate(payload)


def cmd_stitch(args, manifest: RunManifest) -> int:
    world = _load_world(args.world)
    pool = import_jsonl(args.pool)
    if args.replay:
        instance = replay_lineage(world, pool_by_id(pool), _read_lineage(args.replay))
        outputs = [instance]
        print(f"Replayed {instance.instance_id}")
    else:
        if not args.preset:
            raise NoraError("stitch needs --preset (target split) or --replay")
        seed = args.seed if args.seed is not None else 0
        manifest.seed = seed
        outputs = recursive_expand(
            world,
            pool,
            get_preset(args.preset),
            args.rounds,
            seed=seed,
            allow_ambiguous=args.allow_ambiguous,
            jobs=args.jobs,
        )
        print(f"Stitched {len(outputs)} instances")
    if args.out:
        export_jsonl(outputs, args.out)
        manifest.outputs.append(str(args.out))
    manifest.instance_count = len(outputs)
    return EXIT_OK


def cmd_encode(args, manifest: RunManifest) -> int:
    world = _load_world(args.world)
    story = _load_story(args.story, world)
    labels = ()
    result = answer_sets(world, story)
    if result.consistent:
        labels = sorted(result.relations(args.source, args.target))
    graph = encode_graph(story, args.source, args.target, labels)
    text = graph_to_dot(graph, story.story_id) if args.dot else graph.model_dump_json(indent=2) + "\n"
    _emit(text, args.out, manifest)
    manifest.instance_count = 1
    return EXIT_OK


def cmd_validate(args, manifest: RunManifest) -> int:
    world = _load_world(args.world)
    instances = import_jsonl(args.export)
    spec = get_preset(args.preset) if args.preset else None
    violations = validate_instances(world, instances, spec)
    print("instance_id\tfield\texpected\tactual")
    for v in violations:
        print(f"{v.instance_id}\t{v.field}\t{v.expected}\t{v.actual}")
    manifest.instance_count = len(instances)
    logger.info(f"Validated {len(instances)} instances: {len(violations)} violations")
    if violations:
        raise ValidationFailed(len(violations))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=config.TOOL_NAME,
        description="Generate, solve, measure and export relational reasoning benchmark instances",
    )
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {config.TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_world(p):
        p.add_argument(
            "--world",
            default=str(config.DEFAULT_WORLD),
            help=f"World rule file (default: {config.DEFAULT_WORLD})",
        )
        return p

    p = with_world(sub.add_parser("solve", help="Print the entailed relation set R for a query"))
    p.add_argument("story", help="Story rule file")
    p.add_argument("source", help="Query source entity")
    p.add_argument("target", help="Query target entity")
    p.add_argument("--trace", action="store_true", help="Print minimal proof traces per refinement")
    p.add_argument("--dot", action="store_true", help="Print DOT renderings of the proofs")
    p.set_defaults(handler=cmd_solve)

    p = with_world(sub.add_parser("metrics", help="Depth, width, BL and OPEC per instance as TSV"))
    p.add_argument("instances", help="Exported .jsonl file, or a story rule file")
    p.add_argument("--pair", nargs=2, action="append", metavar=("SOURCE", "TARGET"), help="Restrict a story file to these queries")
    p.add_argument("--out", help="Output TSV file (default: stdout)")
    p.add_argument("--jobs", type=int, default=1, help="Worker processes for .jsonl input (default: 1)")
    p.set_defaults(handler=cmd_metrics)

    p = with_world(sub.add_parser("generate", help="Generate stories and harvest instances"))
    p.add_argument("--config", help="Generation config file (default: <config dir>/generation.env if present)")
    p.add_argument("--seed", type=int, help="Root seed (default: random, printed)")
    p.add_argument("--count", type=int, default=100, help="Number of stories (default: 100)")
    p.add_argument("--jobs", type=int, default=1, help="Worker processes (default: 1)")
    p.add_argument("--out", required=True, help="Output .jsonl file")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("split", help="Assemble named splits from an instance pool")
    p.add_argument("--pool", required=True, help="Instance pool (.jsonl)")
    p.add_argument("--preset", action="append", required=True, choices=sorted(PRESETS), help="Split preset; repeatable")
    p.add_argument("--seed", type=int, help="Seed for the in-distribution carve-out (default: 0)")
    p.add_argument("--in-dist-fraction", type=float, default=None, help=f"Held-out share of training-eligible instances (default: {config.IN_DIST_FRACTION})")
    p.add_argument("--bins", choices=["uniform", "quantile"], default="uniform", help="Bin edge strategy (default: uniform)")
    p.add_argument("--no-balance", action="store_true", help="Skip rejection balancing of training splits")
    p.add_argument("--drop-unseen", action="store_true", help="Drop test instances with labels unseen in training")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(handler=cmd_split)

    p = with_world(sub.add_parser("stitch", help="Build harder instances by stitching, or replay a lineage"))
    p.add_argument("--pool", required=True, help="Instance pool (.jsonl)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="Target split the outputs must satisfy")
    p.add_argument("--rounds", type=int, default=2, help="Maximum stitches per base (default: 2)")
    p.add_argument("--seed", type=int, help="Root seed (default: 0)")
    p.add_argument("--jobs", type=int, default=1, help="Worker processes (default: 1)")
    p.add_argument("--allow-ambiguous", action="store_true", help="Accept stories with ambiguous facts")
    p.add_argument("--replay", help="Lineage JSON (or an exported record) to rebuild")
    p.add_argument("--out", help="Output .jsonl file")
    p.set_defaults(handler=cmd_stitch)

    p = with_world(sub.add_parser("encode", help="Graph encoding of a story and query"))
    p.add_argument("story", help="Story rule file")
    p.add_argument("source", help="Query source entity")
    p.add_argument("target", help="Query target entity")
    p.add_argument("--dot", action="store_true", help="Print DOT instead of JSON")
    p.add_argument("--out", help="Output file (default: stdout)")
    p.set_defaults(handler=cmd_encode)

    p = with_world(sub.add_parser("validate", help="Recompute an export and report mismatches"))
    p.add_argument("export", help="Exported .jsonl file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="Also check the bounds of this split")
    p.set_defaults(handler=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config.init_logging(args.debug or None)

    arguments = {k: v for k, v in vars(args).items() if k != "handler"}
    manifest = RunManifest(
        subcommand=args.command,
        arguments=arguments,
        world=getattr(args, "world", None),
        config=getattr(args, "config", None),
        seed=getattr(args, "seed", None),
    )
    started = time.perf_counter()
    try:
        code = args.handler(args, manifest)
    except ValidationFailed as e:
        manifest.status = "failed"
        manifest.error = ErrorReport(error="validation failed", detail=str(e), status="failed")
        code = EXIT_VALIDATION
    except (NoraError, OSError, ValidationError, ValueError) as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        print(f"{config.TOOL_NAME} {args.command}: error: {e}", file=sys.stderr)
        manifest.status = "error"
        manifest.error = ErrorReport(error=type(e).__name__, detail=str(e))
        code = EXIT_INPUT
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {str(e)}", exc_info=True)
        manifest.status = "error"
        manifest.error = ErrorReport(error="internal error", detail=str(e))
        code = EXIT_INPUT
    manifest.wall_clock_seconds = round(time.perf_counter() - started, 3)

    out = getattr(args, "out", None)
    if out:
        path = _manifest_path(Path(out))
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            logger.warning(f"Could not write manifest {path}: {e}")
    return code


if __name__ == "__main__":
    sys.exit(main())
