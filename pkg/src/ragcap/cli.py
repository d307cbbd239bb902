"""Command-line entry point.

Subcommands: ``build-index`` (corpus to binary index), ``caption`` (single
or batch captioning to jsonl), ``evaluate`` (metrics report plus figure),
``ablate`` (K/N sweep table plus figure), and ``conformance`` (provider
protocol checks).

Option precedence is flags > RAGCAP_PROVIDER (provider only) > config file
> defaults. Exit codes: 0 success, 2 usage/input, 3 provider/transport,
4 internal.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .conformance import run_conformance
from .errors import (
    PipelineStageError,
    ProviderError,
    ProviderMismatchError,
    RagcapError,
    TransportError,
)
from .figures import save_ablation_figure, save_report_figure
from .gateway import make_provider
from .metrics import bleu, cider_d, evaluate_run, load_references, rouge_l_corpus, tokenize
from .pipeline import PipelineConfig, caption_batch, default_shots, load_shots_file
from .store import CaptionStore, _timestamp

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PROVIDER = 3
EXIT_INTERNAL = 4

PROVIDER_ENV = "RAGCAP_PROVIDER"

# Keys a config file may set, with their parse type.
CONFIG_KEYS = {
    "k": int,
    "n": int,
    "c": int,
    "beam": int,
    "max_new_tokens": int,
    "lang": str,
    "template": str,
    "provider": str,
    "shots": str,
}

TABLE3_GRID = "k=1..5;n=1 + k=4;n=1..4"


def classify_error(exc: BaseException) -> int:
    if isinstance(exc, PipelineStageError) and exc.cause is not None:
        return classify_error(exc.cause)
    if isinstance(exc, (TransportError, ProviderError, ProviderMismatchError)):
        return EXIT_PROVIDER
    if isinstance(exc, (RagcapError, ValueError, FileNotFoundError, OSError)):
        return EXIT_INPUT
    return EXIT_INTERNAL


def parse_config_text(text: str) -> dict[str, str]:
    """Parse a flat ``key = value`` document; '#' starts a comment line."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def config_to_text(config: dict) -> str:
    return "".join(f"{key} = {value}\n" for key, value in config.items())


def _load_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    unknown = set(values) - set(CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return values


def _resolve_options(args: argparse.Namespace) -> dict:
    """Apply flags > env (provider) > config file > defaults."""
    file_values = _load_config_file(getattr(args, "config", None))
    defaults = {
        "k": 4, "n": 3, "c": 3, "beam": 3, "max_new_tokens": 40,
        "lang": "en", "template": "retrieval", "provider": "mock", "shots": "",
    }
    resolved = {}
    for key, cast in CONFIG_KEYS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key == "provider" and os.environ.get(PROVIDER_ENV):
            resolved[key] = os.environ[PROVIDER_ENV]
        elif key in file_values:
            resolved[key] = cast(file_values[key])
        else:
            resolved[key] = defaults[key]
    return resolved


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_run_manifest(config: dict, provider_id: str, index_path, index_hash: str,
                       shots_hash: str) -> dict:
    return {
        "tool_version": __version__,
        "created_at": _timestamp(),
        "provider_id": provider_id,
        "index_path": str(index_path),
        "index_hash": index_hash,
        "shots_hash": shots_hash,
        "config": {key: config[key] for key in CONFIG_KEYS},
    }


def parse_grid(spec: str) -> list[tuple[str, list[tuple[int, int]]]]:
    """Parse a sweep grid: groups joined by '+', axes by ';' or ','.

    Each group must set both axes, either as a single value (``k=4``) or an
    inclusive range (``n=1..4``); a group expands to its k-major cross
    product. ``table3`` is an alias for the nine-cell reference layout.
    """
    if spec.strip() == "table3":
        spec = TABLE3_GRID
    groups = []
    for group_text in spec.split("+"):
        group_text = group_text.strip()
        if not group_text:
            raise ValueError("empty grid group")
        axes: dict[str, list[int]] = {}
        for part in group_text.replace(",", ";").split(";"):
            part = part.strip()
            if not part:
                continue
            key, eq, value = part.partition("=")
            key = key.strip()
            if not eq or key not in ("k", "n"):
                raise ValueError(f"malformed grid axis {part!r}")
            value = value.strip()
            try:
                if ".." in value:
                    lo_text, _, hi_text = value.partition("..")
                    lo, hi = int(lo_text), int(hi_text)
                    if hi < lo:
                        raise ValueError
                    axes[key] = list(range(lo, hi + 1))
                else:
                    axes[key] = [int(value)]
            except ValueError:
                raise ValueError(f"malformed grid axis {part!r}") from None
        if "k" not in axes or "n" not in axes:
            raise ValueError(f"grid group {group_text!r} must set both k and n")
        if min(axes["k"]) < 1 or min(axes["n"]) < 0:
            raise ValueError("grid values out of range: k >= 1, n >= 0")
        cells = [(k, n) for k in axes["k"] for n in axes["n"]]
        groups.append((group_text, cells))
    return groups


def _read_image_list(path) -> list[Path]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    images = [Path(line.strip()) for line in lines if line.strip()]
    if not images:
        raise ValueError(f"image list {path} is empty")
    return images


def _prepare_run(args):
    """Shared setup for caption and ablate: provider, store, shots, options."""
    options = _resolve_options(args)
    provider = make_provider(options["provider"])
    manifest = provider.provider_manifest()
    store = CaptionStore.load_index(args.index)
    store.check_query_provider(manifest.provider_id)
    if options["shots"]:
        shots = load_shots_file(options["shots"])
        shots_hash = _sha256_file(options["shots"])
    else:
        shots = default_shots(options["template"])
        from importlib import resources

        name = (
            "default_shots.json"
            if options["template"] == "retrieval"
            else "default_socratic_shots.json"
        )
        shots_hash = hashlib.sha256(
            resources.files("ragcap.data").joinpath(name).read_bytes()
        ).hexdigest()
    run_manifest = build_run_manifest(
        options, manifest.provider_id, args.index, store.content_hash(), shots_hash
    )
    return options, provider, store, shots, run_manifest


def cmd_build_index(args) -> int:
    options = _resolve_options(args)
    provider = make_provider(options["provider"])
    store = CaptionStore.for_provider(provider)
    count = store.ingest_captions(
        args.captions, format=args.format, source_tag=args.source, language=options["lang"]
    )
    manifest = store.save_index(args.out)
    print(
        f"indexed {count} captions -> {args.out} "
        f"(dimension {manifest.dimension}, provider {manifest.provider_id}, "
        f"checksum {manifest.checksum[:12]})"
    )
    return EXIT_OK


def _caption_images(images, ids, options, provider, store, shots):
    config = PipelineConfig(
        k=options["k"], n=options["n"], c=options["c"], beam_size=options["beam"],
        max_new_tokens=options["max_new_tokens"], language=options["lang"],
        template=options["template"], shots=shots,
    )
    batch = caption_batch(images, config, store, provider)
    records = []
    for image_id, result in zip(ids, batch.results):
        if result is not None:
            records.append({"id": image_id, **result.to_json_dict()})
    return records, batch.errors


def cmd_caption(args) -> int:
    options, provider, store, shots, run_manifest = _prepare_run(args)
    if args.image:
        images = [Path(args.image)]
    else:
        images = _read_image_list(args.images)
    ids = [p.stem for p in images]

    records, errors = _caption_images(images, ids, options, provider, store, shots)
    lines = [json.dumps({"manifest": run_manifest}, ensure_ascii=False)]
    lines.extend(json.dumps(record, ensure_ascii=False) for record in records)
    payload = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)

    for err in errors:
        print(f"error: {err.image} (stage {err.stage}): {err.message}", file=sys.stderr)
    if errors:
        return classify_error(errors[0].cause) if errors[0].cause else EXIT_INTERNAL
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = evaluate_run(args.predictions, args.references, args.lang or "en")
    document = {
        "manifest": {
            "tool_version": __version__,
            "created_at": _timestamp(),
            "predictions": str(args.predictions),
            "references": str(args.references),
        },
        **report.to_json_dict(),
    }
    out = Path(args.out)
    out.write_text(json.dumps(document, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    if not args.no_figure:
        save_report_figure(report, out.with_suffix(".png"))
    print(
        f"bleu1={report.bleu1:.4f} bleu4={report.bleu4:.4f} "
        f"rougeL={report.rougeL:.4f} ciderD={report.ciderD:.4f} "
        f"({report.count} instances)"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    options, provider, store, shots, run_manifest = _prepare_run(args)
    run_manifest["grid"] = args.grid
    groups = parse_grid(args.grid)
    images = _read_image_list(args.images)
    ids = [p.stem for p in images]
    references = load_references(args.references)
    missing = [i for i in ids if i not in references]
    if missing:
        raise RagcapError(f"missing references for id {missing[0]!r}")

    rows = []
    for group_text, cells in groups:
        for k, n in cells:
            cell_options = {**options, "k": k, "n": n}
            records, errors = _caption_images(
                images, ids, cell_options, provider, store, shots
            )
            if errors:
                first = errors[0]
                raise RagcapError(
                    f"cell k={k} n={n}: {first.image} (stage {first.stage}): {first.message}"
                )
            hyps = [tokenize(r["chosen"]) for r in records]
            refs = [[tokenize(t) for t in references[r["id"]]] for r in records]
            _, cider_mean = cider_d(hyps, refs)
            rows.append(
                {
                    "grid": group_text,
                    "k": k,
                    "n": n,
                    "bleu1": bleu(hyps, refs, max_n=1),
                    "bleu4": bleu(hyps, refs, max_n=4),
                    "rougeL": rouge_l_corpus(hyps, refs),
                    "ciderD": cider_mean,
                }
            )

    header = ["grid", "k", "n", "bleu1", "bleu4", "rougeL", "ciderD"]
    out_lines = [
        "# manifest: " + json.dumps(run_manifest, ensure_ascii=False),
        "\t".join(header),
    ]
    for row in rows:
        out_lines.append(
            "\t".join(
                [
                    row["grid"],
                    str(row["k"]),
                    str(row["n"]),
                    f"{row['bleu1']:.6f}",
                    f"{row['bleu4']:.6f}",
                    f"{row['rougeL']:.6f}",
                    f"{row['ciderD']:.6f}",
                ]
            )
        )
    out = Path(args.out)
    out.write_text("".join(line + "\n" for line in out_lines), encoding="utf-8")
    if not args.no_figure:
        save_ablation_figure(rows, out.with_suffix(".png"))
    print(f"wrote {len(rows)} cells -> {out}")
    return EXIT_OK


def cmd_conformance(args) -> int:
    options = _resolve_options(args)
    provider = make_provider(options["provider"])
    results = run_conformance(provider)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        suffix = f": {result.detail}" if result.detail else ""
        print(f"{status} {result.name}{suffix}")
        failed += 0 if result.passed else 1
    if failed:
        print(f"{failed}/{len(results)} checks failed", file=sys.stderr)
        return EXIT_PROVIDER
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragcap",
        description="Retrieval-augmented multilingual image captioning engine",
    )
    parser.add_argument("--version", action="version", version=f"ragcap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_config=True):
        p.add_argument("--provider", help="provider base URL or 'mock'")
        if with_config:
            p.add_argument("--config", help="flat key=value config file")

    p = sub.add_parser("build-index", help="ingest captions and write a binary index")
    p.add_argument("--captions", required=True, help="corpus file")
    p.add_argument("--format", choices=["jsonl", "coco-json"], default="jsonl")
    p.add_argument("--out", required=True, help="index file to write")
    p.add_argument("--language", dest="lang", help="language code for ingested captions")
    p.add_argument("--source", default="corpus", help="corpus tag stored per entry")
    add_common(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("caption", help="caption one image or a list of images")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--image", help="single image path")
    group.add_argument("--images", help="file listing one image path per line")
    p.add_argument("--index", required=True, help="binary index file")
    p.add_argument("--lang", help="target language code (default en)")
    p.add_argument("--k", type=int, help="retrieved captions per prompt (default 4)")
    p.add_argument("--n", type=int, help="few-shot examples (default 3)")
    p.add_argument("--c", type=int, help="candidates to rerank (default 3)")
    p.add_argument("--beam", type=int, help="beam size (default 3)")
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.add_argument("--template", choices=["retrieval", "socratic"])
    p.add_argument("--shots", help="shots file (JSON array)")
    p.add_argument("--out", help="output jsonl (default stdout)")
    add_common(p)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out", required=True, help="report JSON to write")
    p.add_argument("--lang", help="language code recorded in the report")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep K/N cells and tabulate metrics")
    p.add_argument("--grid", default="table3",
                   help="sweep spec, e.g. 'k=1..5;n=1 + k=4;n=1..4' or 'table3'")
    p.add_argument("--images", required=True, help="file listing one image path per line")
    p.add_argument("--index", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out", required=True, help="TSV file to write")
    p.add_argument("--lang", help="target language code")
    p.add_argument("--c", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.add_argument("--template", choices=["retrieval", "socratic"])
    p.add_argument("--shots", help="shots file (JSON array)")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG figure")
    add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("conformance", help="run provider protocol checks")
    add_common(p)
    p.set_defaults(func=cmd_conformance)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching our input exit code
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        code = classify_error(exc)
        label = {EXIT_INPUT: "input error", EXIT_PROVIDER: "provider error"}.get(
            code, "internal error"
        )
        print(f"{label}: {exc}", file=sys.stderr)
        return code


def main_entry() -> None:
    sys.exit(main())
