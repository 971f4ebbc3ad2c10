"""Pipeline command-line interface.

Subcommands: ingest, sample, generate, prepare, encode, decode, eval, stats.
One structured YAML config file drives a run; flags override config values.
Every command writes a manifest (input hashes + config snapshot) next to its
outputs. Exit codes: 0 success, 1 validation error, 2 runtime error,
3 partial success (e.g. some generations failed).

The endpoint credential is only ever read from an environment variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import codec, kgstore, metrics, sampler, textgen
from .decoder import (
    ByteTokenizer,
    ConstraintEngine,
    DecodeParams,
    SubprocessScorer,
    UniformScorer,
    WordPieceTokenizer,
    build_trie,
    constrained_beam_search,
    filter_tokenizable,
)
from .pipeline import (
    DataPointRecord,
    load_graph,
    read_datapoints,
    read_jsonl,
    save_graph,
    triplets_from_row,
    write_jsonl,
    write_manifest,
)

log = logging.getLogger("kgsynth")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return cfg


def require_path(cfg: dict, dotted: str) -> Path:
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"config key {dotted!r} is required")
        node = node[part]
    path = Path(node)
    if not path.exists():
        raise ConfigError(f"{dotted}: path does not exist: {path}")
    return path


def effective_seed(args, cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(cfg.get("seed", 0))


def make_schema(cfg: dict) -> codec.LinearizationSchema:
    variant = str(cfg.get("schema", "fe")).lower()
    if variant not in ("fe", "sc"):
        raise ConfigError(f"schema must be 'fe' or 'sc', got {variant!r}")
    return codec.LinearizationSchema(variant=codec.Variant(variant))


def make_tokenizer(cfg: dict):
    spec = str(cfg.get("tokenizer", "byte"))
    if spec == "byte":
        return ByteTokenizer()
    if spec.startswith("wordpiece:"):
        vocab_path = Path(spec.split(":", 1)[1])
        if not vocab_path.exists():
            raise ConfigError(f"tokenizer vocabulary not found: {vocab_path}")
        pieces = [line.rstrip("\n") for line in open(vocab_path, encoding="utf-8") if line.rstrip("\n")]
        return WordPieceTokenizer(pieces)
    raise ConfigError(f"unknown tokenizer {spec!r} (use 'byte' or 'wordpiece:<vocab file>')")


def out_dir(args, cfg: dict) -> Path:
    out = getattr(args, "out", None) or cfg.get("paths", {}).get("workdir", "out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    edges = require_path(cfg, "paths.edges")
    entity_labels = require_path(cfg, "paths.entity_labels")
    relation_labels = require_path(cfg, "paths.relation_labels")
    graph = kgstore.filter_zero_degree(kgstore.ingest(edges, entity_labels, relation_labels))
    out = out_dir(args, cfg)
    graph_path = out / "graph.json"
    save_graph(graph, graph_path)
    write_manifest(
        out / "ingest.manifest.json",
        "ingest",
        {
            "counts": {
                "entities": len(graph.entities),
                "relations": len(graph.relations),
                "edges": len(graph.edges),
                "duplicate_edges_dropped": graph.stats.duplicate_edges_dropped,
                "literal_relations_dropped": graph.stats.literal_relations_dropped,
                "literal_edges_dropped": graph.stats.literal_edges_dropped,
            }
        },
        {"edges": edges, "entity_labels": entity_labels, "relation_labels": relation_labels},
        [graph_path],
    )
    print(f"ingested {len(graph.entities)} entities, {len(graph.relations)} relations, {len(graph.edges)} edges")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    graph_path = require_path(cfg, "paths.graph")
    graph = load_graph(graph_path)
    seed = effective_seed(args, cfg)
    scfg_raw = dict(cfg.get("sampler", {}))
    scfg = sampler.SamplerConfig(
        poisson_mean=float(scfg_raw.get("poisson_mean", 3.0)),
        bias_factor=float(scfg_raw.get("bias_factor", 7.0)),
        dampening=float(scfg_raw.get("dampening", 0.01)),
        reweight_interval=int(scfg_raw.get("reweight_interval", 20_000)),
        strategy=str(scfg_raw.get("strategy", sampler.MIXED)),
        seed=seed,
    )
    out = out_dir(args, cfg)
    sets_path = out / "triplet_sets.jsonl"
    with open(sets_path, "w", encoding="utf-8") as fh:
        summary = sampler.write_dataset_jsonl(graph, scfg, int(args.n), fh)
    write_manifest(
        out / "sample.manifest.json",
        "sample",
        {"sampler": scfg_raw, "n": int(args.n), "summary": summary},
        {"graph": graph_path},
        [sets_path],
        seed=seed,
    )
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _load_demonstrations(path, count: int) -> list:
    demos = []
    for raw in read_jsonl(path):
        demos.append((triplets_from_row(raw), str(raw.get("text", ""))))
        if len(demos) == count:
            break
    if len(demos) < count:
        raise ConfigError(f"demonstrations file has {len(demos)} usable rows, template needs {count}")
    return demos


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    gen_cfg = dict(cfg.get("generation", {}))
    sets_path = Path(args.sets)
    if not sets_path.exists():
        raise ConfigError(f"sets file not found: {sets_path}")
    preset = str(gen_cfg.get("preset", "code"))
    if preset not in textgen.PRESETS:
        raise ConfigError(f"unknown generation preset {preset!r}")
    params = textgen.PRESETS[preset]
    template_path = gen_cfg.get("template")
    if template_path:
        template = textgen.PromptTemplate.from_file(template_path)
    else:
        # packaged defaults: demonstrations for the code preset, zero-shot otherwise
        from importlib.resources import files

        name = "few_shot.yaml" if preset == "code" else "zero_shot.yaml"
        template = textgen.PromptTemplate.from_file(files("kgsynth") / "templates" / name)
    demos = []
    if template.num_demonstrations:
        demos = _load_demonstrations(require_path(cfg, "generation.demonstrations"), template.num_demonstrations)

    prompts = []
    sets_by_id = {}
    for raw in read_jsonl(sets_path):
        set_id = str(raw["id"])
        triplets = triplets_from_row(raw)
        sets_by_id[set_id] = raw
        prompts.append((set_id, textgen.build_prompt(triplets, template, demos)))

    endpoint = textgen.EndpointConfig(
        url=str(gen_cfg.get("endpoint", "")),
        model=str(gen_cfg.get("model", "")),
        api_key_env=str(gen_cfg.get("api_key_env", textgen.DEFAULT_API_KEY_ENV)),
    )
    if not endpoint.url:
        raise ConfigError("generation.endpoint is required")
    limiter = textgen.RateLimiter(
        int(gen_cfg.get("requests_per_minute", 20)),
        int(gen_cfg.get("tokens_per_minute", 150_000)),
    )
    ledger = textgen.CostLedger(float(gen_cfg.get("price_per_1k_tokens", 0.0)))
    client = textgen.CompletionClient(
        endpoint,
        params,
        limiter,
        ledger=ledger,
        concurrency=int(gen_cfg.get("concurrency", 4)),
        max_attempts=int(gen_cfg.get("max_attempts", 5)),
        backoff_base=float(gen_cfg.get("backoff_base", 2.0)),
    )
    out = out_dir(args, cfg)
    records_path = out / "generation_records.jsonl"
    counts = client.generate(prompts, records_path)

    datapoints_path = out / "datapoints.jsonl"
    rows = []
    for raw in read_jsonl(records_path):
        record = textgen.GenerationRecord.from_json(json.dumps(raw))
        if record.status != "ok" or record.set_id not in sets_by_id:
            continue
        src = sets_by_id[record.set_id]
        point = DataPointRecord(
            id=record.set_id,
            text=record.completion.strip(),
            triplets=triplets_from_row(src),
            provenance="generated",
            flags={"partial": bool(src.get("partial", False))},
        )
        rows.append(json.loads(point.to_json()))
    write_jsonl(datapoints_path, rows)
    write_manifest(
        out / "generate.manifest.json",
        "generate",
        {"generation": {k: v for k, v in gen_cfg.items() if k != "endpoint"}, "counts": counts,
         "tokens_consumed": ledger.tokens_consumed, "cost": ledger.cost},
        {"sets": sets_path},
        [records_path, datapoints_path],
    )
    print(json.dumps({**counts, "cost": ledger.cost}, sort_keys=True))
    return EXIT_PARTIAL if counts["failed"] else EXIT_OK


def cmd_prepare(args) -> int:
    cfg = load_config(args.config)
    datapoints_path = Path(args.datapoints)
    if not datapoints_path.exists():
        raise ConfigError(f"datapoints file not found: {datapoints_path}")
    tokenizer = make_tokenizer(cfg)
    prep_cfg = dict(cfg.get("prepare", {}))
    max_input = int(prep_cfg.get("max_input_tokens", 256))
    max_target = int(prep_cfg.get("max_target_tokens", 256))

    fe_schema = codec.LinearizationSchema(variant=codec.Variant.FE)
    sc_schema = codec.LinearizationSchema(variant=codec.Variant.SC)
    fe_rows, sc_rows = [], []
    drops = {"empty": 0, "input_too_long": 0, "target_too_long": 0, "unencodable": 0}
    for point in read_datapoints(datapoints_path):
        if not point.triplets:
            drops["empty"] += 1
            continue
        input_ids = tokenizer.try_encode(point.text)
        fe_target = codec.linearize(point.triplets, fe_schema, point.text).text
        fe_ids = tokenizer.try_encode(fe_target)
        if input_ids is None or fe_ids is None:
            drops["unencodable"] += 1
            continue
        if len(input_ids) > max_input:
            drops["input_too_long"] += 1
            continue
        # the longer fully-expanded target governs, keeping the same
        # surviving datapoints for both linearizations
        if len(fe_ids) > max_target:
            drops["target_too_long"] += 1
            continue
        sc_target = codec.linearize(point.triplets, sc_schema, point.text).text
        fe_rows.append({"id": point.id, "input": point.text, "target": fe_target})
        sc_rows.append({"id": point.id, "input": point.text, "target": sc_target})

    out = out_dir(args, cfg)
    fe_path, sc_path = out / "prepared_fe.jsonl", out / "prepared_sc.jsonl"
    write_jsonl(fe_path, fe_rows)
    write_jsonl(sc_path, sc_rows)
    summary = {"kept": len(fe_rows), "drops": drops, "max_input_tokens": max_input, "max_target_tokens": max_target}
    write_manifest(out / "prepare.manifest.json", "prepare", summary, {"datapoints": datapoints_path}, [fe_path, sc_path])
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = load_config(args.config)
    datapoints_path = Path(args.datapoints)
    if not datapoints_path.exists():
        raise ConfigError(f"datapoints file not found: {datapoints_path}")
    schema = make_schema(cfg)
    rows = []
    for point in read_datapoints(datapoints_path):
        if not point.triplets:
            continue
        rows.append(
            {
                "id": point.id,
                "text": point.text,
                "linearization": schema.variant.value,
                "linearized": codec.linearize(point.triplets, schema, point.text).text,
            }
        )
    out = out_dir(args, cfg)
    encoded_path = out / f"encoded_{schema.variant.value}.jsonl"
    write_jsonl(encoded_path, rows)
    write_manifest(out / "encode.manifest.json", "encode", {"schema": schema.variant.value, "rows": len(rows)},
                   {"datapoints": datapoints_path}, [encoded_path])
    print(f"encoded {len(rows)} datapoints ({schema.variant.value})")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = load_config(args.config)
    graph_path = require_path(cfg, "paths.graph")
    graph = load_graph(graph_path)
    inputs_path = Path(args.inputs)
    if not inputs_path.exists():
        raise ConfigError(f"inputs file not found: {inputs_path}")
    schema = make_schema(cfg)
    tokenizer = make_tokenizer(cfg)

    entity_surfaces = [codec.entity_surface(label) for label in graph.entities.labels]
    kept_entities, dropped_e = filter_tokenizable(entity_surfaces, tokenizer)
    kept_relations, dropped_r = filter_tokenizable(list(graph.relations.labels), tokenizer)
    if dropped_e or dropped_r:
        log.warning("catalog filtering dropped %d entities, %d relations", len(dropped_e), len(dropped_r))
    engine = ConstraintEngine(
        schema,
        tokenizer,
        build_trie(kept_entities, tokenizer),
        build_trie(kept_relations, tokenizer),
    )
    decode_cfg = dict(cfg.get("decode", {}))
    params = DecodeParams(
        num_beams=int(decode_cfg.get("num_beams", 10)),
        length_penalty=decode_cfg.get("length_penalty"),
        max_length=int(decode_cfg.get("max_length", 256)),
        top_k_returned=int(decode_cfg.get("top_k_returned", 1)),
    )
    if args.scorer_cmd:
        scorer = SubprocessScorer(args.scorer_cmd, tokenizer.vocab_size, shell=True)
    else:
        scorer = UniformScorer(tokenizer.vocab_size)

    entity_labels = set(graph.entities.labels)
    relation_labels = set(graph.relations.labels)
    rows = []
    try:
        for raw in read_jsonl(inputs_path):
            context = str(raw.get("text", raw.get("context", "")))
            results = constrained_beam_search(scorer, context, engine, params)
            best = results[0]
            parsed = codec.parse(best.text, schema, entity_labels, relation_labels)
            rows.append(
                {
                    "id": str(raw["id"]),
                    "triplets": [{"s": s, "r": r, "o": o} for s, r, o in parsed.triplets],
                    "linearized": best.text,
                    "score": best.normalized_score,
                    "truncated": not best.finished,
                }
            )
    finally:
        if isinstance(scorer, SubprocessScorer):
            scorer.close()
    out = out_dir(args, cfg)
    preds_path = out / "predictions.jsonl"
    write_jsonl(preds_path, rows)
    write_manifest(out / "decode.manifest.json", "decode",
                   {"schema": schema.variant.value, "decode": decode_cfg,
                    "catalog": {"entities": len(kept_entities), "relations": len(kept_relations),
                                "dropped_entities": len(dropped_e), "dropped_relations": len(dropped_r)}},
                   {"graph": graph_path, "inputs": inputs_path}, [preds_path])
    print(f"decoded {len(rows)} inputs")
    return EXIT_OK


def _pairs_from_files(predictions_path, gold_path) -> list[metrics.EvalPair]:
    preds = {str(raw["id"]): set(triplets_from_row(raw)) for raw in read_jsonl(predictions_path)}
    gold = {str(raw["id"]): set(triplets_from_row(raw)) for raw in read_jsonl(gold_path)}
    return [
        metrics.EvalPair.make(doc_id, preds.get(doc_id, set()), gold.get(doc_id, set()))
        for doc_id in sorted(set(preds) | set(gold))
    ]


def _read_train_counts(path) -> dict:
    counts = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            relation, count = line.split("\t")
            counts[relation] = int(count)
    return counts


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    predictions = Path(args.predictions)
    gold = Path(args.gold)
    for p in (predictions, gold):
        if not p.exists():
            raise ConfigError(f"file not found: {p}")
    mcfg = dict(cfg.get("metrics", {}))
    seed = effective_seed(args, cfg)
    pairs = _pairs_from_files(predictions, gold)
    if not pairs:
        raise ConfigError("no evaluation pairs found")
    train_counts = None
    inputs = {"predictions": predictions, "gold": gold}
    if args.train_counts:
        train_counts = _read_train_counts(args.train_counts)
        inputs["train_counts"] = Path(args.train_counts)
    report = metrics.evaluate(
        pairs,
        n_bootstrap=int(mcfg.get("n_bootstrap", 50)),
        level=float(mcfg.get("level", 0.95)),
        seed=seed,
        macro_f1_mode=str(mcfg.get("macro_f1_mode", "mean_of_f1")),
        train_counts=train_counts,
    )
    out = out_dir(args, cfg)
    report_path = out / "eval_report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = [report_path]
    if report.per_bucket:
        bucket_path = out / "buckets.tsv"
        with open(bucket_path, "w", encoding="utf-8") as fh:
            fh.write("bucket\tn_gold\tn_predicted\tf1\tlower\tupper\n")
            for row in report.per_bucket:
                fh.write(f"{row.bucket}\t{row.n_gold}\t{row.n_predicted}\t{row.f1_point:.6f}\t{row.f1_lower:.6f}\t{row.f1_upper:.6f}\n")
        outputs.append(bucket_path)
    write_manifest(out / "eval.manifest.json", "eval", {"metrics": mcfg}, inputs, outputs, seed=seed)
    micro = report.micro["f1"]
    print(f"micro-F1 {micro['point']:.4f} [{micro['lower']:.4f}, {micro['upper']:.4f}]")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = load_config(args.config)
    dataset = Path(args.dataset)
    if not dataset.exists():
        raise ConfigError(f"dataset file not found: {dataset}")
    sets = [triplets_from_row(raw) for raw in read_jsonl(dataset)]
    if not any(sets):
        raise ConfigError("dataset contains no triplets")
    stats = metrics.relation_stats(sets)
    out = out_dir(args, cfg)
    stats_path = out / "relation_stats.json"
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "summary": {
                    "min": stats.minimum,
                    "q1": stats.q1,
                    "median": stats.median,
                    "q3": stats.q3,
                    "max": stats.maximum,
                },
                "n_relations": len(stats.counts),
                "counts": {str(k): v for k, v in sorted(stats.counts.items())},
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    cdf_path = out / "relation_cdf.tsv"
    with open(cdf_path, "w", encoding="utf-8") as fh:
        fh.write("count\tfraction_relations_leq\n")
        for count, fraction in stats.cdf:
            fh.write(f"{count}\t{fraction:.6f}\n")
    write_manifest(out / "stats.manifest.json", "stats", {}, {"dataset": dataset}, [stats_path, cdf_path])
    print(f"relation stats over {len(stats.counts)} relations: "
          f"min={stats.minimum:g} q1={stats.q1:g} median={stats.median:g} q3={stats.q3:g} max={stats.maximum:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML pipeline config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: paths.workdir)")

    p = sub.add_parser("ingest", help="load and filter the knowledge graph")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", help="sample coherent triplet sets")
    common(p)
    p.add_argument("--n", type=int, required=True, help="number of triplet sets")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("generate", help="generate text for sampled triplet sets")
    common(p)
    p.add_argument("--sets", required=True, help="triplet-set JSONL from 'sample'")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("prepare", help="filter and linearize datapoints into training files")
    common(p)
    p.add_argument("--datapoints", required=True, help="DataPoint JSONL")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("encode", help="linearize datapoints under the configured schema")
    common(p)
    p.add_argument("--datapoints", required=True, help="DataPoint JSONL")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="constrained beam search over a scorer plug-in")
    common(p)
    p.add_argument("--inputs", required=True, help="JSONL with one {'id', 'text'} object per line")
    p.add_argument("--scorer-cmd", default=None, help="external scorer command (newline-delimited JSON protocol)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="micro/macro P/R/F1 with bootstrap CIs")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--train-counts", default=None, help="TSV relation<TAB>count for frequency buckets")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="relation occurrence distribution of a dataset")
    common(p)
    p.add_argument("--dataset", required=True, help="JSONL with triplets per row")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, kgstore.KgError, textgen.TemplateError, codec.CodecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("command failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
