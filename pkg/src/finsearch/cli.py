"""Command-line entry points for the pipeline stages and the service."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import encoder, evaluation, index, mining, querygen, storage, synthetic
from .corpus import DEFAULT_RULES, build_passages, load_rules

logger = logging.getLogger(__name__)


def _add_corpus(sub):
    p = sub.add_parser("corpus", help="document ingest and passage splitting")
    ops = p.add_subparsers(dest="op", required=True)
    b = ops.add_parser("build", help="JSONL documents -> JSONL passages")
    b.add_argument("--in", dest="input", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--max-tokens", type=int, default=512)
    b.add_argument("--rules", help="JSON file with [{pattern, action}] boilerplate rules")


def _add_querygen(sub):
    p = sub.add_parser("querygen", help="synthetic query generation")
    ops = p.add_subparsers(dest="op", required=True)
    r = ops.add_parser("run")
    r.add_argument("--passages", required=True)
    r.add_argument("--pool", required=True)
    r.add_argument("--client", choices=["stub", "http"], default="stub")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--base-url", default="http://localhost:8000/v1")
    r.add_argument("--model-name", default="mistral-7b-instruct")
    r.add_argument("--max-workers", type=int, default=1)
    r.add_argument("--ratios", default="0.942,0.029,0.029")
    r.add_argument("--out", required=True, help="dataset JSONL of query pairs")
    r.add_argument("--outcomes", help="JSONL log of generation outcomes")


def _add_encoder(sub):
    p = sub.add_parser("encoder", help="train, soup, embed")
    ops = p.add_subparsers(dest="op", required=True)
    t = ops.add_parser("train")
    t.add_argument("--data", required=True, help="query-pair dataset JSONL")
    t.add_argument("--passages", required=True)
    t.add_argument("--config", help="JSON file overriding TrainConfig fields")
    t.add_argument("--out", required=True, help="output directory for checkpoints")
    s = ops.add_parser("soup")
    s.add_argument("--base", required=True)
    s.add_argument("--ckpts", required=True, help="directory of checkpoints to average")
    s.add_argument("--base-weight", type=float, default=0.5)
    s.add_argument("--each-weight", type=float, default=0.1)
    s.add_argument("--out", required=True)
    e = ops.add_parser("embed")
    e.add_argument("--model", required=True)
    e.add_argument("--passages", required=True)
    e.add_argument("--out", required=True, help="JSONL embedding dump")


def _add_mine(sub):
    m = sub.add_parser("mine", help="hard negative mining")
    m.add_argument("--model", required=True)
    m.add_argument("--pairs", required=True)
    m.add_argument("--passages", required=True)
    m.add_argument("--top-k", type=int, default=1000)
    m.add_argument("--offset", type=int, default=200)
    m.add_argument("--count", type=int, default=3)
    m.add_argument("--out", required=True)
    m.add_argument("--dropped", help="file for dropped query ids")


def _add_index(sub):
    p = sub.add_parser("index", help="build/query retrieval indices")
    ops = p.add_subparsers(dest="op", required=True)
    b = ops.add_parser("build")
    b.add_argument("--model", required=True)
    b.add_argument("--passages", required=True)
    b.add_argument("--out", required=True, help="output .npz vector index")
    b.add_argument("--exact", action="store_true", help="skip approximate structures")
    q = ops.add_parser("query")
    q.add_argument("--model", required=True)
    q.add_argument("--passages", required=True)
    q.add_argument("--query", required=True)
    q.add_argument("--mode", choices=["vector", "lexical"], default="vector")
    q.add_argument("-k", type=int, default=10)


def _add_eval(sub):
    p = sub.add_parser("eval", help="retrieval evaluation")
    ops = p.add_subparsers(dest="op", required=True)
    r = ops.add_parser("run")
    r.add_argument("--model", required=True)
    r.add_argument("--pairs", required=True)
    r.add_argument("--passages", required=True)
    r.add_argument("--split", default="test")
    r.add_argument("--ks", default="1,10,50")
    r.add_argument("--out", help="JSON report path (stdout otherwise)")
    a = ops.add_parser("ablate")
    a.add_argument("--pairs", required=True)
    a.add_argument("--passages", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--configs", default="3:1.0,0:1.0,0:0.37",
                   help="comma list of hard_negatives:data_fraction")
    a.add_argument("--epochs", type=int, default=3)
    a.add_argument("--out", help="JSON report path (stdout otherwise)")
    l = ops.add_parser("lengths")
    l.add_argument("--model", required=True)
    l.add_argument("--pairs", required=True)
    l.add_argument("--passages", required=True)
    l.add_argument("--per-bucket", type=int, default=100)
    l.add_argument("--ticker-filter", action="store_true")
    l.add_argument("--seed", type=int, default=0)
    l.add_argument("--out", help="CSV path (stdout otherwise)")


def _add_synth(sub):
    s = sub.add_parser("synth", help="write a seeded synthetic corpus")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--companies", type=int, default=120)
    s.add_argument("--docs-per-company", type=int, default=5)
    s.add_argument("--passages-per-doc", type=int, default=10)
    s.add_argument("--seed", type=int, default=7)


def _add_serve(sub):
    s = sub.add_parser("serve", help="run the HTTP retrieval service")
    s.add_argument("--config", required=True, help="JSON service config")
    s.add_argument("--host", help="overrides the config's host")
    s.add_argument("--port", type=int, help="overrides the config's port")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finsearch")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_corpus(sub)
    _add_querygen(sub)
    _add_encoder(sub)
    _add_mine(sub)
    _add_index(sub)
    _add_eval(sub)
    _add_synth(sub)
    _add_serve(sub)
    return parser


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------

def _cmd_corpus_build(args) -> int:
    rules = DEFAULT_RULES
    if args.rules:
        rules = load_rules(json.loads(Path(args.rules).read_text()))
    documents = storage.load_documents(args.input)
    passages = build_passages(documents, max_tokens=args.max_tokens, rules=rules)
    n = storage.save_passages(args.out, passages)
    print(f"wrote {n} passages from {len(documents)} documents to {args.out}")
    return 0


def _cmd_querygen_run(args) -> int:
    passages = storage.load_passages(args.passages)
    pool = storage.load_pool(args.pool)
    if args.client == "http":
        client = querygen.HttpChatClient(args.base_url, args.model_name)
    else:
        client = querygen.StubClient(args.seed)
    config = querygen.GenConfig(rng_seed=args.seed, max_workers=args.max_workers)
    outcomes, pairs = querygen.run_generation(client, passages, pool, config)
    pairs = querygen.dedup(pairs)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    doc_of = {p.id: p.doc_id for p in passages}
    pairs = querygen.assign_splits(pairs, doc_of, ratios=ratios, rng_seed=args.seed)
    if args.outcomes:
        storage.save_outcomes(args.outcomes, outcomes)
    n = storage.save_pairs(args.out, pairs)
    counts = {s: sum(1 for p in pairs if p.split == s) for s in querygen.SPLITS}
    print(f"wrote {n} pairs to {args.out} (splits: {counts})")
    return 0


def _load_train_config(path: str | None) -> encoder.TrainConfig:
    if not path:
        return encoder.TrainConfig()
    overrides = json.loads(Path(path).read_text())
    cfg = encoder.TrainConfig(**overrides)
    return cfg


def _cmd_encoder_train(args) -> int:
    pairs = [p for p in storage.load_pairs(args.data) if p.split in (None, "train")]
    passages = storage.load_passages(args.passages)
    texts = {p.id: p.embed_text() for p in passages}
    config = _load_train_config(args.config)
    model = encoder.create_model(rng_seed=config.rng_seed)
    result = encoder.train(model, pairs, texts, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ck in result.checkpoints:
        encoder.save_checkpoint(ck, out_dir / f"{ck.version}.ckpt")
    with open(out_dir / "losses.json", "w") as f:
        json.dump(result.losses, f)
    print(f"trained on {len(pairs)} pairs; wrote {len(result.checkpoints)} checkpoints to {out_dir}")
    return 0


def _cmd_encoder_soup(args) -> int:
    base = encoder.load_checkpoint(args.base)
    ckpt_paths = sorted(Path(args.ckpts).glob("*.ckpt"))
    checkpoints = [encoder.load_checkpoint(p) for p in ckpt_paths]
    soup = encoder.average_weights(base, checkpoints, args.base_weight, args.each_weight)
    encoder.save_checkpoint(soup, args.out)
    print(f"averaged {len(checkpoints)} checkpoints into {args.out}")
    return 0


def _cmd_encoder_embed(args) -> int:
    model = encoder.load_checkpoint(args.model)
    passages = storage.load_passages(args.passages)
    vectors = encoder.encode_batch(model, [p.embed_text() for p in passages], "passage")
    records = [{"_meta": {"model_version": model.version, "dim": model.dim}}]
    records.extend(
        {"passage_id": p.id, "vector": vectors[i].tolist()} for i, p in enumerate(passages)
    )
    storage.write_jsonl(args.out, records)
    print(f"wrote {len(passages)} embeddings to {args.out}")
    return 0


def _cmd_mine(args) -> int:
    model = encoder.load_checkpoint(args.model)
    pairs = storage.load_pairs(args.pairs)
    passages = storage.load_passages(args.passages)
    texts = {p.id: p.embed_text() for p in passages}
    cfg = mining.MiningConfig(top_k=args.top_k, rank_offset=args.offset,
                              negatives_per_query=args.count)
    mined, dropped = mining.mine(model, pairs, texts, cfg)
    storage.save_pairs(args.out, mined)
    if args.dropped:
        Path(args.dropped).write_text("\n".join(dropped) + ("\n" if dropped else ""))
    print(f"mined {len(mined)} pairs, dropped {len(dropped)}")
    return 0


def _index_inputs(args):
    model = encoder.load_checkpoint(args.model)
    passages = storage.load_passages(args.passages)
    texts = {p.id: p.embed_text() for p in passages}
    metadata = {
        p.id: index.PassageMeta(
            doc_id=p.doc_id, date=p.date, ticker=p.ticker, tags=frozenset(p.tags())
        )
        for p in passages
    }
    return model, passages, texts, metadata


def _cmd_index_build(args) -> int:
    model, passages, texts, metadata = _index_inputs(args)
    vectors = encoder.encode_batch(model, [texts[p.id] for p in passages], "passage")
    embeddings = {p.id: vectors[i] for i, p in enumerate(passages)}
    vindex = index.build_vector_index(embeddings, metadata, approximate=not args.exact)
    index.save_vector_index(vindex, args.out)
    print(f"indexed {len(passages)} passages -> {args.out} (version {vindex.version})")
    return 0


def _cmd_index_query(args) -> int:
    model, passages, texts, metadata = _index_inputs(args)
    if args.mode == "vector":
        vectors = encoder.encode_batch(model, [texts[p.id] for p in passages], "passage")
        embeddings = {p.id: vectors[i] for i, p in enumerate(passages)}
        vindex = index.build_vector_index(embeddings, metadata, approximate=False)
        hits = index.knn(vindex, encoder.encode(model, args.query, "query"), args.k)
    else:
        lindex = index.build_lexical_index(texts, metadata)
        hits = index.bm25_search(lindex, args.query, args.k)
    for h in hits:
        print(f"{h.rank:3d}  {h.score:8.4f}  {h.passage_id}")
    return 0


def _cmd_eval_run(args) -> int:
    model = encoder.load_checkpoint(args.model)
    pairs = storage.load_pairs(args.pairs)
    passages = storage.load_passages(args.passages)
    texts = {p.id: p.embed_text() for p in passages}
    doc_of = {p.id: p.doc_id for p in passages}
    test_pairs = [p for p in pairs if p.split == args.split]
    train_docs = {doc_of[p.positive_passage_id] for p in pairs if p.split == "train"}
    ks = tuple(int(k) for k in args.ks.split(","))
    report = evaluation.run_retrieval_eval(
        model, test_pairs, texts, doc_of, ks=ks, train_doc_ids=train_docs, label=args.split
    )
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    else:
        print(payload)
    return 0


def _cmd_eval_ablate(args) -> int:
    pairs = storage.load_pairs(args.pairs)
    passages = storage.load_passages(args.passages)
    texts = {p.id: p.embed_text() for p in passages}
    doc_of = {p.id: p.doc_id for p in passages}
    configs = []
    for part in args.configs.split(","):
        hn, frac = part.split(":")
        configs.append(evaluation.AblationConfig(int(hn), float(frac)))
    train_cfg = encoder.TrainConfig(epochs=args.epochs, rng_seed=args.seed)
    reports = evaluation.run_ablations(
        pairs, texts, doc_of, configs, train_cfg, model_seed=args.seed
    )
    payload = json.dumps([r.to_dict() for r in reports], indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    else:
        print(payload)
    return 0


def _cmd_eval_lengths(args) -> int:
    model = encoder.load_checkpoint(args.model)
    pairs = storage.load_pairs(args.pairs)
    passages = storage.load_passages(args.passages)
    texts = {p.id: p.embed_text() for p in passages}
    metadata = {
        p.id: index.PassageMeta(
            doc_id=p.doc_id, date=p.date, ticker=p.ticker, tags=frozenset(p.tags())
        )
        for p in passages
    }
    vectors = encoder.encode_batch(model, [texts[p.id] for p in passages], "passage")
    embeddings = {p.id: vectors[i] for i, p in enumerate(passages)}
    vindex = index.build_vector_index(embeddings, metadata, approximate=False)
    lindex = index.build_lexical_index(texts, metadata)
    test_pairs = [p for p in pairs if p.split == "test"]
    reports = evaluation.length_stratified_compare(
        model, vindex, lindex, test_pairs, {p.id: p for p in passages},
        per_bucket_n=args.per_bucket, ticker_filter=args.ticker_filter, rng_seed=args.seed,
    )
    csv = evaluation.length_reports_to_csv(reports)
    if args.out:
        Path(args.out).write_text(csv)
    else:
        print(csv, end="")
    return 0


def _cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    documents = synthetic.build_documents(
        args.companies, args.docs_per_company, args.passages_per_doc, args.seed
    )
    storage.save_documents(out_dir / "documents.jsonl", documents)
    storage.save_pool(out_dir / "pool.jsonl", synthetic.EXAMPLE_POOL)
    print(f"wrote {len(documents)} documents and the few-shot pool to {out_dir}")
    return 0


def load_service_state(cfg: dict):
    from .service import build_state

    model = encoder.load_checkpoint(cfg["model"])
    passages = storage.load_passages(cfg["passages"])
    pairs = storage.load_pairs(cfg["dataset"]) if cfg.get("dataset") else None
    return build_state(
        model,
        passages,
        dataset_pairs=pairs,
        ann=cfg.get("ann", True),
        request_log_path=Path(cfg["request_log"]) if cfg.get("request_log") else None,
    )


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = json.loads(Path(args.config).read_text())
    app = create_app(load_service_state(cfg))
    uvicorn.run(
        app,
        host=args.host or cfg.get("host", "127.0.0.1"),
        port=args.port or cfg.get("port", 8080),
    )
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    command = args.command
    op = getattr(args, "op", None)
    handlers = {
        ("corpus", "build"): _cmd_corpus_build,
        ("querygen", "run"): _cmd_querygen_run,
        ("encoder", "train"): _cmd_encoder_train,
        ("encoder", "soup"): _cmd_encoder_soup,
        ("encoder", "embed"): _cmd_encoder_embed,
        ("mine", None): _cmd_mine,
        ("index", "build"): _cmd_index_build,
        ("index", "query"): _cmd_index_query,
        ("eval", "run"): _cmd_eval_run,
        ("eval", "ablate"): _cmd_eval_ablate,
        ("eval", "lengths"): _cmd_eval_lengths,
        ("synth", None): _cmd_synth,
        ("serve", None): _cmd_serve,
    }
    return handlers[(command, op)](args)


if __name__ == "__main__":
    sys.exit(main())
