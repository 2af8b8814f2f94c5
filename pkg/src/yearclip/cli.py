"""Command-line entry point: ingest, split, train, predict, eval, gradcheck, report.

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from .config import TrainConfig, load_config, parse_overrides
from .embed_io import ingest_csv, read_embeddings, write_embeddings
from .errors import MissingInput, NumericError, ValidationError, YearClipError
from .evaluation import ScoredPrediction, evaluate, render_reports, scatter_csv, stratified_split
from .gradcheck import check_gradients, random_problem
from .model import PromptSet, init_params, load_params, predict, save_params
from .records import (
    ROOF_BANK,
    ReasonBank,
    Split,
    dump_manifest,
    read_manifest,
    read_reason_bank,
    validate_manifest,
)
from .train import build_batch, select_split, train_loop
from .utils import write_text_atomic

log = logging.getLogger("yearclip")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2
THREADS_ENV = "YEARGUESSR_THREADS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _require(*paths) -> None:
    missing = [str(p) for p in paths if p is not None and not Path(p).exists()]
    if missing:
        raise MissingInput("missing input file(s): " + ", ".join(missing))


def _announce(command: str, seed, resolved: dict) -> None:
    print(json.dumps({"command": command, "seed": seed, "resolved": resolved}, sort_keys=True, default=str))


def _write_meta(path: Path, meta: dict) -> None:
    write_text_atomic(str(path) + ".meta.json", json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _ratios(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ValidationError(f"bad ratios {text!r}") from None
    return vals


def _train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    pairs = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v
    if args.epochs is not None:
        pairs["epochs"] = str(args.epochs)
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    return parse_overrides(pairs, cfg)


def cmd_ingest(args) -> int:
    _require(args.csv)
    m = ingest_csv(args.csv)
    _announce("ingest", None, {"csv": args.csv, "out": args.out, "rows": len(m), "dim": m.dim})
    write_embeddings(m, args.out)
    return EXIT_OK


def cmd_split(args) -> int:
    _require(args.manifest)
    ratios = _ratios(args.ratios)
    _announce("split", args.seed, {"manifest": args.manifest, "ratios": ratios, "out": args.out})
    records = read_manifest(args.manifest)
    validate_manifest(records)
    tagged = stratified_split(records, ratios, args.seed)
    counts = {s.value: sum(1 for r in tagged if r.split is s) for s in Split}
    write_text_atomic(args.out, dump_manifest(tagged))
    _write_meta(Path(args.out), {"command": "split", "seed": args.seed, "ratios": list(ratios), "counts": counts})
    print(json.dumps(counts))
    return EXIT_OK


def _load_prompts(style_path, reason_path, bank: ReasonBank) -> PromptSet:
    return PromptSet.from_embeddings(read_embeddings(style_path), read_embeddings(reason_path), bank)


def cmd_train(args) -> int:
    _require(args.manifest, args.image_emb, args.style_emb, args.reason_emb, args.bank, args.config)
    cfg = _train_config(args)
    _announce("train", cfg.seed, cfg.to_dict())
    records = read_manifest(args.manifest)
    validate_manifest(records)
    train_recs = select_split(records, Split.TRAIN)
    if not train_recs:
        raise ValidationError("manifest has no records tagged split=Train (run `split` first)")
    bank = read_reason_bank(args.bank) if args.bank else ROOF_BANK
    prompts = _load_prompts(args.style_emb, args.reason_emb, bank)
    image = read_embeddings(args.image_emb)
    data = build_batch(train_recs, image)
    val_recs = select_split(records, Split.VAL)
    val = build_batch(val_recs, image) if val_recs else None
    params = init_params(image.dim, prompts.dim, prompts.n_inputs, cfg.seed, n_freq=cfg.n_freq,
                         rff_sigma=cfg.rff_sigma, reg_hidden=cfg.reg_hidden, activation=cfg.activation,
                         freeze_location=cfg.freeze_location)
    params, history = train_loop(data, params, prompts, cfg, val,
                                 on_epoch=lambda row: log.info("epoch %d loss %.5f", row["epoch"], row["total"]))
    save_params(args.out, params, prompts, {"seed": cfg.seed, "config": cfg.to_dict()})
    if args.log:
        write_text_atomic(args.log, "".join(json.dumps(dict(row, seed=cfg.seed), sort_keys=True) + "\n"
                                            for row in history))
    if history:
        print(json.dumps({"final": history[-1]}, sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    _require(args.manifest, args.image_emb, args.style_emb, args.reason_emb, args.checkpoint)
    params, meta = load_params(args.checkpoint)
    bank = ReasonBank.from_json(meta["bank"]) if "bank" in meta else ROOF_BANK
    _announce("predict", meta.get("seed"), {"checkpoint": args.checkpoint, "split": args.split,
                                            "no_gps": args.no_gps})
    prompts = _load_prompts(args.style_emb, args.reason_emb, bank)
    if "s_order" in meta and meta["s_order"] != prompts.s_order():
        raise ValidationError("checkpoint s-vector order does not match the supplied reason bank")
    records = read_manifest(args.manifest)
    validate_manifest(records)
    if args.split:
        records = select_split(records, Split(args.split))
    if not records:
        raise ValidationError("no records to predict")
    batch = build_batch(records, read_embeddings(args.image_emb))
    gps = None if args.no_gps else batch.gps
    outputs = predict(params, prompts, batch.ids, batch.z_raw, gps)
    lines = "".join(json.dumps(o.to_json(params.periods)) + "\n" for o in outputs)
    write_text_atomic(args.out, lines)
    _write_meta(Path(args.out), {"command": "predict", "seed": meta.get("seed"), "n": len(outputs)})
    return EXIT_OK


def _read_predictions(path, period_names: Sequence[str]) -> list[ScoredPrediction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                coarse = obj.get("coarse_period")
                if isinstance(coarse, str):
                    coarse = period_names.index(coarse)
                out.append(ScoredPrediction(str(obj["id"]), float(obj["year_hat"]), coarse))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad prediction line ({exc})") from None
    return out


def cmd_eval(args) -> int:
    from .records import DEFAULT_PERIODS

    _require(args.manifest, args.predictions)
    _announce("eval", args.seed, {"manifest": args.manifest, "predictions": args.predictions,
                                  "out": args.out, "scatter": args.scatter})
    records = read_manifest(args.manifest)
    validate_manifest(records)
    preds = _read_predictions(args.predictions, [p.name for p in DEFAULT_PERIODS])
    report = evaluate(preds, records, seed=args.seed)
    doc = report.to_json()
    text = render_reports([doc])
    scatter = scatter_csv(preds, records) if args.scatter else None
    write_text_atomic(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_text_atomic(args.text or (str(args.out) + ".txt"), text)
    if scatter is not None:
        write_text_atomic(args.scatter, scatter)
    print(text, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = TrainConfig(seed=args.seed)
    _announce("gradcheck", args.seed, {"dim": args.dim, "batch": args.batch, "n_freq": args.n_freq,
                                       "random_params": args.random_params, "tol": args.tol, "h": args.h})
    params, prompts, batch = random_problem(args.dim, args.batch, args.seed, args.n_freq,
                                            randomize_all=args.random_params)
    t0 = time.perf_counter()
    res = check_gradients(params, prompts, batch, cfg, h=args.h)
    for name, err in res.per_tensor.items():
        print(f"{name:24s} {err:.3e}")
    status = "PASS" if res.passed(args.tol) else "FAIL"
    print(f"max-rel-err {res.max_rel_err:.3e} over {res.n_checked} entries "
          f"({time.perf_counter() - t0:.2f}s) {status}")
    return EXIT_OK if res.passed(args.tol) else EXIT_NUMERIC


def cmd_report(args) -> int:
    _require(*args.reports)
    _announce("report", None, {"reports": args.reports, "out": args.out})
    docs = [json.loads(Path(p).read_text(encoding="utf-8")) for p in args.reports]
    text = render_reports(docs)
    if args.out:
        write_text_atomic(args.out, text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="yearclip", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help=f"cap BLAS workers (fallback ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("ingest", help="convert id+floats CSV into a YGEM embedding file")
    s.add_argument("csv")
    s.add_argument("out")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("split", help="stratified train/val/test tagging")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratios", default="0.6,0.2,0.2")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    def add_embeddings(sp, image=True):
        if image:
            sp.add_argument("--image-emb", required=True)
        sp.add_argument("--style-emb", required=True)
        sp.add_argument("--reason-emb", required=True)

    s = sub.add_parser("train", help="train on split=Train records")
    s.add_argument("--manifest", required=True)
    add_embeddings(s)
    s.add_argument("--bank", help="reason bank JSON (default: roof types)")
    s.add_argument("--config", help="flat key = value config file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="JSON-lines loss log path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict years and reason attributions")
    s.add_argument("--manifest", required=True)
    add_embeddings(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=[x.value for x in Split])
    s.add_argument("--no-gps", action="store_true", help="ignore coordinates")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="metrics and stratified breakdowns")
    s.add_argument("--manifest", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--out", required=True, help="EvalReport JSON path")
    s.add_argument("--text", help="aligned-column text path (default OUT.txt)")
    s.add_argument("--scatter", help="write id,pred_year,gt_year CSV")
    s.add_argument("--seed", type=int, default=None, help="seed of the run being evaluated")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    s.add_argument("--dim", type=int, default=8)
    s.add_argument("--batch", type=int, default=4)
    s.add_argument("--n-freq", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--random-params", action="store_true",
                   help="also randomize zero-conv, delta and biases")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("report", help="render one or more EvalReport JSON files (mean ± std)")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise ValidationError("missing command; choose one of ingest, split, train, predict, "
                                  "eval, gradcheck, report")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            print(f"error: {THREADS_ENV} must be an integer", file=sys.stderr)
            return EXIT_VALIDATION
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return args.func(args)
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (YearClipError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
