"""Command-line entry point: ``sound2vec <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import experiments as ex
from .config import RunConfig, load_config
from .dataset import SplitSpec, generate_synthetic, read_manifest, write_manifest
from .errors import ConfigError, InsufficientDataError, Sound2VecError
from .frontend import compute_spectrogram, normalize, read_wav
from .lm import CharNGramLM, train_char_lm
from .model import CrnnConfig, closed_form_param_count, load_checkpoint
from .train import DecodeOptions, evaluate, prepare_corpus, run_training, transcribe_features

log = logging.getLogger("sound2vec")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, epochs=args.epochs)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _decode_options(args) -> DecodeOptions:
    lm = CharNGramLM.load(args.lm) if args.lm else None
    method = "beam" if args.beam or lm is not None else "greedy"
    return DecodeOptions(method, args.beam_width, lm, args.lm_weight, args.insertion_bonus)


def _report(rows, out: Path, stem: str, title: str) -> None:
    ex.write_rows_csv(out / f"{stem}.csv", rows)
    curves = ex.write_curves_csv(out / f"{stem}_cfv.csv", rows)
    ex.write_gnuplot(out / f"{stem}_cfv.gp", curves, title)
    for r in rows:
        print(f"{r.label:>12}  params {r.params:>9}  cfv {r.cfv:.4f}  wer {r.wer:.4f}  cer {r.cer:.4f}")


def _harness(cfg: RunConfig) -> ex.Harness:
    return ex.Harness(cfg.corpus(), cfg.schedule, cfg.seed)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_train(args) -> None:
    cfg = _config(args)
    out = _out(args)
    corpus = cfg.corpus()
    res = run_training(cfg.model, corpus, cfg.schedule, cfg.seed, checkpoint_dir=out)
    with (out / "history.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "cfv"])
        for r in res.history.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.cfv)])
    train_char_lm(e.transcript for e in corpus.train).save(out / "lm.txt")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    ev = evaluate(res.model, corpus.test)
    print(f"best epoch {res.best_epoch}  cfv {res.best_cfv:.4f}  test wer {ev.wer:.4f}  cer {ev.cer:.4f}")


def cmd_transcribe(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    options = _decode_options(args)
    spec = compute_spectrogram(read_wav(args.wav))
    if ckpt.norm_stats is not None:
        spec = normalize(spec, ckpt.norm_stats)
    text = transcribe_features(ckpt.model, spec, options)
    print(text)


def cmd_evaluate(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config(args)
    if args.manifest:
        cfg = replace(cfg, manifest=args.manifest)
    utts = read_manifest(cfg.manifest) if cfg.manifest else generate_synthetic(cfg.synth)
    examples = prepare_corpus(utts, SplitSpec(tuple(cfg.split), cfg.seed), norm_stats=ckpt.norm_stats).test
    ev = evaluate(ckpt.model, examples, _decode_options(args))
    print(f"wer {ev.wer:.4f}  cer {ev.cer:.4f}  utterances {len(ev.references)}")


def cmd_sweep_filters(args) -> None:
    cfg = _config(args)
    counts = args.filters or cfg.sweep.filters
    res = ex.filter_sweep(_harness(cfg), counts, cfg.model)
    out = _out(args)
    _report(res.rows, out, "filter_sweep", "validation cost by number of filters")
    print("spearman(N, cfv):", "n/a" if res.spearman is None else f"{res.spearman:.3f}")


def cmd_compare_kernels(args) -> None:
    cfg = _config(args)
    kernels = args.kernels or cfg.sweep.kernels
    res = ex.kernel_compare(_harness(cfg), kernels, cfg.model.filters, cfg.model)
    _report(res.rows, _out(args), "kernel_compare", "validation cost by kernel size")
    print(f"kernel spread {res.spread:.4f}" + (f"  skipped {res.skipped}" if res.skipped else ""))


def cmd_compare_padding(args) -> None:
    cfg = _config(args)
    res = ex.padding_compare(_harness(cfg), args.modes or cfg.sweep.padding_modes, cfg.model)
    _report(res.rows, _out(args), "padding_compare", "validation cost by padding mode")
    if res.max_gap is not None:
        print(f"max per-epoch gap {res.max_gap:.4f} at epoch {res.gap_epoch}")


def cmd_ablate_cel(args) -> None:
    cfg = _config(args)
    res = ex.cel_ablation(_harness(cfg), cfg.model)
    _report(res.rows, _out(args), "cel_ablation", "with and without the conv embedding layer")


def cmd_compare_dropout(args) -> None:
    cfg = _config(args)
    rates = args.rates or cfg.sweep.dropout_rates
    for r in rates:
        if not 0.0 <= r < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {r}")
    harness = ex.Harness(cfg.corpus(cfg.dropout_split), cfg.schedule, cfg.seed)
    rows = ex.dropout_compare(harness, rates, cfg.dropout_model)
    _report(rows, _out(args), "dropout_compare", "validation cost by dropout rate")


def cmd_correlate(args) -> None:
    with open(args.csv, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        pairs = [(float(r["cfv"]), float(r["wer"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise InsufficientDataError(f"{args.csv}: needs numeric 'cfv' and 'wer' columns") from exc
    if len(pairs) < 5:
        raise InsufficientDataError(f"need at least 5 (CFV, WER) pairs, got {len(pairs)}")
    rho = ex.spearman(*zip(*pairs))
    corr = ex.Correlation(rho, pairs, "" if rho is not None else "undefined: a column is constant")
    if args.out:
        ex.write_pairs_csv(_out(args) / "cfv_wer.csv", corr)
    print("spearman(cfv, wer):", corr.note if rho is None else f"{rho:.3f}")


def cmd_count_params(args) -> None:
    if args.config:
        model = load_config(args.config).model
    else:
        model = CrnnConfig()
    overrides = {k: getattr(args, k) for k in ("filters", "kernel", "gru_layers", "gru_hidden")
                 if getattr(args, k) is not None}
    if args.no_cel:
        overrides["use_cel"] = False
    model = replace(model, **overrides)
    for name, n in closed_form_param_count(model).items():
        print(f"{name:>8} {n:>10,}")


def cmd_synth_data(args) -> None:
    cfg = _config(args)
    spec = cfg.synth if args.count is None else replace(cfg.synth, count=args.count)
    out = _out(args)
    utts = generate_synthetic(spec)
    write_manifest(out / "manifest.tsv", utts, out / "wav")
    (out / "synth.json").write_text(json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(utts)} utterances to {out / 'manifest.tsv'}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sound2vec", description="CRNN speech recognition experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_, out_default="runs"):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML or JSON run configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--epochs", type=int, help="override the configured epoch count")
        sp.add_argument("--out", default=out_default, help="output directory (default: %(default)s)")
        sp.set_defaults(func=fn)
        return sp

    def decoding(sp):
        sp.add_argument("--beam", action="store_true", help="prefix beam search instead of greedy")
        sp.add_argument("--beam-width", type=int, default=8)
        sp.add_argument("--lm", help="character n-gram model file (implies --beam)")
        sp.add_argument("--lm-weight", type=float, default=0.1)
        sp.add_argument("--insertion-bonus", type=float, default=0.0)

    command("train", cmd_train, "train one model and write checkpoints")
    sp = command("transcribe", cmd_transcribe, "transcribe a WAV file with a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("wav")
    decoding(sp)
    sp = command("evaluate", cmd_evaluate, "WER/CER of a checkpoint on the test split")
    sp.add_argument("checkpoint")
    sp.add_argument("--manifest", help="evaluate on this manifest's test split")
    decoding(sp)
    sp = command("sweep-filters", cmd_sweep_filters, "sweep the number of CEL filters")
    sp.add_argument("--filters", type=int, nargs="+")
    sp = command("compare-kernels", cmd_compare_kernels, "compare CEL kernel sizes")
    sp.add_argument("--kernels", type=int, nargs="+")
    sp = command("compare-padding", cmd_compare_padding, "compare valid and same padding")
    sp.add_argument("--modes", nargs="+", choices=["valid", "same"])
    command("ablate-cel", cmd_ablate_cel, "train with and without the CEL")
    sp = command("compare-dropout", cmd_compare_dropout, "compare dropout rates")
    sp.add_argument("--rates", type=float, nargs="+")
    sp = command("correlate", cmd_correlate, "Spearman correlation of CFV and WER from a sweep CSV", None)
    sp.add_argument("csv")
    sp = command("count-params", cmd_count_params, "parameter count per layer")
    sp.add_argument("--filters", type=int)
    sp.add_argument("--kernel", type=int)
    sp.add_argument("--gru-layers", type=int)
    sp.add_argument("--gru-hidden", type=int)
    sp.add_argument("--no-cel", action="store_true")
    sp = command("synth-data", cmd_synth_data, "write the synthetic corpus as WAV files and a manifest", "synth")
    sp.add_argument("--count", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Sound2VecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
