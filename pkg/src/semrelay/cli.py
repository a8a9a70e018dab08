"""Command-line surface: data preparation, vocabulary building, staged
training, baseline calibration, evaluation, sweeps, and report emission.

The config file is flat `key = value` text; defaults mirror the channel and
training parameter tables.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import baseline as bl
from . import textpipe as tp
from .channel import ChannelParams, LinkGeometry
from .metrics import EncoderMeanEmbedder
from .semnet import ModelConfig, SemanticRelayModel, load_checkpoint, save_checkpoint
from .sweep import emit_report, evaluate_point, load_records, save_records, \
    sweep_relay_position, sweep_sd_distance
from .training import TrainConfig, sample_geometry, train_relay_destination, \
    train_semantic_decoder, train_source_relay

CONFIG_DEFAULTS: dict[str, object] = {
    # channel
    "n0_dbm_hz": -174.0,
    "bandwidth_hz": 1e6,
    "tx_power_dbm": 30.0,
    "path_loss_exp": 4.0,
    "fading": "awgn",
    "compensation": "transmitter_inversion",
    # training
    "epochs": 10,
    "learning_rate": 5e-4,
    "weight_decay": 0.01,
    "batch_size": 64,
    "d_min_m": 2000.0,
    "d_max_m": 7000.0,
    "gamma_min": 0.2,
    "gamma_max": 0.8,
    # model
    "d_emb": 384,
    "channel_dim": 256,
    "n_blocks": 6,
    "n_heads": 6,
    "enc_blocks": 4,
    "max_len": 30,
    "vocab_size": 24045,
    "teacher_forcing": False,
    # sweep grids
    "sweep_gammas": "0.2,0.35,0.5,0.65,0.8",
    "sweep_d_sd_m": "2000,3000,4000,5000,6000,7000",
    "eval_d_sd_m": 4000.0,
    "eval_gamma": 0.5,
    "calib_min_symbols": 100000,
}

TOY_OVERRIDES = {"d_emb": 64, "n_blocks": 2, "n_heads": 2, "enc_blocks": 2,
                 "batch_size": 16, "vocab_size": 2048}


def load_config(path: str | None, scale: str = "paper") -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if scale == "toy":
        cfg.update(TOY_OVERRIDES)
    if path:
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{line_no}: expected key = value")
                key, _, val = line.partition("=")
                key = key.strip()
                val = val.strip()
                if key not in cfg:
                    raise ValueError(f"{path}:{line_no}: unknown key {key!r}")
                default = CONFIG_DEFAULTS[key]
                if isinstance(default, bool):
                    cfg[key] = val.lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    cfg[key] = int(float(val))
                elif isinstance(default, float):
                    cfg[key] = float(val)
                else:
                    cfg[key] = val
    return cfg


def channel_params(cfg: dict) -> ChannelParams:
    return ChannelParams(
        n0_dbm_hz=cfg["n0_dbm_hz"], bandwidth_hz=cfg["bandwidth_hz"],
        tx_power_dbm=cfg["tx_power_dbm"], path_loss_exp=cfg["path_loss_exp"],
        fading=cfg["fading"], compensation=cfg["compensation"])


def train_config(cfg: dict, scheme: str, scale: str, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"], learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"], batch_size=cfg["batch_size"],
        d_min_m=cfg["d_min_m"], d_max_m=cfg["d_max_m"],
        gamma_min=cfg["gamma_min"], gamma_max=cfg["gamma_max"],
        scheme=scheme, scale=scale, seed=seed,
        teacher_forcing=cfg["teacher_forcing"])


def model_config(cfg: dict, vocab_size: int, seed: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size, d_emb=cfg["d_emb"], channel_dim=cfg["channel_dim"],
        n_blocks=cfg["n_blocks"], n_heads=cfg["n_heads"],
        enc_blocks=cfg["enc_blocks"], max_len=cfg["max_len"], seed=seed)


def _load_sentences(corpus_path: str, vocab: tp.Vocabulary) -> list[tp.Sentence]:
    lines = tp.preprocess_corpus(tp.read_corpus(corpus_path), vocab)
    return [tp.tokenize(line, vocab) for line in lines]


def _split(sentences, seed):
    return tp.split_dataset(sentences, seed)


def cmd_prepare_data(args, cfg):
    lines = tp.preprocess_corpus(tp.read_corpus(args.corpus))
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "prepared.txt")
    with open(out_path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
    print(f"kept {len(lines)} sentences -> {out_path}")


def cmd_build_vocab(args, cfg):
    lines = tp.preprocess_corpus(tp.read_corpus(args.corpus))
    vocab = tp.build_vocabulary(lines, args.size or cfg["vocab_size"])
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "vocab.txt")
    vocab.save(out_path)
    print(f"vocabulary of {vocab.size} pieces -> {out_path}")


def cmd_train(args, cfg):
    vocab = tp.Vocabulary.load(args.vocab)
    sentences = _load_sentences(args.corpus, vocab)
    split = _split(sentences, args.seed)
    tcfg = train_config(cfg, args.scheme, args.scale, args.seed)
    params = channel_params(cfg)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "training_log.csv")

    if args.stage == "decoder":
        model = SemanticRelayModel(model_config(cfg, vocab.size, args.seed))
        losses = train_semantic_decoder(tcfg, model, split.train, log_path)
    else:
        if not args.init_from:
            raise SystemExit("--init-from CHECKPOINT is required after stage 'decoder'")
        model = load_checkpoint(args.init_from)
        if args.stage == "src-relay":
            losses = train_source_relay(tcfg, model, split.train, params, log_path)
        else:
            losses = train_relay_destination(tcfg, model, split.train, params,
                                             log_path, source_only=args.source_only)
    out_path = os.path.join(args.out, f"{args.scheme}_{model.stage}.ckpt")
    save_checkpoint(model, out_path)
    print(f"stage {model.stage} final epoch loss {losses[-1]:.4f} -> {out_path}")


def cmd_calibrate_baseline(args, cfg):
    vocab = tp.Vocabulary.load(args.vocab)
    sentences = _load_sentences(args.corpus, vocab)
    split = _split(sentences, args.seed)
    params = channel_params(cfg)
    tcfg = train_config(cfg, "slf", args.scale, args.seed)
    rng = np.random.default_rng(args.seed)
    P = bl.calibrate_transitions(split.train, lambda r: sample_geometry(tcfg, r),
                                 params, rng, int(cfg["calib_min_symbols"]),
                                 vocab.size)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "transitions.txt")
    P.save(out_path, header=(f"calibration seed={args.seed} fading={params.fading} "
                             f"d_min={tcfg.d_min_m} d_max={tcfg.d_max_m} "
                             f"gamma=[{tcfg.gamma_min},{tcfg.gamma_max}]"))
    print(f"transition matrix -> {out_path}")


def _collect_schemes(args):
    schemes = {}
    for spec_item in args.model or []:
        name, _, path = spec_item.partition("=")
        if name == "baseline":
            schemes[name] = bl.TransitionMatrix.load(path)
        else:
            schemes[name] = load_checkpoint(path)
    if not schemes:
        raise SystemExit("pass at least one --model scheme=path")
    return schemes


def _embedder_for(schemes):
    for name, handle in schemes.items():
        if name != "baseline":
            return EncoderMeanEmbedder(handle)
    raise SystemExit("semantic similarity needs at least one trained model")


def cmd_eval(args, cfg):
    vocab = tp.Vocabulary.load(args.vocab)
    sentences = _split(_load_sentences(args.corpus, vocab), args.seed).test
    schemes = _collect_schemes(args)
    params = channel_params(cfg)
    geometry = LinkGeometry(d_sd_m=cfg["eval_d_sd_m"],
                            d_sr_m=cfg["eval_gamma"] * cfg["eval_d_sd_m"])
    records = evaluate_point(schemes, sentences, geometry, params, args.seed,
                             _embedder_for(schemes), vocab.size)
    for r in records:
        print(f"{r.scheme:12s} gamma={r.gamma:.2f} bleu1={r.bleu1:.4f} "
              f"bleu3={r.bleu3:.4f} semsim={r.semsim:.4f} n={r.n_sentences}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        save_records(records, os.path.join(args.out, "eval.csv"))


def cmd_sweep(args, cfg):
    vocab = tp.Vocabulary.load(args.vocab)
    sentences = _split(_load_sentences(args.corpus, vocab), args.seed).test
    schemes = _collect_schemes(args)
    params = channel_params(cfg)
    embedder = _embedder_for(schemes)
    seeds = [args.seed + i for i in range(args.n_seeds)]
    if args.axis == "relay":
        gammas = [float(x) for x in str(cfg["sweep_gammas"]).split(",")]
        records = sweep_relay_position(schemes, gammas, cfg["eval_d_sd_m"], params,
                                       sentences, seeds, embedder, vocab.size)
    else:
        d_list = [float(x) for x in str(cfg["sweep_d_sd_m"]).split(",")]
        records = sweep_sd_distance(schemes, d_list, params, sentences, seeds,
                                    embedder, vocab.size)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"sweep_{args.axis}.csv")
    save_records(records, out_path)
    print(f"{len(records)} records -> {out_path}")


def cmd_report(args, cfg):
    records = load_records(args.records)
    paths = emit_report(records, args.out, axis=args.axis)
    for p in paths:
        print(p)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="semrelay")
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data")
    p.add_argument("--corpus", required=True)
    p.set_defaults(fn=cmd_prepare_data)

    p = sub.add_parser("build-vocab")
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", type=int)
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("train")
    p.add_argument("--stage", choices=("decoder", "src-relay", "relay-dst"),
                   required=True)
    p.add_argument("--scheme", choices=("slf", "spf"), required=True)
    p.add_argument("--scale", choices=("paper", "toy"), default="paper")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--init-from", dest="init_from")
    p.add_argument("--source-only", action="store_true",
                   help="train the relay-dst stage with the relay silenced")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("calibrate-baseline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--scale", choices=("paper", "toy"), default="paper")
    p.set_defaults(fn=cmd_calibrate_baseline)

    p = sub.add_parser("eval")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--model", action="append", metavar="SCHEME=PATH")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep")
    p.add_argument("--axis", choices=("relay", "distance"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--model", action="append", metavar="SCHEME=PATH")
    p.add_argument("--n-seeds", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report")
    p.add_argument("--records", required=True)
    p.add_argument("--axis", choices=("relay", "distance"), default="relay")
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    scale = getattr(args, "scale", "paper")
    cfg = load_config(args.config, scale)
    args.fn(args, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
