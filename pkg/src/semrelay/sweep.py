"""Sweep experiments over relay position and source-destination distance,
with CSV and chart emission."""

from __future__ import annotations

import csv
import html
import os
from dataclasses import dataclass

import numpy as np

from .baseline import TransitionMatrix, run_baseline_episode
from .channel import ChannelParams, LinkGeometry
from .metrics import bleu, semantic_similarity
from .relay import run_episode

CSV_FIELDS = ("scheme", "channel", "d_sd_m", "d_sr_m", "gamma", "seed",
              "bleu1", "bleu2", "bleu3", "semsim", "n_sentences")


@dataclass
class MetricsRecord:
    scheme: str
    channel: str
    d_sd_m: float
    d_sr_m: float
    gamma: float
    seed: int
    bleu1: float
    bleu2: float
    bleu3: float
    semsim: float
    n_sentences: int

    def __post_init__(self):
        for b in (self.bleu1, self.bleu2, self.bleu3):
            if not 0.0 <= b <= 1.0:
                raise ValueError("BLEU out of [0, 1]")
        if not -1.0 <= self.semsim <= 1.0:
            raise ValueError("semantic similarity out of [-1, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma out of (0, 1)")


def _episode_seed(seed: int, i: int) -> int:
    return (seed * 1_000_003 + i) % (2**31 - 1)


def _aggregate(decoded_all, references, scheme, geometry, params, seed, embedder):
    b1 = float(np.mean([bleu(d, r, 1) for d, r in zip(decoded_all, references)]))
    b2 = float(np.mean([bleu(d, r, 2) for d, r in zip(decoded_all, references)]))
    b3 = float(np.mean([bleu(d, r, 3) for d, r in zip(decoded_all, references)]))
    sim = float(np.mean([semantic_similarity(d, r, embedder)
                         for d, r in zip(decoded_all, references)]))
    return MetricsRecord(scheme, params.fading, geometry.d_sd_m, geometry.d_sr_m,
                         geometry.gamma, seed, b1, b2, b3, sim, len(references))


def evaluate_point(schemes: dict, sentences, geometry: LinkGeometry,
                   params: ChannelParams, seed: int, embedder,
                   vocab_size: int | None = None) -> list[MetricsRecord]:
    """Run every configured scheme over the test sentences at one geometry.

    `schemes` maps scheme name -> trained model, or for "baseline" -> the
    calibrated TransitionMatrix.
    """
    records = []
    for name, handle in schemes.items():
        decoded_all = []
        for i, s in enumerate(sentences):
            ep_seed = _episode_seed(seed, i)
            if name == "baseline":
                rng = np.random.default_rng(ep_seed)
                decoded = run_baseline_episode(s, geometry, params, handle, rng,
                                               vocab_size)
            else:
                decoded = run_episode(name, s, geometry, params, handle,
                                      ep_seed).dest_tokens
            decoded_all.append(decoded)
        records.append(_aggregate(decoded_all, sentences, name, geometry, params,
                                  seed, embedder))
    return records


def sweep_relay_position(schemes: dict, gammas, d_sd_m: float,
                         params: ChannelParams, sentences, seeds, embedder,
                         vocab_size: int | None = None) -> list[MetricsRecord]:
    records = []
    for gamma in gammas:
        geometry = LinkGeometry(d_sd_m=d_sd_m, d_sr_m=gamma * d_sd_m)
        for seed in seeds:
            records.extend(evaluate_point(schemes, sentences, geometry, params,
                                          seed, embedder, vocab_size))
    return records


def sweep_sd_distance(schemes: dict, d_sd_list, params: ChannelParams,
                      sentences, seeds, embedder,
                      vocab_size: int | None = None) -> list[MetricsRecord]:
    records = []
    for d_sd in d_sd_list:
        geometry = LinkGeometry(d_sd_m=d_sd, d_sr_m=0.5 * d_sd)
        for seed in seeds:
            records.extend(evaluate_point(schemes, sentences, geometry, params,
                                          seed, embedder, vocab_size))
    return records


def save_records(records, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow([r.scheme, r.channel, r.d_sd_m, r.d_sr_m, r.gamma, r.seed,
                        r.bleu1, r.bleu2, r.bleu3, r.semsim, r.n_sentences])


def load_records(path: str) -> list[MetricsRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError("unexpected CSV header")
        for row in reader:
            records.append(MetricsRecord(
                row["scheme"], row["channel"], float(row["d_sd_m"]),
                float(row["d_sr_m"]), float(row["gamma"]), int(row["seed"]),
                float(row["bleu1"]), float(row["bleu2"]), float(row["bleu3"]),
                float(row["semsim"]), int(row["n_sentences"])))
    return records


def emit_report(records, out_dir: str, axis: str = "relay") -> list[str]:
    """CSV, one SVG line chart per metric, and an index page; returns paths."""
    if not records:
        raise ValueError("no records to report")
    if axis not in ("relay", "distance"):
        raise ValueError("axis must be 'relay' or 'distance'")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    save_records(records, csv_path)

    x_attr = "gamma" if axis == "relay" else "d_sd_m"
    x_label = "relay position d_SR / d_SD" if axis == "relay" else "d_SD [m]"
    paths = [csv_path]
    chart_files = []
    for metric, label in (("bleu1", "BLEU-1"), ("bleu2", "BLEU-2"),
                          ("bleu3", "BLEU-3"), ("semsim", "semantic similarity")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for scheme in sorted({r.scheme for r in records}):
            pts: dict[float, list[float]] = {}
            for r in records:
                if r.scheme == scheme:
                    pts.setdefault(getattr(r, x_attr), []).append(getattr(r, metric))
            xs = sorted(pts)
            ys = [float(np.mean(pts[x])) for x in xs]
            ax.plot(xs, ys, marker="o", label=scheme)
        ax.set_xlabel(x_label)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fname = f"{axis}_{metric}.svg"
        fig.savefig(os.path.join(out_dir, fname), format="svg")
        plt.close(fig)
        chart_files.append(fname)
        paths.append(os.path.join(out_dir, fname))

    index = os.path.join(out_dir, "index.html")
    with open(index, "w", encoding="utf-8") as f:
        f.write("<html><head><title>semrelay sweep report</title></head><body>\n")
        f.write(f"<h1>Sweep report ({html.escape(axis)} axis)</h1>\n")
        f.write('<p><a href="sweep.csv">sweep.csv</a></p>\n')
        for fname in chart_files:
            f.write(f'<img src="{fname}" width="600"/>\n')
        f.write("</body></html>\n")
    paths.append(index)
    return paths
