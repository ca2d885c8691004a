"""Report figures rendered to files next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .config import ExperimentConfig
from .samples import SampleSet
from .train import MetricsReport

_SAVE_KW = dict(dpi=120, metadata={"Software": "discds"})


def _save(fig, path: Path) -> Path:
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def _scatter_by_class(ax, ss: SampleSet, num_classes: int, title: str):
    cmap = plt.get_cmap("tab10")
    for c in range(num_classes):
        pts = ss.x[ss.labels == c]
        if len(pts) == 0:
            continue
        ax.scatter(pts[:, 0], pts[:, 1], s=6, alpha=0.5, color=cmap(c % 10),
                   label=f"class {c}")
    ax.set_title(title, fontsize=9)
    ax.set_aspect("equal", adjustable="datalim")
    ax.tick_params(labelsize=7)


def plot_data_and_synth(cfg: ExperimentConfig) -> list[Path]:
    """Scatter the real split and each policy's synthetic set (first seed)."""
    if cfg.world.dim != 2:
        return []
    seed = cfg.seeds[0]
    panels: list[tuple[str, Path]] = [
        ("real split", cfg.out / "data" / f"real_seed{seed}.tsv")]
    panels += [(name, cfg.out / "synth" / f"{name}_seed{seed}.tsv")
               for name, _ in cfg.policies]
    panels = [(t, p) for t, p in panels if p.exists()]
    if not panels:
        return []
    cols = min(3, len(panels))
    rows = int(np.ceil(len(panels) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3.4 * rows),
                             squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, (title, path) in zip(axes.flat, panels):
        ax.axis("on")
        ss, _ = SampleSet.load_tsv(path)
        if len(ss):
            _scatter_by_class(ax, ss, cfg.world.num_classes, title)
        else:
            ax.set_title(f"{title} (empty)", fontsize=9)
    axes.flat[0].legend(fontsize=6, loc="best")
    fig.suptitle(f"samples — {cfg.world.name or 'world'}", fontsize=11)
    fig.tight_layout()
    return [_save(fig, cfg.out / "fig_samples.png")]


def plot_accuracy(cfg: ExperimentConfig) -> list[Path]:
    """Grouped head/tail/overall bars per aggregate row."""
    path = cfg.out / "aggregate.tsv"
    if not path.exists():
        return []
    rows = []
    for line in path.read_text().splitlines():
        if line.startswith("#") or line.startswith("policy\t"):
            continue
        f = line.split("\t")
        rows.append((f"{f[0]}/{f[1]}", float(f[3]), float(f[5]), float(f[7]),
                     float(f[4]), float(f[6]), float(f[8])))
    if not rows:
        return []
    labels = [r[0] for r in rows]
    x = np.arange(len(rows))
    width = 0.27
    fig, ax = plt.subplots(figsize=(1.6 * len(rows) + 3, 4))
    for k, (metric, off) in enumerate((("head", -width), ("tail", 0.0),
                                       ("overall", width))):
        vals = [r[1 + k] for r in rows]
        errs = [r[4 + k] for r in rows]
        ax.bar(x + off, vals, width, yerr=errs, capsize=3, label=metric)
    ax.set_xticks(x, labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("top-1 accuracy (%)")
    ax.set_title("head / tail / overall top-1 by policy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return [_save(fig, cfg.out / "fig_accuracy.png")]


def plot_diversity_confusion(cfg: ExperimentConfig) -> list[Path]:
    """Per-class diversity bars and oracle-confusion heatmaps per policy."""
    reports: dict[str, list[MetricsReport]] = {}
    for name, _p in cfg.policies:
        for seed in cfg.seeds:
            for mode_dir in cfg.mixup_modes:
                path = cfg.out / "runs" / f"report_{name}_{mode_dir}_seed{seed}.json"
                if path.exists():
                    reports.setdefault(name, []).append(MetricsReport.load_json(path))
    reports = {k: v for k, v in reports.items()
               if any(r.diversity for r in v)}
    if not reports:
        return []
    out = []
    C = cfg.world.num_classes
    fig, ax = plt.subplots(figsize=(1.1 * C * len(reports) + 2, 3.6))
    width = 0.8 / len(reports)
    for k, (name, reps) in enumerate(reports.items()):
        div = np.array([[r.diversity[c] if r.diversity and r.diversity[c] else np.nan
                         for c in range(C)] for r in reps], dtype=float)
        ax.bar(np.arange(C) + k * width, np.nanmean(div, axis=0), width, label=name)
    ax.set_xticks(np.arange(C) + 0.4, [f"class {c}" for c in range(C)], fontsize=8)
    ax.set_ylabel("diversity score")
    ax.set_title("per-class synthetic diversity (oracle scorer)")
    ax.axhline(1.0, color="gray", lw=0.6)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out.append(_save(fig, cfg.out / "fig_diversity.png"))

    fig, axes = plt.subplots(1, len(reports),
                             figsize=(3.2 * len(reports), 3.2), squeeze=False)
    for ax, (name, reps) in zip(axes.flat, reports.items()):
        mats = [np.array(r.oracle_confusion) for r in reps if r.oracle_confusion]
        m = np.mean(mats, axis=0)
        im = ax.imshow(m, cmap="viridis", vmin=0, vmax=1)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("oracle class", fontsize=7)
        ax.set_ylabel("label", fontsize=7)
        ax.tick_params(labelsize=7)
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.suptitle("oracle confusion of synthetic samples", fontsize=10)
    fig.tight_layout()
    out.append(_save(fig, cfg.out / "fig_confusion.png"))
    return out


def render_report(cfg: ExperimentConfig) -> list[Path]:
    made = (plot_data_and_synth(cfg) + plot_accuracy(cfg)
            + plot_diversity_confusion(cfg))
    return made
