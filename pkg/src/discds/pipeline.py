"""File-driven pipeline stages behind the CLI.

Each stage reads its inputs from the output directory and writes files that
embed the resolved config hash, so expensive stage outputs are reusable and
reruns are idempotent.  Layout under the output directory:

    reference.tsv               stage 1 reference set
    negatives.json              per-class negative map + similarity rows
    data/real_seed{S}.tsv       long-tail training split per seed
    data/test_seed{S}.tsv       balanced test split per seed
    synth/{policy}_seed{S}.tsv  synthetic sets per policy and seed
    runs/report_{policy}_{mixup}_seed{S}.json
    aggregate.tsv / aggregate.txt
    manifest.json               seeds + sha256 of every stage file
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augment import MIXUP_NONE, uniformize_plan
from .config import ExperimentConfig
from .features import NegativePromptMap, generate_reference_set, select_negatives
from .guidance import GuidancePolicy, KIND_CADS, AnnealConfig
from .metrics import diversity_score, oracle_confusion_matrix
from .samples import DataError, SampleSet
from .sampler import INIT_FROM_REAL, sample
from .schedule import make_schedule
from .train import MetricsReport, evaluate, train_classifier
from .world import build_longtail

# sub-stream tags so each purpose draws from its own seed lineage
_SEED_REAL, _SEED_TEST, _SEED_REF, _SEED_SYNTH, _SEED_TRAIN = 11, 12, 13, 14, 15

BASELINE_NAME = "baseline"


def schedule_of(cfg: ExperimentConfig):
    p = cfg.schedule_params
    return make_schedule(p["train_steps"], p["beta_min"], p["beta_max"])


def longtail_counts(cfg: ExperimentConfig) -> np.ndarray:
    return build_longtail(cfg.world.num_classes, cfg.longtail_n_max,
                          cfg.imbalance_factor)


def real_split(cfg: ExperimentConfig, seed: int) -> SampleSet:
    counts = longtail_counts(cfg)
    parts = [cfg.world.sample_class_data(c, int(counts[c]), (seed, _SEED_REAL, c))
             for c in range(cfg.world.num_classes)]
    return SampleSet.concat(parts)


def test_split(cfg: ExperimentConfig, seed: int) -> SampleSet:
    parts = [cfg.world.sample_class_data(c, cfg.test_per_class, (seed, _SEED_TEST, c))
             for c in range(cfg.world.num_classes)]
    return SampleSet.concat(parts)


def reference_policy(cfg: ExperimentConfig) -> GuidancePolicy:
    d = cfg.resolved["guidance"]["defaults"]
    return GuidancePolicy(kind=KIND_CADS, w=d["w"],
                          anneal=AnnealConfig(tau1=d["tau1"], tau2=d["tau2"],
                                              s=d["s"], psi=d["psi"]))


# ---- stage: gen-ref -----------------------------------------------------

def run_gen_ref(cfg: ExperimentConfig) -> Path:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    seed0 = cfg.seeds[0]
    real = real_split(cfg, seed0) if cfg.sampler.init == INIT_FROM_REAL else None
    ref = generate_reference_set(cfg.world, reference_policy(cfg),
                                 cfg.reference_per_class, cfg.sampler,
                                 schedule_of(cfg), real=real,
                                 seed=(seed0, _SEED_REF), threads=cfg.threads)
    path = out / "reference.tsv"
    ref.save_tsv(path, meta=_meta(cfg, stage="gen-ref", seed=seed0))
    _write_stage_manifest(cfg, "gen_ref", [path])
    return path


# ---- stage: select-neg ---------------------------------------------------

def run_select_neg(cfg: ExperimentConfig, reference: Path | None = None) -> Path:
    ref_path = reference or (cfg.out / "reference.tsv")
    if not Path(ref_path).exists():
        raise DataError(f"reference set not found at {ref_path}; run gen-ref first")
    ref, _meta_in = SampleSet.load_tsv(ref_path)
    nmap = select_negatives(ref, cfg.extractor, num_classes=cfg.world.num_classes)
    path = cfg.out / "negatives.json"
    nmap.save_json(path, meta=_meta(cfg, stage="select-neg"))
    _write_stage_manifest(cfg, "select_neg", [path])
    return path


# ---- stage: synth ---------------------------------------------------------

def run_synth(cfg: ExperimentConfig, negatives: Path | None = None) -> list[Path]:
    out = cfg.out
    (out / "data").mkdir(parents=True, exist_ok=True)
    (out / "synth").mkdir(parents=True, exist_ok=True)
    needs_neg = any(p.uses_negative for _, p in cfg.policies)
    nmap = None
    if needs_neg:
        neg_path = negatives or (out / "negatives.json")
        if not Path(neg_path).exists():
            raise DataError(
                f"negative map not found at {neg_path}; run select-neg first "
                "(required by contrastive policies)")
        nmap, _m = NegativePromptMap.load_json(neg_path)

    schedule = schedule_of(cfg)
    counts = longtail_counts(cfg)
    quotas = uniformize_plan(counts)
    denoiser = cfg.world.denoiser()
    paths = []
    for seed in cfg.seeds:
        real = real_split(cfg, seed)
        rpath = out / "data" / f"real_seed{seed}.tsv"
        real.save_tsv(rpath, meta=_meta(cfg, stage="synth", seed=seed, split="real"))
        tpath = out / "data" / f"test_seed{seed}.tsv"
        test_split(cfg, seed).save_tsv(
            tpath, meta=_meta(cfg, stage="synth", seed=seed, split="test"))
        paths += [rpath, tpath]
        for name, policy in cfg.policies:
            parts = []
            for c in range(cfg.world.num_classes):
                n = int(quotas[c])
                if n == 0:
                    continue
                neg = nmap.negatives[c] if policy.uses_negative else None
                x0 = None
                run_cfg = cfg.sampler
                if cfg.sampler.init == INIT_FROM_REAL:
                    rows = real.x[real.labels == c]
                    reps = int(np.ceil(n / rows.shape[0]))
                    x0 = np.tile(rows, (reps, 1))[:n]
                parts.append(sample(denoiser, policy, c, cfg.world.num_classes,
                                    run_cfg, schedule, n, neg_class=neg, x0=x0,
                                    dim=cfg.world.dim, seed=(seed, _SEED_SYNTH, c),
                                    policy_name=name, threads=cfg.threads))
            synth = SampleSet.concat(parts) if parts else SampleSet.empty(cfg.world.dim)
            spath = out / "synth" / f"{name}_seed{seed}.tsv"
            synth.save_tsv(spath, meta=_meta(cfg, stage="synth", seed=seed, policy=name))
            paths.append(spath)
    _write_stage_manifest(cfg, "synth", paths)
    return paths


# ---- stage: train-eval -----------------------------------------------------

def run_train_eval(cfg: ExperimentConfig) -> tuple[list[Path], Path, Path]:
    out = cfg.out
    (out / "runs").mkdir(parents=True, exist_ok=True)
    counts = longtail_counts(cfg)
    quotas = uniformize_plan(counts)
    rows: dict[tuple[str, str], list[MetricsReport]] = {}
    report_paths = []

    for seed in cfg.seeds:
        real = _load_split(cfg, out / "data" / f"real_seed{seed}.tsv", counts, "real")
        test = _load_split(cfg, out / "data" / f"test_seed{seed}.tsv",
                           np.full(cfg.world.num_classes, cfg.test_per_class), "test")
        runs: list[tuple[str, str, SampleSet | None]] = []
        if cfg.include_baseline:
            runs.append((BASELINE_NAME, MIXUP_NONE, None))
        for name, _policy in cfg.policies:
            spath = out / "synth" / f"{name}_seed{seed}.tsv"
            if not spath.exists():
                raise DataError(f"synthetic set not found at {spath}; run synth first")
            synth, _m = SampleSet.load_tsv(spath)
            if len(synth) and not np.array_equal(
                    synth.class_counts(cfg.world.num_classes), quotas):
                raise DataError(f"{spath}: class counts do not match the "
                                f"uniformization quotas {quotas.tolist()}")
            for mode in cfg.mixup_modes:
                runs.append((name, mode, synth))

        for midx, (name, mode, synth) in enumerate(runs):
            tr = replace(cfg.train, mixup_mode=mode)
            clf = train_classifier(real, synth, tr, cfg.world.num_classes,
                                   cfg.world.dim, seed=(seed, _SEED_TRAIN, midx))
            report = evaluate(clf, test, counts, cfg.head_threshold,
                              config={"policy": name, "mixup": mode, "seed": seed,
                                      "config_hash": cfg.config_hash})
            if synth is not None and len(synth):
                post = cfg.world.oracle_posterior
                report.diversity = [
                    float(diversity_score(synth.x[synth.labels == c], post))
                    if (synth.labels == c).any() else None
                    for c in range(cfg.world.num_classes)]
                report.oracle_confusion = oracle_confusion_matrix(
                    synth, post, cfg.world.num_classes).tolist()
            rpath = out / "runs" / f"report_{name}_{mode}_seed{seed}.json"
            report.save_json(rpath)
            report_paths.append(rpath)
            rows.setdefault((name, mode), []).append(report)

    tsv, txt = write_aggregate(cfg, rows)
    _write_stage_manifest(cfg, "train_eval", report_paths + [tsv, txt])
    return report_paths, tsv, txt


def _load_split(cfg, path: Path, expected_counts: np.ndarray, kind: str) -> SampleSet:
    if not path.exists():
        raise DataError(f"{kind} split not found at {path}; run synth first")
    ss, _m = SampleSet.load_tsv(path)
    got = ss.class_counts(cfg.world.num_classes)
    if not np.array_equal(got, np.asarray(expected_counts)):
        raise DataError(f"{path}: class counts {got.tolist()} are inconsistent "
                        f"with the config ({np.asarray(expected_counts).tolist()})")
    return ss


def write_aggregate(cfg: ExperimentConfig,
                    rows: dict[tuple[str, str], list[MetricsReport]]):
    """Aggregate per-run reports into a delimited file and an aligned table."""
    agg = []
    for (name, mode), reports in rows.items():
        stats = {}
        for metric in ("head_top1", "tail_top1", "overall_top1"):
            vals = np.array([getattr(r, metric) for r in reports], dtype=float)
            stats[metric] = (float(vals.mean()),
                             float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)
        agg.append((name, mode, len(reports), stats))

    tsv_path = cfg.out / "aggregate.tsv"
    lines = [f"# config_hash={cfg.config_hash}",
             "policy\tmixup\tseeds\thead_mean\thead_std\ttail_mean\ttail_std"
             "\toverall_mean\toverall_std"]
    for name, mode, n, st in agg:
        lines.append("\t".join([name, mode, str(n)] + [
            f"{v:.4f}" for pair in (st["head_top1"], st["tail_top1"],
                                    st["overall_top1"]) for v in pair]))
    tsv_path.write_text("\n".join(lines) + "\n")

    txt_path = cfg.out / "aggregate.txt"
    w = max(len(name) for name, *_ in agg) + 2
    hdr = (f"{'policy':<{w}}{'mixup':<8}{'seeds':>5}   "
           f"{'Head':>13}  {'Tail':>13}  {'Overall':>13}")
    body = [f"# config_hash={cfg.config_hash}", hdr, "-" * len(hdr)]
    for name, mode, n, st in agg:
        cells = [f"{m:6.2f} +- {s:4.2f}" for m, s in
                 (st["head_top1"], st["tail_top1"], st["overall_top1"])]
        body.append(f"{name:<{w}}{mode:<8}{n:>5}   " + "  ".join(cells))
    txt_path.write_text("\n".join(body) + "\n")
    return tsv_path, txt_path


# ---- stage: e2e ------------------------------------------------------------

def run_e2e(cfg: ExperimentConfig) -> Path:
    run_gen_ref(cfg)
    run_select_neg(cfg)
    run_synth(cfg)
    run_train_eval(cfg)
    files = sorted(p for p in cfg.out.rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_hash": cfg.config_hash,
        "seeds": cfg.seeds,
        "files": {str(p.relative_to(cfg.out)): _sha256(p) for p in files},
    }
    path = cfg.out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _meta(cfg: ExperimentConfig, **extra) -> dict:
    meta = {"config_hash": cfg.config_hash, "world": cfg.world.name or "inline"}
    meta.update(extra)
    return meta


def _write_stage_manifest(cfg: ExperimentConfig, stage: str, paths: list[Path]):
    path = cfg.out / f"manifest_{stage}.json"
    payload = {
        "config_hash": cfg.config_hash,
        "seeds": cfg.seeds,
        "files": {str(p.relative_to(cfg.out)): _sha256(Path(p)) for p in paths},
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
