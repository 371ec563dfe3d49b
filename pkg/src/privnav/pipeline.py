"""End-to-end orchestration shared by the command line and the acceptance suite.

Artifacts under ``out_dir``::

    data/{train,test}[_det].jsonl      episode records (``_det``: deterministic start view)
    models/<model>.ckpt                 trained weights
    reports/*.txt, reports/*.csv        metrics, histograms, transcripts
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import BASELINES, RunConfig, version_string
from .dataset import gen_split, read_records, write_records
from .errors import MissingArtifactError
from .evaluation import (LearnedPolicy, MetricsReport, RandomWalkPolicy, action_agreement, attack_dataset,
                         bench_inference, evaluate, format_table, normalized_share, path_length_histogram,
                         privacy_attack)
from .model import (BASELINE_BLOCKS, NavModel, SequenceData, TrainConfig, build_sequences, pretrain, quantize,
                    retrain_classifier, step_accuracy, step_features)
from .mpc import Engine
from .ring import FixedConfig

log = logging.getLogger("privnav")

MODEL_OF = {"map_only": "map_only", "first_person": "first_person", "first_person_det": "first_person_det",
            "plaintext_cam": "multiview", "mpc2": "multiview", "mpc5": "multiview"}
MODELS = ("map_only", "first_person", "first_person_det", "multiview")
MPC_PARTIES = {"mpc2": 2, "mpc5": 5}


@dataclass(frozen=True)
class Layout:
    root: Path

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def split(self, split: str, det: bool = False) -> Path:
        return self.data / f"{split}{'_det' if det else ''}.jsonl"

    def model(self, name: str) -> Path:
        return self.models / f"{name}.ckpt"


def _layout(cfg: RunConfig) -> Layout:
    return Layout(Path(cfg.out_dir))


def report_header(cfg: RunConfig, kind: str) -> str:
    lines = [f"# report: {kind}", f"# version: {version_string()}", "# config:"]
    lines += [f"#   {ln}" for ln in cfg.lines()]
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _fixed(cfg: RunConfig) -> FixedConfig:
    return FixedConfig(cfg.frac_bits)


# -- data -------------------------------------------------------------------

def gen_data(cfg: RunConfig, det: bool = False) -> list[Path]:
    lay = _layout(cfg)
    out = []
    for split, n in (("train", cfg.n_train), ("test", cfg.n_test)):
        path = lay.split(split, det)
        write_records(path, gen_split(n, cfg.seed, split, random_start=not det))
        log.info("wrote %d %s records to %s", n, split, path)
        out.append(path)
    return out


def load_split(cfg: RunConfig, split: str, det: bool = False):
    path = _layout(cfg).split(split, det)
    if not path.exists():
        flag = " with --baseline first_person_det" if det else ""
        raise MissingArtifactError(f"{path} not found; run `privnav gen-data{flag}` first")
    return read_records(path)


# -- training ---------------------------------------------------------------

def _train_cfgs(cfg: RunConfig) -> tuple[TrainConfig, TrainConfig]:
    s1 = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, batch=cfg.batch, seed=cfg.seed, dtype=cfg.dtype,
                     lr_drop_epoch=cfg.lr_drop_epoch, lr_drop=cfg.lr_drop)
    s2 = TrainConfig(lr=cfg.stage2_lr, epochs=cfg.stage2_epochs, batch=cfg.stage2_batch, seed=cfg.seed + 1,
                     dtype=cfg.dtype)
    return s1, s2


def _blocks(name: str):
    return BASELINE_BLOCKS["plaintext_cam" if name == "multiview" else name]


def train_model(cfg: RunConfig, name: str, data: SequenceData | None = None,
                test: SequenceData | None = None) -> tuple[NavModel, dict]:
    """Stage 1 for every model; the multiview model also gets a fresh classifier on frozen features."""
    if name not in MODELS:
        raise ValueError(f"unknown model {name!r}")
    det = name == "first_person_det"
    data = data if data is not None else build_sequences(load_split(cfg, "train", det))
    test = test if test is not None else build_sequences(load_split(cfg, "test", det))
    s1, s2 = _train_cfgs(cfg)
    fcfg = _fixed(cfg)

    def progress(tag):
        return lambda epoch, loss: log.info("%s %s epoch %d loss %.5f", name, tag, epoch, loss)

    model, log1 = pretrain(data, s1, _blocks(name), progress=progress("stage1"))
    test_feats = step_features(model, test)
    stats = {"stage1_final_loss": log1.losses[-1] if log1.losses else float("nan"),
             "stage1_test_acc": step_accuracy(model, test, "real", test_feats)}
    if name == "multiview":
        _write_model(cfg, model, "multiview_stage1", stats)
        if cfg.mpc_train:
            model = _retrain_mpc(cfg, model, data)
            stats["stage2_final_loss"] = float("nan")
        else:
            model, log2 = retrain_classifier(model, data, s2, fcfg, progress=progress("stage2"))
            stats["stage2_final_loss"] = log2.losses[-1] if log2.losses else float("nan")
        stats["stage2_test_acc_fixed"] = step_accuracy(model, test, "fixed", test_feats, fcfg)
    _write_model(cfg, model, name, stats)
    body = "".join(f"{k} = {v:.6f}\n" for k, v in stats.items())
    _write(_layout(cfg).reports / f"train_{name}.txt", report_header(cfg, f"train {name}") + body)
    return model, stats


def _retrain_mpc(cfg: RunConfig, model: NavModel, data: SequenceData) -> NavModel:
    from .mpc_train import train_classifier_mpc
    from .nn import action_classifier

    fcfg = _fixed(cfg)
    out = model.copy()
    out.g = action_classifier(np.random.default_rng([cfg.seed + 1, 2]))
    feats = quantize(step_features(out, data), fcfg)
    targets = np.eye(5)[data.step_actions()]
    engine = Engine(cfg.parties, fcfg, seed=cfg.seed)
    out.g = train_classifier_mpc(out.g, feats, targets, engine, cfg.stage2_lr, cfg.mpc_train_epochs,
                                 cfg.mpc_train_batch, cfg.seed)
    return out


def _write_model(cfg: RunConfig, model: NavModel, name: str, stats: dict):
    path = _layout(cfg).model(name)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path, {"name": name, "seed": cfg.seed, "frac_bits": cfg.frac_bits})


def load_model(cfg: RunConfig, name: str) -> NavModel:
    path = _layout(cfg).model(name)
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run `privnav train --baseline ...` for {name} first")
    model, _ = NavModel.load(path)
    return model


# -- evaluation -------------------------------------------------------------

def make_policy(cfg: RunConfig, baseline: str, model: NavModel | None = None, record: bool = False):
    if baseline == "random":
        return RandomWalkPolicy(cfg.seed)
    model = model or load_model(cfg, MODEL_OF[baseline])
    if baseline in MPC_PARTIES:
        engine = Engine(MPC_PARTIES[baseline], _fixed(cfg), seed=cfg.seed, record=False)
        return LearnedPolicy(model, "mpc", engine, _fixed(cfg), name=baseline)
    return LearnedPolicy(model, "real", cfg=_fixed(cfg), name=baseline)


def evaluate_baseline(cfg: RunConfig, baseline: str, model: NavModel | None = None,
                      write: bool = True) -> tuple[MetricsReport, list]:
    if baseline not in BASELINES:
        raise ValueError(f"unknown baseline {baseline!r}")
    records = load_split(cfg, "test", det=baseline == "first_person_det")
    worlds = [r.world() for r in records]
    detour = [r.detour_required for r in records]
    policy = make_policy(cfg, baseline, model)
    report, results = evaluate(policy, worlds, detour)
    if baseline in MPC_PARTIES:
        fixed = LearnedPolicy(policy.model, "fixed", cfg=_fixed(cfg))
        _, fixed_results = evaluate(fixed, worlds, detour)
        report.extra["agreement_fixed"] = f"{action_agreement(results, fixed_results):.4f}"
    if report.seconds_per_inference is not None:
        log.info("%s: %.3g s per inference row", baseline, report.seconds_per_inference)
    if write:
        lay = _layout(cfg)
        _write(lay.reports / f"eval_{baseline}.txt",
               report_header(cfg, f"eval {baseline}") + format_table([report]) + "\n\n" + report.to_line() + "\n")
        _write(lay.reports / f"hist_{baseline}.csv", path_length_histogram(results))
        if baseline in MPC_PARTIES:
            with open(lay.reports / f"trace_{baseline}.txt", "w", encoding="utf-8", newline="\n") as fh:
                policy.engine.transport.dump_trace(fh)
    return report, results


def evaluate_all(cfg: RunConfig, baselines=BASELINES) -> list[MetricsReport]:
    reports = [evaluate_baseline(cfg, b)[0] for b in baselines]
    body = format_table(reports) + "\n\n" + "".join(r.to_line() + "\n" for r in reports)
    _write(_layout(cfg).reports / "eval_all.txt", report_header(cfg, "eval all baselines") + body)
    return reports


# -- benchmark and privacy probe --------------------------------------------

def run_bench(cfg: RunConfig, model: NavModel | None = None) -> dict:
    model = model or load_model(cfg, "multiview")
    times = bench_inference(model.g, cfg.bench_batch, (2, 5), cfg.bench_repeats, seed=cfg.seed, cfg=_fixed(cfg))
    lines = [f"plain_seconds = {times['plain']:.6g}"]
    for P in (2, 5):
        lines.append(f"mpc{P}_seconds = {times[f'mpc{P}']:.6g}")
        lines.append(f"mpc{P}_slowdown = {times[f'mpc{P}'] / times['plain']:.1f}")
    _write(_layout(cfg).reports / "bench.txt", report_header(cfg, "bench (wall clock, not reproducible)")
           + "\n".join(lines) + "\n")
    return times


def run_attack(cfg: RunConfig, model: NavModel | None = None) -> dict:
    model = model or load_model(cfg, "multiview")
    feats, labels = attack_dataset(model, cfg.attack_worlds, cfg.seed)
    shuffled = np.random.default_rng([cfg.seed, 5]).permutation(labels)
    out = {
        "samples": len(labels),
        "plaintext_accuracy": privacy_attack(feats, labels, cfg.seed),
        "share_accuracy": privacy_attack(normalized_share(feats, cfg.seed, cfg.parties, _fixed(cfg)), labels,
                                         cfg.seed),
        "shuffled_accuracy": privacy_attack(feats, shuffled, cfg.seed),
    }
    body = "".join(f"{k} = {v:.4f}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in out.items())
    _write(_layout(cfg).reports / "attack.txt", report_header(cfg, "share probe") + body)
    return out


def run_fidelity(cfg: RunConfig, model: NavModel | None = None, n: int = 1000) -> dict:
    """Secret-shared classifier vs its fixed-point plaintext twin on random feature bundles."""
    from .inference import SecureClassifier
    from .nn import forward_fixed
    from .ring import decode_fixed

    model = model or load_model(cfg, "multiview")
    fcfg = _fixed(cfg)
    feats = np.random.default_rng([cfg.seed, 6]).uniform(-2, 2, (n, model.g.layers[0].in_features))
    want = decode_fixed(forward_fixed(model.g, feats, fcfg), fcfg)
    secure = SecureClassifier(model.g, fcfg)
    got = secure.logits(Engine(cfg.parties, fcfg, seed=cfg.seed), feats)
    pred = secure.predict(Engine(cfg.parties, fcfg, seed=cfg.seed + 1), feats)
    out = {"bundles": n, "parties": cfg.parties,
           "max_abs_logit_gap": float(np.abs(got - want).max()),
           "argmax_agreement": float((pred == want.argmax(axis=1)).mean())}
    body = "".join(f"{k} = {v:.6g}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in out.items())
    _write(_layout(cfg).reports / "fidelity.txt", report_header(cfg, "cipher vs fixed logits") + body)
    return out
