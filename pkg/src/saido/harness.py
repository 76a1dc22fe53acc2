"""Continual protocol runner: routing, training with transformed gradients, evaluation, reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import idom
from .checkpoint import TrainedSystem
from .data import ProtocolSpec, generate_task
from .metrics import AccuracyMatrix, aa, af, new_acc
from .model import Detector, SGDMomentum, gradients, logits_of, adapt, loglik_gradients, predict_label, prompt_embedding
from .numcore import SeededRng
from .scene import INITIAL_SCENES, SceneLibrary, assign_and_update, compose_prompt, register_scene, route_batch

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


@dataclass
class RunConfig:
    novelty_tau: float
    protocol: ProtocolSpec
    seed: int = 0
    d_raw: int = 32
    d_feat: int = 16
    rank: int = 4
    alpha: float = 0.75
    e: float = 1.0
    lam: float = 1.0
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 32
    temperature: float = 1.0
    preseed_scenes: bool = False
    idom_on: bool = True
    saem_on: bool = True

    def validate(self):
        checks = [
            (self.novelty_tau > 0, "novelty_tau must be > 0"),
            (self.temperature > 0, "temperature must be > 0"),
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.d_raw >= 1 and self.d_feat >= 1, "feature widths must be >= 1"),
            (self.rank >= 1, "rank must be >= 1"),
            (0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]"),
            (self.e >= 0, "e must be >= 0"),
            (self.lam >= 0, "lambda must be >= 0"),
            (self.lr > 0, "lr must be > 0"),
            (0.0 <= self.momentum < 1.0, "momentum must lie in [0, 1)"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.protocol.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.protocol.tasks[0].d_raw != self.d_raw:
            raise ConfigError(f"d_raw={self.d_raw} but protocol features have width {self.protocol.tasks[0].d_raw}")
        return self

    @property
    def idom_config(self):
        return idom.IdomConfig(alpha=self.alpha, e=self.e)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["lambda"] = d.pop("lam")
        d["protocol"] = self.protocol.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)} - {"lam"} | {"lambda"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for req in ("novelty_tau", "protocol"):
            if req not in d:
                raise ConfigError(f"missing required config key {req!r}")
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        try:
            d["protocol"] = ProtocolSpec.from_dict(d["protocol"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad protocol: {exc}") from exc
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for k, v in list(d.items()):
            if types[k] in ("int",) and not (isinstance(v, int) and not isinstance(v, bool)):
                raise ConfigError(f"{k} must be an integer")
            if types[k] == "float":
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{k} must be a number")
                d[k] = float(v)
            if types[k] == "bool" and not isinstance(v, bool):
                raise ConfigError(f"{k} must be true or false")
        return cls(**d).validate()


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(raw)


@dataclass
class RunReport:
    config: dict
    task_names: list
    matrix: list  # [session, task index, accuracy]
    sessions: list  # dicts: session, aa, af, new_acc, library_size
    library_timeline: list
    openworld: list = field(default_factory=list)  # dicts: task, accuracy
    wall_clock: float = 0.0

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def final(self):
        return self.sessions[-1]

    def accuracy_matrix(self):
        m = AccuracyMatrix()
        for k, j, acc in self.matrix:
            m.record(k, j, acc)
        return m


def _check_finite(tag, arrays):
    for k, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{tag}: non-finite values in block {k}")


class ContinualRunner:
    """Owns one run: detector, scene library, per-expert importance states."""

    def __init__(self, cfg):
        self.cfg = cfg.validate()
        self.rng = SeededRng(cfg.seed)
        self.detector = Detector.create(cfg.seed, cfg.d_raw, cfg.d_feat, cfg.rank)
        self.library = SceneLibrary(cfg.novelty_tau, cfg.temperature) if cfg.saem_on else None
        self.states = []
        # the head is shared by every expert, so its importance history is too
        self.head_state = idom.ImportanceState.for_params(self.detector.head.params())
        self.data = [generate_task(t) for t in cfg.protocol.tasks]
        self.matrix = AccuracyMatrix()
        self.sessions = []
        self.timeline = []
        if not cfg.saem_on:
            self._new_expert()

    # experts --------------------------------------------------------------

    def _new_expert(self):
        eid = len(self.detector.experts)
        self.detector.add_expert(self.rng.stream("adapter", eid))
        self.states.append(idom.ImportanceState.for_params(self.detector.experts[eid].params()))
        return eid

    @property
    def system(self):
        return TrainedSystem(self.detector, self.library, self.states, self.head_state)

    @property
    def library_size(self):
        return len(self.library) if self.library is not None else len(self.detector.experts)

    def preseed(self):
        """Seed the library with the initial scene vocabulary from the first sample of each name."""
        for name in INITIAL_SCENES:
            for train, _ in self.data:
                hit = np.flatnonzero(train.scenes == name)
                if hit.size:
                    feat = self.detector.backbone(train.X[hit[0]])
                    register_scene(self.library, name, feat, self._new_expert)
                    break

    # training -------------------------------------------------------------

    def route_train(self, H, samples):
        """Expert id and scene prompt name per training sample, updating the library."""
        if self.library is None:
            return np.zeros(len(samples), dtype=np.int64), samples.scenes.copy()
        eids = np.empty(len(samples), dtype=np.int64)
        names = np.empty(len(samples), dtype=object)
        for i in range(len(samples)):
            idx, eid = assign_and_update(H[i], self.library, self._new_expert)
            eids[i] = eid
            names[i] = self.library.scenes[idx].name
        return eids, names

    def _batches(self, eids, k, epoch):
        bs = self.cfg.batch_size
        batches = []
        for eid in np.unique(eids):
            idx = np.flatnonzero(eids == eid)
            idx = idx[self.rng.stream(f"shuffle/{k}/{epoch}", int(eid)).permutation(idx.size)]
            batches += [(int(eid), idx[s:s + bs]) for s in range(0, idx.size, bs)]
        order = self.rng.stream(f"batch-order/{k}", epoch).permutation(len(batches))
        return [batches[i] for i in order]

    def train_session(self, k, H, y, U, eids, fisher_scenes):
        cfg = self.cfg
        opt = SGDMomentum(cfg.lr, cfg.momentum)
        head = self.detector.head
        icfg = cfg.idom_config
        for epoch in range(cfg.epochs):
            final = epoch == cfg.epochs - 1
            for eid, idx in self._batches(eids, k, epoch):
                adapter = self.detector.experts[eid]
                where = f"session {k + 1} epoch {epoch + 1} expert {eid}"
                try:
                    _, g = gradients(H[idx], y[idx], U[idx], adapter, head, cfg.lam)
                except ValueError as exc:
                    raise NumericError(f"{where}: {exc} (training diverged; lower lr or rescale features)") from exc
                _check_finite(where, g)
                g_ad = {"A": g["A"], "B": g["B"]}
                g_head = {"W": g["W"], "b": g["b"]}
                if cfg.idom_on:
                    if final:
                        idom.record_reference_gradient(self.states[eid], g_ad)
                        idom.record_reference_gradient(self.head_state, g_head)
                    g_ad = idom.transform_gradient(g_ad, self.states[eid], icfg)
                    g_head = idom.transform_gradient(g_head, self.head_state, icfg)
                opt.step(("A", eid), adapter.A, g_ad["A"])
                opt.step(("B", eid), adapter.B, g_ad["B"])
                opt.step("W", head.W, g_head["W"])
                opt.step("b", head.b, g_head["b"])
        if cfg.idom_on:
            self.finalize_importance(H, y, eids, fisher_scenes)

    def finalize_importance(self, H, y, eids, fisher_scenes):
        """Fisher importance at the end of a session, then fold it into history."""
        head = self.detector.head
        alpha = self.cfg.alpha
        for eid in np.unique(eids):
            sel = eids == eid
            per_sample = loglik_gradients(H[sel], y[sel], self.detector.experts[eid], head)
            idom.accumulate_fisher_batch(
                self.states[eid], {"A": per_sample["A"], "B": per_sample["B"]}, y[sel], fisher_scenes[sel]
            )
            idom.accumulate_fisher_batch(
                self.head_state, {"W": per_sample["W"], "b": per_sample["b"]}, y[sel], fisher_scenes[sel]
            )
            idom.finalize_task(self.states[eid], alpha)
        idom.finalize_task(self.head_state, alpha)

    def accuracy(self, samples):
        return accuracy(self.system, samples)

    # protocol -------------------------------------------------------------

    def run_session(self, k):
        train, _ = self.data[k]
        H = self.detector.backbone(train.X)
        eids, scene_names = self.route_train(H, train)
        texts = [compose_prompt(c, s, lbl) for c, s, lbl in zip(train.scenes, scene_names, train.y)]
        U = np.stack([prompt_embedding(t, self.cfg.d_feat) for t in texts])
        self.train_session(k, H, train.y, U, eids, scene_names)
        s = k + 1
        for j in range(s):
            self.matrix.record(s, j + 1, self.accuracy(self.data[j][1]))
        row = {
            "session": s,
            "aa": aa(self.matrix, s),
            "af": af(self.matrix, s) if s >= 2 else None,
            "new_acc": new_acc(self.matrix, s),
            "library_size": self.library_size,
        }
        self.sessions.append(row)
        self.timeline.append(self.library_size)
        log.info("session %d (%s): AA=%.4f AF=%s NewACC=%.4f scenes=%d", s, self.cfg.protocol.tasks[k].name,
                 row["aa"], "-" if row["af"] is None else f"{row['af']:.4f}", row["new_acc"], row["library_size"])

    def run(self):
        t0 = time.perf_counter()
        if self.library is not None and self.cfg.preseed_scenes:
            self.preseed()
        for k in range(len(self.data)):
            self.run_session(k)
        ow = run_openworld(self.cfg, self.system) if self.cfg.protocol.heldout else []
        return RunReport(
            config=self.cfg.to_dict(),
            task_names=[t.name for t in self.cfg.protocol.tasks],
            matrix=[list(e) for e in self.matrix.entries()],
            sessions=self.sessions,
            library_timeline=self.timeline,
            openworld=ow,
            wall_clock=time.perf_counter() - t0,
        )


def predict(system, X):
    """Labels from the frozen system; the scene library is only read."""
    det = system.detector
    H = det.backbone(X)
    if system.library is None:
        eids = np.zeros(len(H), dtype=np.int64)
    else:
        eids = route_batch(H, system.library)
    pred = np.empty(len(H), dtype=np.int64)
    for eid in np.unique(eids):
        sel = eids == eid
        V, _ = adapt(H[sel], det.experts[eid])
        pred[sel] = predict_label(logits_of(V, det.head))
    return pred


def accuracy(system, samples):
    return float(np.mean(predict(system, samples.X) == samples.y))


def train_protocol(cfg):
    """Run the continual protocol; returns ``(report, trained system)``."""
    runner = ContinualRunner(cfg)
    report = runner.run()
    return report, runner.system


def run_protocol(cfg):
    return train_protocol(cfg)[0]


def run_openworld(cfg, system):
    """Accuracy of the frozen system on each held-out task, in protocol order."""
    if system is None or not system.detector.experts or (system.library is not None and not len(system.library)):
        raise ValueError("open-world evaluation needs a trained system")
    rows = []
    for spec in cfg.protocol.heldout:
        _, test = generate_task(spec)
        rows.append({"task": spec.name, "accuracy": accuracy(system, test)})
    return rows


def repeat_seeds(cfg, seeds):
    """Run once per seed; returns the reports and the per-metric medians of the final session."""
    reports = [run_protocol(dataclasses.replace(cfg, seed=s)) for s in seeds]
    keys = ("aa", "af", "new_acc")
    median = {k: statistics.median(r.final[k] for r in reports if r.final[k] is not None) for k in keys
              if any(r.final[k] is not None for r in reports)}
    return reports, median


# reports ----------------------------------------------------------------

def _fmt(x):
    return "" if x is None else repr(float(x))


def emit_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in ("report.json", "matrix.csv", "sessions.csv")}
    with open(paths["report.json"], "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    with open(paths["matrix.csv"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session", "task", "accuracy"])
        for k, j, acc in report.matrix:
            w.writerow([k, j, _fmt(acc)])
    with open(paths["sessions.csv"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session", "aa", "af", "new_acc", "library_size"])
        for s in report.sessions:
            w.writerow([s["session"], _fmt(s["aa"]), _fmt(s["af"]), _fmt(s["new_acc"]), s["library_size"]])
    return paths


def load_report(out_dir):
    with open(os.path.join(out_dir, "report.json"), encoding="utf-8") as fh:
        return RunReport.from_dict(json.load(fh))


def format_summary(report):
    lines = [f"{'session':>7}  {'task':<14}{'AA':>8}{'AF':>8}{'NewACC':>8}{'scenes':>8}"]
    for s, name in zip(report.sessions, report.task_names):
        af_txt = "-" if s["af"] is None else f"{100 * s['af']:.2f}"
        lines.append(f"{s['session']:>7}  {name:<14}{100 * s['aa']:>8.2f}{af_txt:>8}"
                     f"{100 * s['new_acc']:>8.2f}{s['library_size']:>8}")
    if report.openworld:
        lines.append("")
        lines.append("open-world accuracy")
        for row in report.openworld:
            lines.append(f"  {row['task']:<14}{100 * row['accuracy']:>8.2f}")
        lines.append(f"  {'mean':<14}{100 * statistics.mean(r['accuracy'] for r in report.openworld):>8.2f}")
    return "\n".join(lines)
