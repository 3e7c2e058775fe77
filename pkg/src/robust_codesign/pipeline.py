"""Stage-by-stage co-design pipeline with content-addressed artifacts.

Every stage writes its artifacts into ``<out>/<stage>/`` together with a
``stage.json`` holding the stage key (a hash of the configuration and of
the input artifacts) and the sha256 of each artifact. A stage whose key
and artifacts are unchanged is skipped and its results are read back from
disk, so stages can be run one at a time or all together.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clusterer import diagnostics, save_diagnostics
from .codesign import (DesignReport, cross_evaluate, effective_cost, save_design, save_validation,
                       solve_pcd, validate)
from .config import RunConfig, canonical_json, digest
from .empc import ControllerParams, SizingParams
from .subsampler import (ClusterModel, ImportancePoint, OperationStore, ScalingSpec, importance_all,
                         save_clusters, save_points, scale_points, select_representatives,
                         sizing_lattice)
from .timeseries import (ExogenousSeries, SynthConfig, load_series, save_series, split_subsamples,
                         synthesize)
from .tuner import save_fronts, save_points as save_tuning_points, tune

log = logging.getLogger(__name__)

STAGES = ("data", "tune", "subsample", "cluster", "design", "validate", "retune", "report")


class MissingArtifact(RuntimeError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextlib.contextmanager
def parallel_map(n: int):
    """Ordered map over ``n`` worker processes (the builtin map when ``n == 1``)."""
    if n <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=n) as ex:
        yield lambda fn, items: ex.map(fn, list(items), chunksize=1)


def _config_fingerprint(cfg: RunConfig) -> dict:
    raw = dict(cfg.raw)
    raw.pop("parallel", None)
    raw.pop("out", None)
    return raw


@dataclass
class Pipeline:
    cfg: RunConfig
    out: Path
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.out = Path(self.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.model = self.cfg.model()
        self.econ = self.cfg.economics()
        self.lattice = sizing_lattice(tuple(self.cfg.raw["sizing"]["battery"]),
                                      tuple(self.cfg.raw["sizing"]["pv"]))

    # -- stage bookkeeping -------------------------------------------------

    def stage_dir(self, stage: str) -> Path:
        d = self.out / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _key(self, stage: str, inputs: list[str]) -> str:
        hashes = {}
        for s in inputs:
            meta = self._meta(s)
            if meta is None:
                raise MissingArtifact(f"stage '{stage}' needs artifacts of stage '{s}'; run it first")
            hashes[s] = meta["key"]
        return digest({"stage": stage, "config": _config_fingerprint(self.cfg), "inputs": hashes})

    def _meta(self, stage: str) -> dict | None:
        f = self.out / stage / "stage.json"
        if not f.exists():
            return None
        meta = json.loads(f.read_text(encoding="utf-8"))
        for name, h in meta["artifacts"].items():
            p = self.out / stage / name
            if not p.exists() or sha256_file(p) != h:
                return None
        return meta

    def _fresh(self, stage: str, key: str) -> bool:
        meta = self._meta(stage)
        return meta is not None and meta["key"] == key

    def _seal(self, stage: str, key: str, names: list[str]) -> None:
        d = self.out / stage
        meta = {"stage": stage, "key": key, "artifacts": {n: sha256_file(d / n) for n in sorted(names)}}
        (d / "stage.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def _run(self, stage: str, inputs: list[str], compute, names: list[str]) -> bool:
        """Run ``compute`` unless the stage is up to date; returns True if it ran."""
        key = self._key(stage, inputs)
        if self._fresh(stage, key):
            log.info("stage %s up to date", stage)
            return False
        t0 = time.perf_counter()
        try:
            compute(self.stage_dir(stage))
        except MissingArtifact:
            raise
        except Exception as exc:  # noqa: BLE001 - tag any failure with its stage
            raise StageFailure(stage, exc) from exc
        self.timings[stage] = time.perf_counter() - t0
        self._seal(stage, key, names)
        return True

    # -- data --------------------------------------------------------------

    def _source(self, section: str, stage_name: str) -> ExogenousSeries | None:
        src = self.cfg.raw[section]
        if src is None:
            return None
        res = src.get("resolution", 15)
        if src.get("csv"):
            return load_series(self.cfg.resolve(src["csv"]), res, name=stage_name)
        gen = SynthConfig.from_dict({"resolution": res, **src["synth"]})
        return synthesize(gen, self.cfg.stage_seed(f"data:{section}"), name=stage_name)

    def data(self) -> None:
        def compute(d: Path):
            save_series(self._source("data", "train"), d / "train.csv")
            held = self._source("heldout", "heldout")
            if held is not None:
                save_series(held, d / "heldout.csv")
        names = ["train.csv"] + (["heldout.csv"] if self.cfg.raw["heldout"] is not None else [])
        self._run("data", [], compute, names)

    def series(self, name: str = "train") -> ExogenousSeries:
        p = self.out / "data" / f"{name}.csv"
        if not p.exists():
            raise MissingArtifact(f"missing {p}; run 'synth' first")
        section = "data" if name == "train" else "heldout"
        return load_series(p, self.cfg.raw[section].get("resolution", 15), name=name)

    # -- tuning ------------------------------------------------------------

    def _windows(self, series: ExogenousSeries, pc_ref: ControllerParams) -> tuple[list, float]:
        c = self.cfg.raw["controller"]
        span = float(c["window_hours"])
        horizon = max(c["n_f_range"][1], pc_ref.n_f) + series.resolution / 60.0
        need = int(round((span + horizon) * 60.0 / series.resolution))
        avail_h = (len(series) - need) * series.resolution / 60.0
        if avail_h < 0:
            raise ValueError("training series shorter than one tuning window")
        out = []
        W = c["windows"]
        for i in range(W):
            start_h = int(avail_h * i / W // 24) * 24
            s = int(round(start_h * 60.0 / series.resolution))
            out.append(series.slice(s, s + need, name=f"window{i}"))
        return out, span

    def _tune(self, stage: str, p_samples: list[SizingParams], pc_ref: ControllerParams,
              map_fn) -> None:
        c = self.cfg.raw["controller"]

        def compute(d: Path):
            windows, span = self._windows(self.series(), pc_ref)
            res = tune(windows, p_samples, pc_ref, c["epsilon"], span, tuple(c["n_f_range"]), self.model,
                       method=c["search"], map_fn=map_fn)
            save_tuning_points(res.points, d / "points.csv", len(p_samples))
            save_fronts(res.fronts, d / "fronts.csv")
            _write_json(d / "pc_star.json", {"pc_star": list(res.pc_star.key), "fallback": res.fallback,
                                              "reference": list(pc_ref.key),
                                              "p_samples": [[p.battery_units, p.pv_units] for p in p_samples]})
        self._run(stage, ["data"] + (["design"] if stage == "retune" else []), compute,
                  ["points.csv", "fronts.csv", "pc_star.json"])

    def tune(self, map_fn=map) -> None:
        if self.cfg.raw["controller"]["skip_tuning"]:
            def compute(d: Path):
                _write_json(d / "pc_star.json", {"pc_star": list(self.cfg.fixed_pc().key), "fallback": False,
                                                  "reference": None, "p_samples": []})
            self._run("tune", ["data"], compute, ["pc_star.json"])
            return
        self._tune("tune", self.cfg.p_samples(), self.cfg.reference(), map_fn)

    def pc_star(self, stage: str = "tune") -> ControllerParams:
        p = self.out / stage / "pc_star.json"
        if not p.exists():
            raise MissingArtifact(f"missing {p}; run '{stage}' first")
        return self.cfg.pc(json.loads(p.read_text())["pc_star"])

    # -- subsampling -------------------------------------------------------

    def store(self, pc: ControllerParams, name: str = "train") -> OperationStore:
        series = self.series(name)
        s = self.cfg.raw["subsampling"]
        subs = split_subsamples(series, s["sim_hours"], 0, stride_hours=s["stride_hours"],
                                horizon_hours=pc.n_f + series.resolution / 60.0, parent_id=name)
        return OperationStore.from_subsamples(series, subs, pc, self.model.initial_state(), self.model)

    def subsample(self, map_fn=map) -> None:
        def compute(d: Path):
            st = self.store(self.pc_star())
            pts = importance_all(st, self.lattice, self.econ, self.cfg.raw["subsampling"]["search"], map_fn)
            _save_subsamples(st, d / "subsamples.csv")
            save_points(pts, [-1] * len(pts), d / "importance.csv")
            _save_table(st, d / "operation.csv")
        self._run("subsample", ["tune"], compute, ["subsamples.csv", "importance.csv", "operation.csv"])

    def importance(self) -> list[ImportancePoint]:
        p = self.out / "subsample" / "importance.csv"
        if not p.exists():
            raise MissingArtifact(f"missing {p}; run 'subsample' first")
        x = self.model.initial_state()
        return [ImportancePoint(int(r["subsample"]), SizingParams(int(r["battery_units"]), int(r["pv_units"])),
                                float(r["V_star"]), x) for r in _rows(p)]

    def load_table(self, st: OperationStore) -> None:
        p = self.out / "subsample" / "operation.csv"
        if p.exists() and self.pc_star().key == st.pc.key:
            _load_table(st, p)

    # -- clustering --------------------------------------------------------

    def cluster(self) -> None:
        s = self.cfg.raw["subsampling"]

        def compute(d: Path):
            pts = self.importance()
            X, spec = scale_points(pts, enabled=s["scaling"])
            cm = select_representatives(X, k_max=s["k_max"], d_max=s["d_max"], seed=self.cfg.stage_seed("cluster"),
                                        n_c=s["n_c"], scaling=spec)
            cm.check()
            save_clusters(cm, d / "clusters.csv")
            save_points(pts, cm.labels, d / "assignments.csv")
            ks = range(2, min(len(pts), 10) + 1)
            seeds = [self.cfg.stage_seed(f"diagnostics:{i}") for i in range(3)]
            save_diagnostics(diagnostics(X, ks, seeds) if len(ks) else [], d / "diagnostics.csv")
            _write_json(d / "scaling.json", {"cost_lo": spec.cost_lo, "cost_hi": spec.cost_hi,
                                             "target": list(spec.target), "applied": spec.applied,
                                             "m": cm.m, "k_history": cm.k_history})
        self._run("cluster", ["subsample"], compute,
                  ["clusters.csv", "assignments.csv", "diagnostics.csv", "scaling.json"])

    def clusters(self) -> ClusterModel:
        d = self.out / "cluster"
        if not (d / "clusters.csv").exists():
            raise MissingArtifact(f"missing {d / 'clusters.csv'}; run 'cluster' first")
        return load_clusters(d)

    # -- design and validation ---------------------------------------------

    def design(self, map_fn=map) -> None:
        def compute(d: Path):
            pc = self.pc_star()
            st = self.store(pc)
            self.load_table(st)
            cm = self.clusters()
            rounds = self._validated_design(cm, st, pc, map_fn, d)
            save_design(rounds, d / "design.csv")
        self._run("design", ["cluster"], compute, ["design.csv", "validation.csv", "augmented.csv"])

    def _validated_design(self, cm: ClusterModel, st: OperationStore, pc: ControllerParams, map_fn, d: Path):
        c = self.cfg.raw["codesign"]
        risk = self.cfg.risk()
        method = self.cfg.raw["sizing"]["search"]
        rep = solve_pcd(cm, st, self.lattice, self.econ, risk, method=method, map_fn=map_fn)
        rounds = [("round0", rep)]
        added = []
        threshold = c["validation_threshold"]
        val_rows = []
        if threshold is not None and self.cfg.raw["heldout"] is not None:
            held = self.store(pc, "heldout")
            for rnd in range(1, c["max_rounds"] + 2):
                v = validate(rep.p_star, held, self.lattice, self.econ, threshold, method)
                val_rows.append((rnd - 1, v))
                flagged = [h for h in v.flagged if held.cases[h].key not in {x.key for x in st.cases}]
                if not flagged or rnd > c["max_rounds"]:
                    break
                ids = []
                for h in flagged:
                    st = st.extended([held.cases[h]])
                    ids.append(len(st) - 1)
                    added.append(h)
                cm = cm.augmented(ids)
                rep = solve_pcd(cm, st, self.lattice, self.econ, risk, method=method, map_fn=map_fn)
                rounds.append((f"round{rnd}", rep))
        with open(d / "validation.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "case", "battery_units", "pv_units", "cost_at_p", "local_cost", "regret",
                        "flagged"])
            for rnd, v in val_rows:
                for r in v.rows:
                    w.writerow([rnd, r.case, v.p.battery_units, v.p.pv_units, repr(r.cost_at_p),
                                repr(r.local_cost), repr(r.regret), int(r.regret > v.threshold)])
        with open(d / "augmented.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["heldout_case"])
            for h in added:
                w.writerow([h])
        return rounds

    def p_star(self) -> SizingParams:
        p = self.out / "design" / "design.csv"
        if not p.exists():
            raise MissingArtifact(f"missing {p}; run 'codesign' first")
        last = _rows(p)[-1]
        return SizingParams(int(last["battery_units"]), int(last["pv_units"]))

    def validate_only(self, p: SizingParams) -> Path:
        """Regret of a given design on the held-out data (no augmentation)."""
        held = self.store(self.pc_star(), "heldout")
        threshold = self.cfg.raw["codesign"]["validation_threshold"]
        v = validate(p, held, self.lattice, self.econ, float("inf") if threshold is None else threshold,
                     self.cfg.raw["sizing"]["search"])
        d = self.stage_dir("validate")
        save_validation(v, d / "validation.csv")
        return d / "validation.csv"

    # -- re-tuning and final report ----------------------------------------

    def retune(self, map_fn=map) -> None:
        c = self.cfg.raw["controller"]
        if c["skip_tuning"] or not c["retune"]:
            def compute(d: Path):
                _write_json(d / "pc_star.json", {"pc_star": list(self.pc_star().key), "fallback": False,
                                                  "reference": None, "p_samples": []})
            self._run("retune", ["design"], compute, ["pc_star.json"])
            return
        self._tune("retune", [self.p_star()], self.pc_star(), map_fn)

    def report(self) -> None:
        def compute(d: Path):
            pc0, pc1 = self.pc_star("tune"), self.pc_star("retune")
            p = self.p_star()
            st = self.store(pc1)
            if pc1.key == pc0.key:
                self.load_table(st)
            eff = effective_cost(p, st, self.econ, self.cfg.risk())
            mean, per = cross_evaluate(p, st, self.econ)
            design = _rows(self.out / "design" / "design.csv")[-1]
            with open(d / "report.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["battery_units", "pv_units", "battery_kwh", "pv_m2", "n_s", "n_x", "n_f",
                            "estimated", "effective", "effective_on", "mean_cost", "m"])
                w.writerow([p.battery_units, p.pv_units, repr(p.battery_kwh), repr(p.pv_m2), *pc1.key,
                            design["estimated"], repr(eff), "training", repr(mean), len(st)])
            with open(d / "per_subsample.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["subsample", "annualised_cost"])
                for h, v in enumerate(per):
                    w.writerow([h, repr(v)])
        self._run("report", ["retune"], compute, ["report.csv", "per_subsample.csv"])

    def manifest(self) -> Path:
        arts = {}
        for stage in STAGES:
            meta = self._meta(stage)
            if meta is not None:
                for name, h in meta["artifacts"].items():
                    arts[f"{stage}/{name}"] = h
        data = {
            "seed": self.cfg.seed,
            "stage_seeds": {s: self.cfg.stage_seed(s) for s in ("data:data", "data:heldout", "cluster")},
            "config_sha256": digest(_config_fingerprint(self.cfg)),
            "data_sha256": {k: v for k, v in arts.items() if k.startswith("data/")},
            "artifacts": arts,
        }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        (self.out / "timings.json").write_text(canonical_json(self.timings) + "\n", encoding="utf-8")
        return path

    def run_all(self, map_fn=map) -> None:
        self.data()
        self.tune(map_fn)
        self.subsample(map_fn)
        self.cluster()
        self.design(map_fn)
        self.retune(map_fn)
        self.report()
        self.manifest()


# -- artifact helpers ------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _save_subsamples(st: OperationStore, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subsample", "start_index", "n_sim", "n_pad", "weight", "start_hour"])
        for h, c in enumerate(st.cases):
            s = c.sub
            w.writerow([h, s.start_index, s.n_sim, s.n_pad, repr(s.weight), repr(s.start_hour)])


def _save_table(st: OperationStore, path: Path) -> None:
    index = {c.key: h for h, c in enumerate(st.cases)}
    rows = sorted((index[k], p.battery_units, p.pv_units, v) for (k, p), v in st.table.items() if k in index)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subsample", "battery_units", "pv_units", "operation_cost"])
        for h, b, pv, v in rows:
            w.writerow([h, b, pv, repr(v)])


def _load_table(st: OperationStore, path: Path) -> None:
    for r in _rows(path):
        h = int(r["subsample"])
        if h < len(st):
            st.table[(st.cases[h].key, SizingParams(int(r["battery_units"]), int(r["pv_units"])))] = \
                float(r["operation_cost"])


def load_clusters(d: Path) -> ClusterModel:
    rows = _rows(d / "clusters.csv")
    meta = json.loads((d / "scaling.json").read_text(encoding="utf-8"))
    assign = _rows(d / "assignments.csv")
    return ClusterModel(
        n_c=len(rows),
        representative_ids=[int(r["representative"]) for r in rows],
        weights=[int(r["weight"]) for r in rows],
        medoids=np.array([[float(r["cost_coord"]), float(r["battery_kwh"]), float(r["pv_m2"])] for r in rows]),
        within_cluster_max=np.array([float(r["max_dist"]) for r in rows]),
        labels=np.array([int(r["cluster"]) for r in assign]),
        scaling=ScalingSpec(meta["cost_lo"], meta["cost_hi"], tuple(meta["target"]), meta["applied"]),
        m=int(meta["m"]),
        k_history=[tuple(x) for x in meta["k_history"]],
    )


def design_reports(path: Path) -> list[DesignReport]:
    out = []
    for r in _rows(path):
        out.append(DesignReport(p_star=SizingParams(int(r["battery_units"]), int(r["pv_units"])),
                                estimated=float(r["estimated"]),
                                effective=float(r["effective"]) if r["effective"] else None,
                                effective_label=r["effective_on"], n_evals=int(r["n_evals"])))
    return out
