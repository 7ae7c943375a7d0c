"""Cross-validated training, evaluation and the ablation grid."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_params, save_params
from .config import ModelConfig, TrainConfig
from .errors import ConfigError, DataError, NumericalError
from .guidance import guidance_loss, total_loss
from .metrics import Fold, accuracy, auc, stratified_kfold
from .network import RamaNet
from .optim import Adam
from .preprocess import crop_resize, znormalize
from .radiomics import Standardizer, extract
from .volume import load_subject, read_manifest

log = logging.getLogger(__name__)

ALL_MODALITIES = ("DCE", "ADC")


@dataclass
class Prepared:
    """A subject after tumor-focused crop/resize and normalization."""

    id: str
    label: int
    images: dict  # modality -> float32 (4, D, H, W)
    mask: np.ndarray  # cropped ROI, (D, H, W)
    radiomics: dict  # modality -> raw 25-vector


def prepare_subject(subject, input_dims, n_levels: int = 32, radiomics: dict | None = None) -> Prepared:
    images = {}
    mask = None
    for mod in ALL_MODALITIES:
        vol, m = crop_resize(subject.volume(mod), subject.mask, input_dims)
        images[mod] = znormalize(vol).data
        mask = m.data
    if radiomics is None:
        radiomics = {mod: extract(subject, mod, n_levels=n_levels).values for mod in ALL_MODALITIES}
    return Prepared(subject.id, subject.label, images, mask, {m: np.asarray(v, dtype=np.float64) for m, v in radiomics.items()})


def prepare(data, model_cfg: ModelConfig, n_levels: int = 32) -> dict[str, Prepared]:
    """Load and preprocess every subject of a manifest (path, directory or rows)."""
    rows = data if isinstance(data, list) else read_manifest(data)
    out = {}
    for row in rows:
        out[row.subject_id] = prepare_subject(load_subject(row), model_cfg.input_dims, n_levels)
    return out


def with_radiomics(prepared: dict[str, Prepared], radiomics: dict) -> dict[str, Prepared]:
    """Copy of ``prepared`` with radiomics vectors replaced for the given subject ids."""
    out = dict(prepared)
    for sid, vecs in radiomics.items():
        p = out[sid]
        out[sid] = Prepared(p.id, p.label, p.images, p.mask,
                            {m: np.asarray(vecs[m], dtype=np.float64) for m in ALL_MODALITIES})
    return out


def fit_standardizers(prepared: dict[str, Prepared], ids) -> dict[str, Standardizer]:
    return {m: Standardizer.fit([prepared[i].radiomics[m] for i in ids]) for m in ALL_MODALITIES}


def make_batch(prepared, ids, modalities, standardizers, dtype=torch.float32):
    images = {m: torch.from_numpy(np.stack([prepared[i].images[m] for i in ids])).to(dtype) for m in modalities}
    rad = {m: torch.from_numpy(np.stack([standardizers[m].apply(prepared[i].radiomics[m]) for i in ids])).to(dtype)
           for m in modalities}
    labels = torch.tensor([prepared[i].label for i in ids], dtype=dtype)
    return images, rad, labels


def predict(model: RamaNet, prepared, ids, standardizers, batch_size: int = 16) -> np.ndarray:
    probs = []
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = ids[start:start + batch_size]
            images, rad, _ = make_batch(prepared, chunk, model.cfg.modalities, standardizers)
            probs.append(torch.sigmoid(model(images, rad).logit).numpy().astype(np.float64))
    return np.concatenate(probs) if probs else np.zeros(0)


def _safe_auc(scores, labels) -> float:
    try:
        return auc(scores, labels)
    except ValueError:
        return float("nan")


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std())


@dataclass
class MetricsReport:
    variant: str
    folds: list = field(default_factory=list)  # per-fold dicts

    @property
    def mean_accuracy(self):
        return _mean_std([f["accuracy"] for f in self.folds])[0]

    @property
    def std_accuracy(self):
        return _mean_std([f["accuracy"] for f in self.folds])[1]

    @property
    def mean_auc(self):
        return _mean_std([f["auc"] for f in self.folds])[0]

    @property
    def std_auc(self):
        return _mean_std([f["auc"] for f in self.folds])[1]

    def to_dict(self) -> dict:
        return {"variant": self.variant, "folds": self.folds,
                "accuracy": {"mean": self.mean_accuracy, "std": self.std_accuracy},
                "auc": {"mean": self.mean_auc, "std": self.std_auc}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        return (f"{self.variant}: accuracy {self.mean_accuracy:.4f} ± {self.std_accuracy:.4f}, "
                f"AUC {self.mean_auc:.4f} ± {self.std_auc:.4f}")


@dataclass
class FoldResult:
    fold: int
    best_epoch: int
    best_state: dict
    final_state: dict
    standardizers: dict
    history: list


@dataclass
class TrainResult:
    report: MetricsReport
    folds: list  # FoldSplit
    fold_results: list


def _batches(rng, ids, batch_size):
    perm = [ids[i] for i in rng.permutation(len(ids))]
    n_batches = max(1, len(perm) // batch_size)
    return [list(b) for b in np.array_split(np.array(perm, dtype=object), n_batches)]


def _snapshot(model):
    return {n: t.detach().clone() for n, t in model.state_dict().items()}


def train_fold(prepared, fold: Fold, k: int, cfg: TrainConfig, log_fn=None) -> tuple[FoldResult, dict]:
    mcfg = cfg.model
    standardizers = fit_standardizers(prepared, fold.train)
    model = RamaNet(mcfg, seed=cfg.seed)
    params = {n: p for n, p in model.named_parameters()}
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng([cfg.seed, k])
    val_labels = [prepared[i].label for i in fold.val]

    best = ((-np.inf, -np.inf), -1, None, None)
    history = []
    for epoch in range(cfg.epochs):
        pretrain = mcfg.use_guidance and cfg.guidance_schedule == "pretrain" and epoch < cfg.pretrain_epochs
        losses = []
        for batch in _batches(rng, fold.train, cfg.batch_size):
            images, rad, labels = make_batch(prepared, batch, mcfg.modalities, standardizers)
            out = model(images, rad)
            l_rg = guidance_loss(model, out, rad, cfg.temperature) if mcfg.use_guidance and len(batch) >= 2 else None
            if pretrain:
                loss = cfg.lam * l_rg
            else:
                loss = total_loss(out.logit, labels, l_rg, cfg.lam)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss in fold {k}, epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        probs = predict(model, prepared, fold.val, standardizers)
        val_auc = _safe_auc(probs, val_labels)
        val_acc = accuracy(probs, val_labels)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_auc": val_auc, "val_accuracy": val_acc})
        if log_fn:
            log_fn(f"fold {k} epoch {epoch}: loss {np.mean(losses):.4f} val AUC {val_auc:.4f} acc {val_acc:.4f}")
        # selection: validation AUC, then accuracy; ties go to the later (better trained) epoch
        key = (val_auc if np.isfinite(val_auc) else -np.inf, val_acc)
        if key >= best[0]:
            best = (key, epoch, _snapshot(model), (val_acc, val_auc))
    _, best_epoch, best_state, (acc, au) = best
    result = FoldResult(k, best_epoch, best_state, _snapshot(model), standardizers, history)
    row = {"fold": k, "best_epoch": best_epoch, "accuracy": acc, "auc": au, "n_val": len(fold.val),
           "n_val_pos": int(sum(val_labels))}
    return result, row


def variant_name(mcfg: ModelConfig) -> str:
    parts = ["+".join(mcfg.modalities)]
    parts.append("guidance" if mcfg.use_guidance else "no-guidance")
    parts.append("transformer" if mcfg.use_transformer else "no-transformer")
    if mcfg.concat_radiomics:
        parts.append("rad-concat")
    return "/".join(parts)


def make_folds(prepared, cfg: TrainConfig) -> list[Fold]:
    ids = sorted(prepared)
    return stratified_kfold([prepared[i].label for i in ids], cfg.folds, cfg.seed, ids=ids)


def train(data, cfg: TrainConfig, out_dir=None, folds: list[Fold] | None = None, log_fn=None) -> TrainResult:
    """Stratified k-fold training; ``data`` is a manifest path/dir, rows, or prepared subjects."""
    torch.set_num_threads(cfg.num_threads)
    prepared = data if isinstance(data, dict) else prepare(data, cfg.model, cfg.n_levels)
    if len(prepared) < cfg.folds:
        raise DataError(f"{len(prepared)} subjects cannot fill {cfg.folds} folds")
    folds = folds or make_folds(prepared, cfg)
    report = MetricsReport(variant_name(cfg.model))
    results = []
    for k, fold in enumerate(folds):
        res, row = train_fold(prepared, fold, k, cfg, log_fn)
        results.append(res)
        report.folds.append(row)
    result = TrainResult(report, folds, results)
    if out_dir is not None:
        save_run(out_dir, cfg, result, data if isinstance(data, (str, Path)) else None)
    return result


def save_run(out_dir, cfg: TrainConfig, result: TrainResult, data_path=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    (out / "report.json").write_text(result.report.to_json())
    (out / "splits.json").write_text(json.dumps([{"train": f.train, "val": f.val} for f in result.folds], indent=2))
    (out / "history.json").write_text(json.dumps([r.history for r in result.fold_results], indent=2))
    if data_path is not None:
        (out / "meta.json").write_text(json.dumps({"data": str(Path(data_path).resolve())}))
    for r in result.fold_results:
        meta = {"fold": r.fold, "best_epoch": r.best_epoch,
                "standardizers": {m: s.to_dict() for m, s in r.standardizers.items()}}
        save_params(out / f"fold{r.fold}.rpar", r.best_state, meta)


@dataclass
class LoadedRun:
    cfg: TrainConfig
    folds: list
    models: list
    standardizers: list
    data: str | None


def load_run(run_dir) -> LoadedRun:
    run = Path(run_dir)
    if not (run / "config.json").exists():
        raise DataError(f"{run} is not a run directory (no config.json)")
    cfg = TrainConfig.load(run / "config.json")
    splits = json.loads((run / "splits.json").read_text())
    folds = [Fold(s["train"], s["val"]) for s in splits]
    models, stds = [], []
    for k in range(len(folds)):
        state, meta = load_params(run / f"fold{k}.rpar")
        model = RamaNet(cfg.model, seed=cfg.seed)
        model.load_state_dict(state)
        model.eval()
        models.append(model)
        stds.append({m: Standardizer.from_dict(d) for m, d in meta["standardizers"].items()})
    data = None
    if (run / "meta.json").exists():
        data = json.loads((run / "meta.json").read_text()).get("data")
    return LoadedRun(cfg, folds, models, stds, data)


def evaluate(run_dir, data) -> tuple[MetricsReport, list[dict]]:
    """Out-of-fold predictions for subjects seen in the run's splits, fold-ensemble otherwise."""
    run = load_run(run_dir)
    prepared = prepare(data, run.cfg.model, run.cfg.n_levels)
    ids = sorted(prepared)
    fold_of = {sid: k for k, f in enumerate(run.folds) for sid in f.val}
    preds = []
    for sid in ids:
        if sid in fold_of:
            k = fold_of[sid]
            p = predict(run.models[k], prepared, [sid], run.standardizers[k])[0]
        else:
            p = float(np.mean([predict(m, prepared, [sid], s)[0] for m, s in zip(run.models, run.standardizers)]))
        preds.append({"subject_id": sid, "label": prepared[sid].label, "probability": float(p),
                      "fold": fold_of.get(sid, -1)})
    report = MetricsReport(variant_name(run.cfg.model))
    for k in sorted({p["fold"] for p in preds}):
        sel = [p for p in preds if p["fold"] == k]
        scores = [p["probability"] for p in sel]
        labels = [p["label"] for p in sel]
        report.folds.append({"fold": k, "accuracy": accuracy(scores, labels), "auc": _safe_auc(scores, labels),
                             "n_val": len(sel), "n_val_pos": int(sum(labels))})
    return report, preds


# name -> (table, model, modality, radiomics, transformer, config overrides)
VARIANTS = {
    "t2_plain": ("table2", "Encoder", "DCE+ADC", "none", False,
                 dict(modalities=("DCE", "ADC"), use_guidance=False, use_transformer=False)),
    "t2_guidance": ("table2", "Encoder", "DCE+ADC", "guidance", False,
                    dict(modalities=("DCE", "ADC"), use_guidance=True, use_transformer=False)),
    "t2_transformer": ("table2", "Encoder", "DCE+ADC", "none", True,
                       dict(modalities=("DCE", "ADC"), use_guidance=False, use_transformer=True)),
    "t2_full": ("table2", "Encoder", "DCE+ADC", "guidance", True,
                dict(modalities=("DCE", "ADC"), use_guidance=True, use_transformer=True)),
}
for _mod in ("DCE", "ADC"):
    VARIANTS[f"t1_{_mod.lower()}_plain"] = ("table1", "Encoder", _mod, "none", False,
                                            dict(modalities=(_mod,), use_guidance=False, use_transformer=False))
    VARIANTS[f"t1_{_mod.lower()}_rad"] = ("table1", "Encoder+Rad", _mod, "concat", False,
                                          dict(modalities=(_mod,), use_guidance=False, use_transformer=False,
                                               concat_radiomics=True))
    VARIANTS[f"t1_{_mod.lower()}_rgn"] = ("table1", "RGN", _mod, "guidance", False,
                                          dict(modalities=(_mod,), use_guidance=True, use_transformer=False))

ABLATION_COLUMNS = ["table", "variant", "model", "modality", "radiomics", "transformer",
                    "accuracy_mean", "accuracy_std", "auc_mean", "auc_std"]


def variant_config(base: TrainConfig, name: str) -> TrainConfig:
    overrides = dict(VARIANTS[name][5])
    overrides.setdefault("concat_radiomics", False)
    return base.replace(model=base.model.replace(**overrides))


def ablate(data, base: TrainConfig, out_csv=None, variants=None, log_fn=None) -> dict[str, MetricsReport]:
    """Train every ablation variant on identical folds and seeds."""
    torch.set_num_threads(base.num_threads)
    prepared = data if isinstance(data, dict) else prepare(data, base.model, base.n_levels)
    folds = make_folds(prepared, base)
    names = list(VARIANTS) if variants is None else list(variants)
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown ablation variants {unknown}; choose from {list(VARIANTS)}")
    reports = {}
    for name in names:
        cfg = variant_config(base, name)
        res = train(prepared, cfg, folds=folds, log_fn=log_fn)
        res.report.variant = name
        reports[name] = res.report
        if log_fn:
            log_fn(res.report.summary())
    if out_csv is not None:
        write_ablation_csv(out_csv, reports)
    return reports


def write_ablation_csv(path, reports: dict[str, MetricsReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for name, rep in reports.items():
            table, model, modality, radiomics, transformer, _ = VARIANTS[name]
            w.writerow([table, name, model, modality, radiomics, int(transformer),
                        f"{rep.mean_accuracy:.6f}", f"{rep.std_accuracy:.6f}",
                        f"{rep.mean_auc:.6f}", f"{rep.std_auc:.6f}"])


def overfit_probe(prepared, cfg: TrainConfig, max_steps: int = 500, log_fn=None) -> tuple[int | None, float]:
    """Train on every subject of ``prepared`` until training accuracy hits 1.0.

    Returns (steps taken when accuracy first reached 1.0 or None, final accuracy).
    """
    torch.set_num_threads(cfg.num_threads)
    ids = sorted(prepared)
    mcfg = cfg.model
    standardizers = fit_standardizers(prepared, ids)
    model = RamaNet(mcfg, seed=cfg.seed)
    opt = Adam(dict(model.named_parameters()), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    labels = [prepared[i].label for i in ids]
    steps, acc = 0, 0.0
    while steps < max_steps:
        for batch in _batches(rng, ids, cfg.batch_size):
            images, rad, y = make_batch(prepared, batch, mcfg.modalities, standardizers)
            out = model(images, rad)
            l_rg = guidance_loss(model, out, rad, cfg.temperature) if mcfg.use_guidance else None
            loss = total_loss(out.logit, y, l_rg, cfg.lam)
            opt.zero_grad()
            loss.backward()
            opt.step()
            steps += 1
            if steps >= max_steps:
                break
        acc = accuracy(predict(model, prepared, ids, standardizers), labels)
        if log_fn:
            log_fn(f"overfit probe: step {steps} train accuracy {acc:.3f}")
        if acc == 1.0:
            return steps, acc
    return None, acc
