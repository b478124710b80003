"""Command-line entry point wiring data, models, training and reports.

Subcommands: `split` writes per-seed scaffold-split manifests, `train`
fits one posterior per seed for the configured mode, `eval` turns
posterior artifacts into calibration/discrimination reports, and
`screen` ranks an unlabeled SMILES library by predicted probability.

Configuration is one JSON document over DEFAULT_CONFIG, overridable on
the command line with --set dotted.path=value. Every run's resolved
config gets a digest that is embedded in all outputs; eval refuses to
mix artifacts carrying a different digest. Exit codes: 2 for config
problems, 3 for data problems, 4 for numeric failures.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from typing import Optional

import numpy as np

from . import bayes, metrics
from .chem import (DATASET_COLUMNS, LabeledDataset, SmilesError, featurize,
                   load_dataset, parse_smiles, scaffold_split)
from .errors import ConfigError, DataError, NumericError
from .gnn import GnnClassifier, ModelConfig, make_batch

DEFAULT_CONFIG: dict = {
    "dataset": {"path": "", "name": "bace"},
    "model": {"architecture": "gin", "hidden_dim": 128, "graph_dim": 256,
              "n_layers": 4, "n_heads": 4, "dropout": 0.2},
    "mode": "none",
    "schedule": {},            # field overrides onto the mode's defaults
    "ensemble_members": 10,
    "kl_scale": 0.01,
    "prior_sigma": 10.0,
    "eval_samples": 0,         # 0 = the mode's default draw count
    "mc_passes": 30,
    "swag_scale": 1.0,
    "split": {"ratios": [0.8, 0.1, 0.1]},
    "seeds": [0, 1, 2, 3, 4, 5, 6, 7],
    "batch_size": 128,
    "out_dir": "runs",
    "workers": 0,              # 0 = one per available core
    "render_svg": False,
}

# details that do not change any single artifact's content: execution
# knobs, the seed selection (each artifact records its own seed), and
# prediction-time sampling depths (reports record them as n_draws)
_EXEC_KEYS = ("out_dir", "workers", "render_svg", "seeds",
              "eval_samples", "mc_passes", "swag_scale")

# sections that accept keys beyond the defaults (schedule fields,
# custom dataset column mappings)
_OPEN_SECTIONS = ("schedule", "dataset")


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            if path not in _OPEN_SECTIONS:
                raise ConfigError(f"unknown config key {where!r}")
            out[key] = copy.deepcopy(value)
        elif isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(out[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(cfg: dict, expr: str) -> None:
    key, sep, raw = expr.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set wants KEY=VALUE, got {expr!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            raise ConfigError(f"unknown config section {part!r} in {key!r}")
        node = nxt
    leaf = parts[-1]
    if leaf not in node and parts[0] not in _OPEN_SECTIONS:
        raise ConfigError(f"unknown config key {key!r}")
    node[leaf] = value


def _validate_config(cfg: dict) -> None:
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds \
            or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    if not isinstance(cfg["batch_size"], int) or cfg["batch_size"] < 1:
        raise ConfigError("batch_size must be a positive integer")
    if cfg["mode"] not in bayes.MODES:
        raise ConfigError(f"unknown mode {cfg['mode']!r}; "
                          f"one of {bayes.MODES}")
    ratios = cfg["split"]["ratios"]
    if not isinstance(ratios, list) or len(ratios) != 3:
        raise ConfigError("split.ratios must be a list of three numbers")
    if cfg["ensemble_members"] < 2:
        raise ConfigError("ensemble_members must be at least 2")
    if cfg["mc_passes"] < 1:
        raise ConfigError("mc_passes must be at least 1")


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") \
                from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {args.config} is not valid JSON: "
                              f"{e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge(cfg, loaded)
    if args.mode:
        cfg["mode"] = args.mode
    if args.arch:
        cfg["model"]["architecture"] = args.arch
    if args.seeds:
        try:
            cfg["seeds"] = [int(s) for s in args.seeds.split(",") if s]
        except ValueError:
            raise ConfigError(f"--seeds wants comma-separated integers, "
                              f"got {args.seeds!r}") from None
    if args.out:
        cfg["out_dir"] = args.out
    for expr in args.set or []:
        _apply_set(cfg, expr)
    _validate_config(cfg)
    return cfg


def _digest_of(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def config_digest(cfg: dict) -> str:
    """Digest of everything that changes what gets computed."""
    return _digest_of({k: v for k, v in cfg.items() if k not in _EXEC_KEYS})


def split_digest(cfg: dict) -> str:
    """Digest of the inputs that determine the scaffold split alone.

    Narrower than config_digest so every mode trained under one dataset
    and ratio setting shares the same manifests.
    """
    return _digest_of({"dataset": cfg["dataset"], "split": cfg["split"]})


# ---------------------------------------------------------------------------
# dataset plumbing


def _dataset_columns(cfg: dict) -> tuple[str, tuple[str, ...]]:
    section = cfg["dataset"]
    if "smiles_column" in section or "label_columns" in section:
        try:
            return section["smiles_column"], tuple(section["label_columns"])
        except KeyError as e:
            raise ConfigError(f"dataset needs both smiles_column and "
                              f"label_columns, missing {e}") from None
    name = section.get("name", "")
    if name not in DATASET_COLUMNS:
        raise ConfigError(
            f"unknown dataset name {name!r}; known: "
            f"{sorted(DATASET_COLUMNS)}; or give dataset.smiles_column "
            f"and dataset.label_columns explicitly")
    return DATASET_COLUMNS[name]


def _load(cfg: dict) -> LabeledDataset:
    path = cfg["dataset"]["path"]
    if not path:
        raise ConfigError("dataset.path is not set")
    if not os.path.isfile(path):
        raise ConfigError(f"dataset file not found: {path}")
    smiles_col, label_cols = _dataset_columns(cfg)
    return load_dataset(path, smiles_col, label_cols,
                        name=cfg["dataset"].get("name", path))


def _manifest_path(cfg: dict, seed: int) -> str:
    return os.path.join(cfg["out_dir"], f"split_seed{seed}.json")


def _ensure_manifest(cfg: dict, ds: LabeledDataset, seed: int) -> dict:
    """Load the seed's manifest, or create and persist it."""
    path = _manifest_path(cfg, seed)
    sd = split_digest(cfg)
    if os.path.isfile(path):
        with open(path) as fh:
            manifest = json.load(fh)
        if manifest.get("split_digest") != sd:
            raise ConfigError(
                f"manifest {path} was made under a different dataset/split "
                f"config (digest {manifest.get('split_digest')} != {sd}); "
                f"remove it or use a fresh out_dir")
        return manifest
    split = scaffold_split(ds, ratios=tuple(cfg["split"]["ratios"]),
                           seed=seed)
    manifest = {"split_digest": sd, "seed": seed,
                "train": [int(i) for i in split.train],
                "valid": [int(i) for i in split.valid],
                "test": [int(i) for i in split.test],
                "summary": split.summary()}
    _write_json(path, manifest)
    return manifest


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = f"{path}.tmp"
    metrics.write_metrics_json(tmp, payload)
    os.replace(tmp, path)


def _batches(ds: LabeledDataset, indices, batch_size: int) -> list:
    graphs = [featurize(parse_smiles(ds.smiles[i])) for i in indices]
    labels = ds.labels[np.asarray(indices, dtype=np.int64)]
    out = []
    for lo in range(0, len(graphs), batch_size):
        out.append(make_batch(graphs[lo:lo + batch_size],
                              labels[lo:lo + batch_size]))
    return out


class _EpochBatches:
    """Reshuffled minibatches each epoch, driven by the caller's rng."""

    def __init__(self, ds: LabeledDataset, indices, batch_size: int):
        self.graphs = [featurize(parse_smiles(ds.smiles[i]))
                       for i in indices]
        self.labels = ds.labels[np.asarray(indices, dtype=np.int64)]
        self.batch_size = batch_size

    def __call__(self, rng: np.random.Generator) -> list:
        order = rng.permutation(len(self.graphs))
        out = []
        for lo in range(0, order.size, self.batch_size):
            sel = order[lo:lo + self.batch_size]
            out.append(make_batch([self.graphs[i] for i in sel],
                                  self.labels[sel]))
        return out


def _model_for(cfg: dict, n_tasks: int) -> GnnClassifier:
    m = cfg["model"]
    return GnnClassifier(ModelConfig(
        architecture=m["architecture"], hidden_dim=m["hidden_dim"],
        graph_dim=m["graph_dim"], n_layers=m["n_layers"],
        n_heads=m["n_heads"], dropout=m["dropout"], n_tasks=n_tasks))


def _schedule_for(cfg: dict) -> bayes.TrainSchedule:
    overrides = dict(cfg["schedule"])
    epochs = overrides.pop("epochs", None)
    base = bayes.default_schedule(cfg["mode"], epochs=epochs)
    kwargs = asdict(base)
    for key, value in overrides.items():
        if key not in kwargs or key == "mode":
            raise ConfigError(f"unknown schedule field {key!r}")
        kwargs[key] = tuple(value) if key == "decay_points" else value
    return bayes.TrainSchedule(**kwargs)


# ---------------------------------------------------------------------------
# prediction plumbing shared by eval and screen


def _stacked_predictor(model: GnnClassifier, batches: list):
    def predict(flat: np.ndarray) -> np.ndarray:
        return np.vstack([model.predict_proba(flat, b) for b in batches])
    return predict


def _predictive(cfg: dict, model: GnnClassifier,
                post: bayes.PosteriorRepresentation, batches: list,
                seed: int) -> bayes.PredictiveDistribution:
    mode = cfg["mode"]
    schedule = _schedule_for(cfg)
    n_draws = cfg["eval_samples"] or schedule.eval_samples
    rng = bayes.stream(seed, "eval-draw")
    if mode == "mcdo":
        if post.mode != "point":
            raise ConfigError("mc-dropout evaluation needs a point artifact")

        def stochastic(pass_rng: np.random.Generator) -> np.ndarray:
            return np.vstack([model.predict_proba(post.point, b, train=True,
                                                  dropout_rng=pass_rng)
                              for b in batches])

        return bayes.mc_dropout_predict(stochastic, cfg["mc_passes"], rng)
    predict = _stacked_predictor(model, batches)
    if post.mode in ("point", "samples"):
        return bayes.marginalize(predict, post)
    return bayes.marginalize(predict, post, n_samples=n_draws, rng=rng,
                             scale=cfg["swag_scale"])


def _check_artifact(cfg: dict, model: GnnClassifier,
                    post: bayes.PosteriorRepresentation, path: str) -> None:
    digest = config_digest(cfg)
    stored = post.meta.get("config_digest", "")
    if stored != digest:
        raise ConfigError(
            f"artifact {path} carries config digest {stored!r} but this "
            f"run's is {digest!r}; refusing to mix")
    if post.digest != model.digest:
        raise ConfigError(
            f"artifact {path} was trained on an incompatible model "
            f"(parameter digest {post.digest} != {model.digest})")


def _posterior_path(cfg: dict, seed: int) -> str:
    return os.path.join(cfg["out_dir"], f"{cfg['mode']}_seed{seed}.post")


# ---------------------------------------------------------------------------
# commands


def cmd_split(cfg: dict, args: argparse.Namespace) -> int:
    ds = _load(cfg)
    rep = ds.report
    print(f"loaded {rep.n_kept} molecules "
          f"({rep.n_parse_failures} unparseable, "
          f"{rep.n_all_missing} without labels)")
    for seed in cfg["seeds"]:
        manifest = _ensure_manifest(cfg, ds, seed)
        s = manifest["summary"]
        print(f"seed {seed}: sizes {s['sizes']} of quotas {s['quotas']}, "
              f"{s['n_scaffolds']} scaffolds, overrun {s['overrun']}"
              + (f", warnings: {'; '.join(s['warnings'])}"
                 if s["warnings"] else ""))
    return 0


def _train_one_seed(payload: tuple) -> dict:
    cfg, seed, manifest = payload
    ds = _load(cfg)
    model = _model_for(cfg, ds.n_tasks)
    schedule = _schedule_for(cfg)
    data = bayes.TrainData(
        epoch_batches=_EpochBatches(ds, manifest["train"],
                                    cfg["batch_size"]),
        n_examples=len(manifest["train"]))
    hook = None
    if manifest["valid"]:
        valid_batches = _batches(ds, manifest["valid"], cfg["batch_size"])
        valid_labels = ds.labels[np.asarray(manifest["valid"])]

        def hook(flat: np.ndarray) -> dict:
            probs = np.vstack([model.predict_proba(flat, b)
                               for b in valid_batches])
            try:
                auc, _ = metrics.macro_average(metrics.auroc, probs,
                                               valid_labels)
            except DataError:
                return {}
            return {"valid_auroc": auc}

    mode = cfg["mode"]
    if mode in ("none", "mcdo"):
        post, log = bayes.train_map(model, data, schedule, seed,
                                    dropout=(mode == "mcdo"),
                                    valid_eval=hook)
    elif mode == "ensemble":
        post, log = bayes.train_ensemble(model, data, schedule, seed,
                                         m_members=cfg["ensemble_members"],
                                         valid_eval=hook)
    elif mode == "bbb":
        post, log = bayes.train_bbb(model, data, schedule, seed,
                                    kl_scale=cfg["kl_scale"],
                                    prior_sigma=cfg["prior_sigma"],
                                    valid_eval=hook)
    elif mode == "sgld":
        post, log = bayes.train_sgld(model, data, schedule, seed,
                                     valid_eval=hook)
    else:
        post, log = bayes.train_swa_swag(model, data, schedule, seed,
                                         variant=mode, valid_eval=hook)

    digest = config_digest(cfg)
    post.meta["config_digest"] = digest
    post.meta["n_tasks"] = ds.n_tasks
    path = _posterior_path(cfg, seed)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    bayes.save_posterior(path, post)
    written = [path]
    if mode == "ensemble":
        member_paths = []
        for m, flat in enumerate(post.samples):
            member = bayes.PosteriorRepresentation(
                mode="point", digest=post.digest, point=np.asarray(flat),
                meta={"config_digest": digest, "member": m,
                      "seed": int(seed)})
            mp = os.path.join(cfg["out_dir"],
                              f"{mode}_seed{seed}_member{m}.post")
            bayes.save_posterior(mp, member)
            member_paths.append(os.path.basename(mp))
        index_path = os.path.join(cfg["out_dir"],
                                  f"{mode}_seed{seed}_members.json")
        _write_json(index_path, {"config_digest": digest, "seed": seed,
                                 "members": member_paths})
        written += member_paths + [index_path]
    log_path = os.path.join(cfg["out_dir"], f"{mode}_seed{seed}_log.json")
    _write_json(log_path, {"config_digest": digest, "seed": seed,
                           "mode": mode, "epochs": log})
    final = log[-1] if isinstance(log[-1], dict) and "loss" in log[-1] \
        else {}
    return {"seed": seed, "written": written,
            "final_loss": final.get("loss"),
            "valid_auroc": final.get("valid_auroc")}


def cmd_train(cfg: dict, args: argparse.Namespace) -> int:
    ds = _load(cfg)
    payloads = []
    for seed in cfg["seeds"]:
        manifest = _ensure_manifest(cfg, ds, seed)
        if not manifest["train"]:
            raise DataError(f"seed {seed}: empty training split")
        payloads.append((cfg, seed, manifest))
    workers = cfg["workers"] or os.cpu_count() or 1
    workers = min(workers, len(payloads))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one_seed, payloads))
    else:
        results = [_train_one_seed(p) for p in payloads]
    for r in results:
        extra = ""
        if r["final_loss"] is not None:
            extra += f", final loss {r['final_loss']:.4f}"
        if r["valid_auroc"] is not None:
            extra += f", valid auroc {r['valid_auroc']:.3f}"
        print(f"seed {r['seed']}: wrote {r['written'][0]}{extra}")
    return 0


def _eval_one_seed(cfg: dict, ds: LabeledDataset, model: GnnClassifier,
                   seed: int) -> Optional[dict]:
    path = _posterior_path(cfg, seed)
    if not os.path.isfile(path):
        return None
    post = bayes.load_posterior(path)
    _check_artifact(cfg, model, post, path)
    manifest = _ensure_manifest(cfg, ds, seed)
    test_idx = manifest["test"] or manifest["valid"]
    if not test_idx:
        raise DataError(f"seed {seed}: no held-out molecules to evaluate")
    batches = _batches(ds, test_idx, cfg["batch_size"])
    labels = ds.labels[np.asarray(test_idx)]
    pred = _predictive(cfg, model, post, batches, seed)
    probs = pred.mean
    row: dict = {"seed": seed, "n_eval": len(test_idx),
                 "n_draws": pred.n_samples}
    for name, fn in (("ece", lambda p, y: metrics.ece(p, y).ece),
                     ("auroc", metrics.auroc),
                     ("accuracy",
                      lambda p, y:
                      metrics.classification_metrics(p, y).accuracy),
                     ("precision",
                      lambda p, y:
                      metrics.classification_metrics(p, y).precision),
                     ("recall",
                      lambda p, y:
                      metrics.classification_metrics(p, y).recall),
                     ("f1",
                      lambda p, y: metrics.classification_metrics(p, y).f1)):
        try:
            row[name], _ = metrics.macro_average(fn, probs, labels)
        except DataError:
            row[name] = None
    present = ~np.isnan(labels)
    pooled_p, pooled_y = probs[present], labels[present]
    row["extreme_fraction"] = \
        metrics.screening_summary(pooled_p).extreme_fraction
    hist = metrics.confusion_histogram(pooled_p, pooled_y)
    hist_path = os.path.join(cfg["out_dir"],
                             f"{cfg['mode']}_seed{seed}_confusion.csv")
    _write_csv_with_digest(hist_path, config_digest(cfg),
                           lambda p: metrics.write_histogram_csv(p, hist))
    if cfg["render_svg"]:
        metrics.render_histogram_svg(
            hist_path[:-4] + ".svg", hist.bin_low, hist.bin_high,
            {"tp": hist.tp, "fp": hist.fp, "tn": hist.tn, "fn": hist.fn},
            title=f"{cfg['mode']} seed {seed} "
                  f"[config {config_digest(cfg)}]")
    return row


def _write_csv_with_digest(path: str, digest: str, write_body) -> None:
    body = f"{path}.body"
    write_body(body)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as out, open(body) as src:
        out.write(f"# config_digest={digest}\n")
        out.write(src.read())
    os.remove(body)
    os.replace(tmp, path)


def cmd_eval(cfg: dict, args: argparse.Namespace) -> int:
    ds = _load(cfg)
    model = _model_for(cfg, ds.n_tasks)
    rows, missing = [], []
    for seed in cfg["seeds"]:
        row = _eval_one_seed(cfg, ds, model, seed)
        if row is None:
            missing.append(seed)
        else:
            rows.append(row)
    if not rows:
        raise DataError(
            f"no posterior artifacts found under {cfg['out_dir']} for "
            f"mode {cfg['mode']!r} and seeds {cfg['seeds']}")
    numeric = [{k: v for k, v in r.items() if isinstance(v, (int, float))
                and v is not None} for r in rows]
    report = {"config_digest": config_digest(cfg), "mode": cfg["mode"],
              "per_seed": rows, "aggregate":
              metrics.aggregate_across_seeds(numeric),
              "missing_seeds": missing}
    path = os.path.join(cfg["out_dir"], f"eval_{cfg['mode']}.json")
    _write_json(path, report)
    agg = report["aggregate"]
    for name in ("ece", "auroc", "accuracy"):
        if name in agg:
            print(f"{name}: {agg[name]['mean']:.4f} "
                  f"+/- {agg[name]['std']:.4f} (n={agg[name]['n']})")
    if missing:
        print(f"missing artifacts for seeds {missing}")
    print(f"wrote {path}")
    return 0


def cmd_screen(cfg: dict, args: argparse.Namespace) -> int:
    if not args.library:
        raise ConfigError("screen needs --library <smiles file>")
    if not os.path.isfile(args.library):
        raise ConfigError(f"library file not found: {args.library}")
    smiles, graphs, n_dropped = [], [], 0
    with open(args.library) as fh:
        for line in fh:
            token = line.split()[0] if line.split() else ""
            if not token or token.startswith("#"):
                continue
            try:
                graphs.append(featurize(parse_smiles(token)))
            except SmilesError:
                n_dropped += 1
                continue
            smiles.append(token)
    if not smiles:
        raise DataError(f"library {args.library} has no parseable "
                        f"molecules ({n_dropped} lines dropped)")
    seed = cfg["seeds"][0]
    path = args.posterior or _posterior_path(cfg, seed)
    if not os.path.isfile(path):
        raise ConfigError(f"posterior artifact not found: {path}")
    post = bayes.load_posterior(path)
    n_tasks = 1
    if post.meta.get("n_tasks"):
        n_tasks = int(post.meta["n_tasks"])
    model = _model_for(cfg, n_tasks)
    _check_artifact(cfg, model, post, path)
    dummy = np.full((len(graphs), n_tasks), np.nan)
    batches = []
    for lo in range(0, len(graphs), cfg["batch_size"]):
        batches.append(make_batch(graphs[lo:lo + cfg["batch_size"]],
                                  dummy[lo:lo + cfg["batch_size"]]))
    pred = _predictive(cfg, model, post, batches, seed)
    probs = pred.mean[:, 0]
    spread = pred.uncertainty[:, 0]
    digest = config_digest(cfg)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    base = os.path.join(cfg["out_dir"], f"screen_{cfg['mode']}")

    order = np.argsort(-probs, kind="stable")
    with open(f"{base}_ranking.csv", "w") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("smiles,probability,uncertainty\n")
        for i in order:
            fh.write(f"{smiles[i]},{probs[i]:.6f},{spread[i]:.6f}\n")

    summary = metrics.screening_summary(probs)
    _write_json(f"{base}_summary.json", {
        "config_digest": digest, "mode": cfg["mode"],
        "posterior": os.path.basename(path),
        "n_total": summary.n_total, "n_dropped": n_dropped,
        "n_below": summary.n_below, "n_above": summary.n_above,
        "low": summary.low, "high": summary.high,
        "extreme_fraction": summary.extreme_fraction,
        "n_draws": pred.n_samples})

    def body(p):
        with open(p, "w") as fh:
            fh.write("bin_low,bin_high,count\n")
            for k in range(summary.counts.size):
                fh.write(f"{summary.bin_low[k]:g},{summary.bin_high[k]:g},"
                         f"{int(summary.counts[k])}\n")

    _write_csv_with_digest(f"{base}_hist.csv", digest, body)
    metrics.render_histogram_svg(
        f"{base}_hist.svg", summary.bin_low, summary.bin_high,
        {"count": summary.counts},
        title=f"screening probabilities ({cfg['mode']}) [config {digest}]")
    print(f"screened {summary.n_total} molecules ({n_dropped} dropped): "
          f"{summary.n_below} below {summary.low}, "
          f"{summary.n_above} above {summary.high}")
    print(f"wrote {base}_ranking.csv")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molbayes",
        description="Train graph networks on molecular data under "
                    "approximate Bayesian modes and report calibration.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"split": "write per-seed scaffold-split manifests",
             "train": "fit one posterior artifact per seed",
             "eval": "score posteriors on held-out scaffolds",
             "screen": "rank an unlabeled SMILES library"}
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config key by dotted path")
        sp.add_argument("--mode", help="bayes mode, e.g. none or swag")
        sp.add_argument("--arch", help="gnn architecture, e.g. gin")
        sp.add_argument("--seeds", "--seed", dest="seeds",
                        help="comma-separated seed list")
        sp.add_argument("--out", help="output directory")
        if name == "screen":
            sp.add_argument("--library",
                            help="SMILES file, one molecule per line")
            sp.add_argument("--posterior",
                            help="posterior artifact to screen with")
        else:
            sp.set_defaults(library=None, posterior=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    commands = {"split": cmd_split, "train": cmd_train,
                "eval": cmd_eval, "screen": cmd_screen}
    try:
        return commands[args.command](resolve_config(args), args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NumericError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
