"""Command-line entry point: ``fingertap <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 input data error,
3 internal invariant violation. Diagnostics go to stderr; results go to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import explain, ingest, model, stats, synth, tables
from .config import ConfigError, RunConfig, __version__, load_config
from .features import CATALOG_VERSION, FEATURE_NAMES, assemble_feature_vector, feature_target_correlations
from .ingest import DataError
from .signals import DegenerateGeometry, EmptySignal, process_recording, write_debug_signal

log = logging.getLogger("fingertap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n", encoding="utf-8")


# -- extract ------------------------------------------------------------------

def _extract_one(args):
    path, cfg, debug_dir = args
    rec = ingest.parse_landmark_file(path)
    try:
        proc = process_recording(rec, cfg.peaks(), cfg.score_threshold)
    except (EmptySignal, DegenerateGeometry, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if debug_dir is not None:
        write_debug_signal(proc, Path(debug_dir) / f"{rec.video_id}.csv")
    try:
        return assemble_feature_vector(proc)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_extract(a, cfg: RunConfig):
    files = sorted(Path(a.landmarks).glob("*.jsonl"))
    if not files:
        raise DataError(f"no *.jsonl landmark files in {a.landmarks}")
    if a.debug_signals:
        Path(a.debug_signals).mkdir(parents=True, exist_ok=True)
    jobs = [(f, cfg, a.debug_signals) for f in files]
    if a.jobs > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            vectors = list(pool.map(_extract_one, jobs, chunksize=8))
    else:
        vectors = [_extract_one(j) for j in jobs]
    seen = {}
    for f, fv in zip(files, vectors):
        if fv.video_id in seen:
            raise DataError(f"video_id {fv.video_id!r} appears in both {seen[fv.video_id]} and {f}")
        seen[fv.video_id] = f
    tables.write_feature_table(a.out, vectors, FEATURE_NAMES, cfg.provenance())
    print(f"extracted {len(vectors)} recordings -> {a.out}")


# -- labels and reports ---------------------------------------------------------

def cmd_ground_truth(a, cfg):
    rows = ingest.ground_truth_table(ingest.load_ratings(a.ratings))
    tables.write_table(a.out, ["video_id", "participant_id", "hand", "ground_truth", "rule", "difficult"],
                       [[r["video_id"], r["participant_id"], r["hand"], r["ground_truth"], r["rule"],
                         int(r["difficult"])] for r in rows], cfg.provenance())
    print(f"{len(rows)} labels -> {a.out}")


def _load_features(path):
    table = tables.read_feature_table(path)
    version = table.provenance.get("catalog_version")
    if version is not None and version != CATALOG_VERSION:
        raise DataError(f"feature table catalog version {version} does not match this tool's {CATALOG_VERSION}")
    return table


def cmd_correlate(a, cfg):
    table = _load_features(a.features)
    y = tables.join_labels(table, tables.read_labels(a.labels))
    rows = feature_target_correlations(table.X, y, table.names, cfg.correlation_alpha)
    tables.write_table(a.out, ["rank", "feature", "r", "p", "n", "significant", "note"],
                       [["" if r["rank"] is None else r["rank"], r["feature"], float(r["r"]), float(r["p"]),
                         r["n"], int(r["significant"]), r["note"]] for r in rows], cfg.provenance())
    print(f"{sum(r['significant'] for r in rows)} of {len(rows)} features significant at "
          f"alpha={cfg.correlation_alpha} -> {a.out}")


def cmd_cv(a, cfg):
    table = _load_features(a.features)
    y = tables.join_labels(table, tables.read_labels(a.labels))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    save = None
    if a.models_dir:
        mdir = Path(a.models_dir)
        mdir.mkdir(parents=True, exist_ok=True)
        extra = {"provenance": cfg.provenance()}

        def save(pid, ens, test):
            (mdir / f"fold_{pid}.json").write_text(ens.dumps(extra) + "\n", encoding="utf-8")

    def progress(done, total):
        log.info("fold %d/%d", done, total)

    report = model.lopo_cv(table.X, y, table.names, table.video_ids, table.participant_ids, cfg.pipeline(),
                           progress=progress, fold_callback=save)
    # every held-out video must be predicted exactly once
    if np.isnan(report.predictions).any():
        raise AssertionError("some videos were never predicted")
    payload = report.to_dict()
    payload["provenance"] = cfg.provenance()
    payload["config"] = dict(cfg.items())
    _dump_json(out / "cv_report.json", payload)
    tables.write_table(out / "predictions.csv",
                       ["video_id", "participant_id", "truth", "prediction", "raw_prediction", "abs_error"],
                       [[v["video_id"], v["participant_id"], v["truth"], v["prediction"], v["raw_prediction"],
                         v["abs_error"]] for v in payload["videos"]], cfg.provenance())
    m = report.metrics
    log.info("MAE on clamped predictions %.4f, on raw predictions %.4f", m.mae, report.raw_mae)
    tables.write_table(out / "metrics.csv", ["metric", "value"],
                       [[k, float(v)] for k, v in m.to_dict().items()], cfg.provenance())
    print(f"LOPO over {len(report.folds)} participants: MAE {m.mae:.4f}  MSE {m.mse:.4f}  "
          f"PCC {m.pcc:.4f}  rho {m.spearman_rho:.4f}  tau {m.kendall_tau_b:.4f}  "
          f"accuracy {m.accuracy_percent:.2f}%  MAPE {m.mape_percent:.2f}% -> {out}")


def cmd_train(a, cfg):
    table = _load_features(a.features)
    y = tables.join_labels(table, tables.read_labels(a.labels))
    ens, info = model.train_pipeline(table.X, y, table.names, cfg.pipeline())
    extra = {"provenance": cfg.provenance(), "training": {"n_rows": int(len(y)), **info}}
    Path(a.out).write_text(ens.dumps(extra) + "\n", encoding="utf-8")
    print(f"trained on {len(y)} rows with {len(ens.selected_features)} features -> {a.out}")


def _load_model(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror}") from None
    try:
        return model.BoostedEnsemble.loads(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a valid model file ({exc})") from None


def _check_catalog(ens, table):
    fv = table.provenance.get("catalog_version", CATALOG_VERSION)
    if ens.catalog_version != fv:
        raise DataError(f"catalog version mismatch: model {ens.catalog_version}, features {fv}")


def cmd_predict(a, cfg):
    ens = _load_model(a.model)
    table = tables.read_feature_table(a.features)
    _check_catalog(ens, table)
    try:
        raw = ens.predict_raw(table.X, table.names)
    except model.MissingFeature as exc:
        raise DataError(str(exc.args[0])) from None
    pred = np.clip(raw, model.SCORE_MIN, model.SCORE_MAX)
    tables.write_table(a.out, ["video_id", "participant_id", "hand", "prediction", "raw_prediction"],
                       [[*ids, float(p), float(r)] for ids, p, r in zip(table.ids, pred, raw)], cfg.provenance())
    print(f"{len(pred)} predictions -> {a.out}")


def cmd_explain(a, cfg):
    ens = _load_model(a.model)
    table = tables.read_feature_table(a.features)
    _check_catalog(ens, table)
    try:
        values, base = explain.tree_shap_matrix(ens, table.X, table.names)
        raw = ens.predict_raw(table.X, table.names)
    except model.MissingFeature as exc:
        raise DataError(str(exc.args[0])) from None
    gap = np.abs(values.sum(axis=1) + base - raw).max() if len(raw) else 0.0
    if gap > 1e-9:
        raise AssertionError(f"attributions miss the prediction by {gap:.3g}")
    feats = ens.selected_features
    tables.write_table(a.out, ["video_id", "base_value", "raw_prediction"] + feats,
                       [[ids[0], float(base), float(r)] + [float(v) for v in row]
                        for ids, r, row in zip(table.ids, raw, values)], cfg.provenance())
    ranking = explain.global_importance(values, feats)
    rank_path = Path(a.out).with_name("importance.txt")
    with rank_path.open("w", encoding="utf-8") as fh:
        fh.write(tables.provenance_line(cfg.provenance()))
        fh.write(f"{'rank':>4}  {'feature':40s} mean_abs_shap\n")
        for i, (n, s) in enumerate(ranking, start=1):
            fh.write(f"{i:4d}  {n:40s} {tables.format_float(s)}\n")
    for i, (n, s) in enumerate(ranking[:10], start=1):
        print(f"{i:2d}. {n:40s} {s:.5f}")
    print(f"attributions -> {a.out}, ranking -> {rank_path}")


def cmd_agreement(a, cfg):
    ratings = ingest.load_ratings(a.ratings)
    experts = sorted({r.rater_id for r in ratings if r.rater_role == "expert"})
    everyone = sorted({r.rater_id for r in ratings})
    videos = sorted({r.video_id for r in ratings})
    vpos = {v: i for i, v in enumerate(videos)}
    M = np.full((len(videos), len(everyone)), np.nan)
    difficult = np.zeros(len(videos), dtype=bool)
    for r in ratings:
        M[vpos[r.video_id], everyone.index(r.rater_id)] = r.rating
        if r.difficult and r.rater_role == "expert":
            difficult[vpos[r.video_id]] = True
    E = M[:, [everyone.index(e) for e in experts]]
    complete = np.all(np.isfinite(E), axis=1)
    out = {"provenance": cfg.provenance(), "n_videos": len(videos), "experts": experts, "raters": everyone}
    try:
        out["icc"] = stats.icc(E[complete], cfg.icc_variant).to_dict()
    except ValueError as exc:
        out["icc"] = {"error": str(exc)}
    out["krippendorff_alpha_experts"] = stats.krippendorff_alpha(E, "ordinal")
    out["krippendorff_alpha_all"] = stats.krippendorff_alpha(M, "ordinal")
    out["pairwise"] = stats.pairwise_agreement(M, everyone)
    out["quality"] = stats.quality_agreement_analysis(E[complete], difficult[complete], cfg.icc_variant)
    _dump_json(a.out, out)
    icc_v = out["icc"].get("value", float("nan"))
    print(f"{cfg.icc_variant} {icc_v:.4f}  alpha(experts) {out['krippendorff_alpha_experts']:.4f} -> {a.out}")


def cmd_bias(a, cfg):
    try:
        report = json.loads(Path(a.cv_report).read_text(encoding="utf-8"))
        errors = {v["video_id"]: (v["participant_id"], v["abs_error"]) for v in report["videos"]}
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{a.cv_report}: not a cv report ({exc})") from None
    demo = {p.participant_id: p for p in ingest.load_demographics(a.demographics)}
    quality = None
    if a.ratings:
        quality = {}
        for r in ingest.load_ratings(a.ratings):
            if r.rater_role == "expert":
                quality[r.video_id] = quality.get(r.video_id, False) or r.difficult
    out = stats.subgroup_error_analysis(errors, demo, quality)
    out["provenance"] = cfg.provenance()
    _dump_json(a.out, out)
    print(f"subgroup analysis over {out['n_videos']} videos -> {a.out}")


# -- synthetic data -------------------------------------------------------------

def cmd_synth(a, cfg):
    try:
        grades = tuple(int(g) for g in a.grades.split(","))
    except ValueError:
        raise UsageError(f"--grades must be comma-separated integers, got {a.grades!r}") from None
    if any(g not in synth.GRADE_PRESETS for g in grades):
        raise UsageError("grades must lie in 0-4")
    ds = synth.severity_grade_dataset(a.participants, grades, a.seed, a.both_hands)
    prov = {**cfg.provenance(), "seed": a.seed, "participants_per_grade": a.participants,
            "grades": "-".join(map(str, grades)), "both_hands": int(a.both_hands)}
    synth.write_dataset(ds, a.out, " ".join(f"{k}={v}" for k, v in sorted(prov.items())))
    print(f"{len(ds.recordings)} recordings from {len(ds.demographics)} participants -> {a.out}")


def cmd_noise(a, cfg):
    if a.sigma < 0:
        raise UsageError("--sigma must be nonnegative")
    files = sorted(Path(a.landmarks).glob("*.jsonl"))
    if not files:
        raise DataError(f"no *.jsonl landmark files in {a.landmarks}")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(files):
        rec = ingest.parse_landmark_file(f)
        noisy = synth.inject_keypoint_noise(rec, a.sigma, a.seed + k)
        ingest.write_landmark_file(noisy, out / f.name)
    print(f"{len(files)} recordings with keypoint noise sigma={a.sigma} -> {out}")


# -- parser -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fingertap", description="Finger-tapping severity pipeline.")
    p.add_argument("--version", action="version", version=f"fingertap {__version__} (catalog {CATALOG_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, config=True):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        if config:
            sp.add_argument("--config", help="key=value run configuration file")
        return sp

    sp = add("extract", cmd_extract, "landmark files -> feature table")
    sp.add_argument("--landmarks", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--debug-signals", dest="debug_signals")
    sp.add_argument("--jobs", type=int, default=1)
    sp = add("ground-truth", cmd_ground_truth, "expert ratings -> consensus labels")
    sp.add_argument("--ratings", required=True)
    sp.add_argument("--out", required=True)
    sp = add("correlate", cmd_correlate, "feature-label correlation table")
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp = add("cv", cmd_cv, "leave-one-participant-out cross-validation")
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--models-dir", dest="models_dir", help="also save each fold's model here")
    sp = add("train", cmd_train, "fit a model on all rows")
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp = add("predict", cmd_predict, "score a feature table with a model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--out", required=True)
    sp = add("explain", cmd_explain, "Shapley attributions for a feature table")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--out", required=True)
    sp = add("agreement", cmd_agreement, "rater agreement statistics")
    sp.add_argument("--ratings", required=True)
    sp.add_argument("--out", required=True)
    sp = add("bias", cmd_bias, "prediction error by demographic subgroup")
    sp.add_argument("--cv-report", dest="cv_report", required=True)
    sp.add_argument("--demographics", required=True)
    sp.add_argument("--ratings", help="optional ratings.csv to add a video-quality grouping")
    sp.add_argument("--out", required=True)
    sp = add("synth", cmd_synth, "synthetic graded dataset", config=False)
    sp.add_argument("--grades", default="0,1,2,3,4")
    sp.add_argument("--participants", type=int, default=40, help="participants per grade")
    sp.add_argument("--both-hands", dest="both_hands", action="store_true",
                    help="record both hands of every participant instead of one")
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--out", required=True)
    sp = add("noise", cmd_noise, "add keypoint noise to landmark files", config=False)
    sp.add_argument("--landmarks", required=True)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(getattr(a, "config", None))
        if getattr(a, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        a.fn(a, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
