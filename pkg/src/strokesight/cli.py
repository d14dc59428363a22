"""Batch entry points for the full workflow.

Subcommands: synth, preprocess, train, dqn-train, ablate-rewards, eval,
topo, serve. Each is a thin layer over the pipeline module; configuration
precedence is flags > environment (STROKESIGHT_*) > config file.
Errors leave a machine-readable JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tomllib
from pathlib import Path

import numpy as np

from . import dqn, dsp, eeg_io, grutcn, pipeline, topo

ENV_PREFIX = "STROKESIGHT_"


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def resolve(name: str, flag_value, config: dict, default=None, cast=None):
    """flags > env > config file > default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if env is not None:
        return cast(env) if cast else env
    if name in config:
        return config[name]
    return default


def _emit_error(exc: Exception) -> None:
    sys.stderr.write(json.dumps({
        "error": type(exc).__name__,
        "message": str(exc),
    }) + "\n")


def _maybe_json(args, payload: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload))
    else:
        for k, v in payload.items():
            print(f"{k}: {v}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, config):
    out = Path(resolve("out", args.out, config, "cohort"))
    seed = resolve("seed", args.seed, config, 0, int)
    n = resolve("patients", args.patients, config, 12, int)
    per_class = {cls: n // 3 for cls in eeg_io.STROKE_TYPES}
    for i, cls in enumerate(eeg_io.STROKE_TYPES):
        if i < n % 3:
            per_class[cls] += 1
    spec = eeg_io.SyntheticCohortSpec(
        n_patients_per_class=per_class,
        sample_rate_hz=resolve("sample-rate", args.sample_rate, config, 256.0, float),
        seed=seed,
    )
    manifest = pipeline.synthesize_cohort(out, spec)
    _maybe_json(args, {"out": str(out), "patients": len(manifest.entries),
                       "recordings": len(manifest.recording_ids())})


def cmd_preprocess(args, config):
    data = Path(resolve("data", args.data, config, "cohort"))
    out = Path(resolve("out", args.out, config, "features"))
    notch = bool(resolve("notch", args.notch, config, False))
    features = pipeline.preprocess_cohort(data, out, notch=notch)
    n_segments = sum(len(v) for v in features.values())
    _maybe_json(args, {"out": str(out), "recordings": len(features),
                       "segments": n_segments})


def cmd_train(args, config):
    data = Path(resolve("data", args.data, config, "cohort"))
    feats_dir = Path(resolve("features", args.features, config, "features"))
    out = Path(resolve("out", args.out, config, "model"))
    cfg = grutcn.TrainConfig(
        seed=resolve("seed", args.seed, config, 0, int),
        max_epochs=resolve("max-epochs", args.max_epochs, config, 300, int),
        patience=resolve("patience", args.patience, config, 20, int),
    )
    manifest = eeg_io.CohortManifest.load(data / "cohort.json")
    features = pipeline.load_cohort_features(feats_dir, manifest)
    _, histories = pipeline.train_models(features, manifest, cfg, out_dir=out)
    _maybe_json(args, {task: {"best_epoch": h.best_epoch,
                              "best_val_macro_f1": round(h.best_val_macro_f1, 4)}
                       for task, h in histories.items()})


def _load_streams(data, feats_dir, model_dir, splits):
    manifest = eeg_io.CohortManifest.load(Path(data) / "cohort.json")
    features = pipeline.load_cohort_features(feats_dir, manifest)
    bundle, _ = grutcn.load_checkpoint(Path(model_dir) / "model")
    streams = {}
    for split in splits:
        segments = pipeline.split_segments(features, manifest, split)
        streams[split] = pipeline.observation_stream(bundle, segments)
    return manifest, features, bundle, streams


def cmd_dqn_train(args, config):
    data = resolve("data", args.data, config, "cohort")
    feats_dir = resolve("features", args.features, config, "features")
    model_dir = resolve("model", args.model, config, "model")
    out = Path(resolve("out", args.out, config, "policy"))
    out.mkdir(parents=True, exist_ok=True)
    seed = resolve("seed", args.seed, config, 0, int)
    episodes = resolve("episodes", args.episodes, config, 40, int)
    scheme = dqn.RewardScheme(
        r_correct=resolve("r-correct", args.r_correct, config, 2.0, float),
        r_wrong=resolve("r-wrong", args.r_wrong, config, -2.0, float),
    )
    cfg = dqn.AgentConfig(seed=seed,
                          variant=resolve("variant", args.variant, config, "dueling"))
    _, _, _, streams = _load_streams(data, feats_dir, model_dir,
                                     ["train", "validation"])
    stream = streams["train"] + streams["validation"]
    policy, curve = dqn.train_agent(stream, scheme, cfg, episodes=episodes,
                                    seeds=[seed])
    policy.save(out / "policy")
    curve.to_csv(out / "learning_curve.csv")
    _maybe_json(args, {"out": str(out), "tau": [round(t, 4) for t in policy.tau],
                       "episodes": episodes, "scheme": scheme.name})


def cmd_ablate(args, config):
    data = resolve("data", args.data, config, "cohort")
    feats_dir = resolve("features", args.features, config, "features")
    model_dir = resolve("model", args.model, config, "model")
    out = Path(resolve("out", args.out, config, "ablation"))
    out.mkdir(parents=True, exist_ok=True)
    seed = resolve("seed", args.seed, config, 0, int)
    episodes = resolve("episodes", args.episodes, config, 20, int)
    cfg = dqn.AgentConfig(seed=seed, variant="dueling")
    _, _, _, streams = _load_streams(data, feats_dir, model_dir,
                                     ["train", "validation"])
    rows = dqn.ablate_rewards(dqn.ABLATION_SCHEMES, streams["train"],
                              streams["validation"], cfg, episodes=episodes,
                              seeds=[seed])
    dqn.ablation_to_csv(rows, out / "reward_ablation.csv")
    _maybe_json(args, {"out": str(out / 'reward_ablation.csv'),
                       "schemes": [r["scheme"] for r in rows]})


def cmd_eval(args, config):
    data = resolve("data", args.data, config, "cohort")
    feats_dir = resolve("features", args.features, config, "features")
    model_dir = resolve("model", args.model, config, "model")
    policy_dir = resolve("policy", args.policy, config, None)
    split = resolve("split", args.split, config, "test")
    out = Path(resolve("out", args.out, config, "report"))
    n_boot = resolve("n-boot", args.n_boot, config, 10_000, int)
    seed = resolve("seed", args.seed, config, 0, int)
    manifest = eeg_io.CohortManifest.load(Path(data) / "cohort.json")
    features = pipeline.load_cohort_features(feats_dir, manifest)
    bundle, _ = grutcn.load_checkpoint(Path(model_dir) / "model")
    policy = None
    if policy_dir:
        policy = dqn.ThresholdPolicy.load(Path(policy_dir) / "policy")
    report = pipeline.evaluate_split(bundle, features, manifest, split,
                                     policy=policy, n_boot=n_boot, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"report_{split}.json"
    report_path.write_text(json.dumps(report, indent=1))
    if args.json:
        print(json.dumps(report))
    else:
        stroke = report["tasks"]["stroke_type"]
        line = (f"stroke_type macro-F1 (primary): "
                f"{stroke['static']['macro_f1']['value']:.4f}")
        if "dqn" in stroke:
            line += f" | dqn {stroke['dqn']['macro_f1']['value']:.4f}"
        print(line)
        for task in ("lateralization", "severity"):
            t = report["tasks"][task]["static"]
            print(f"{task} macro-F1: {t['macro_f1']['value']:.4f}")
        print(f"report: {report_path}")


def cmd_topo(args, config):
    feats_dir = Path(resolve("features", args.features, config, "features"))
    recording = resolve("recording", args.recording, config)
    if recording is None:
        raise ValueError("--recording is required")
    band = resolve("band", args.band, config, "delta")
    segment = resolve("segment", args.segment, config, 0, int)
    out = Path(resolve("out", args.out, config, "topo"))
    out.mkdir(parents=True, exist_ok=True)
    feats, _, _ = dsp.load_features(feats_dir / f"{recording}.feat.json")
    grid = topo.render_band(feats[segment].matrix, band)
    path = out / f"{recording}_seg{segment}_{band}.json"
    path.write_text(json.dumps(grid.to_dict()))
    _maybe_json(args, {"out": str(path), "band": grid.band, "n": grid.n})


def cmd_serve(args, config):
    import uvicorn

    from .service import SessionState, create_app

    data_dir = resolve("data-dir", args.data_dir, config, None)
    port = resolve("port", args.port, config, 8000, int)
    state = SessionState(data_dir=data_dir)
    if data_dir:
        state.load_data_dir()
    model = resolve("model", args.model, config, None)
    if model:
        state.load_model(Path(model) / "model")
    policy = resolve("policy", args.policy, config, None)
    if policy:
        state.load_policy(Path(policy) / "policy")
    app = create_app(state)
    uvicorn.run(app, host="127.0.0.1", port=port)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strokesight")
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out")
    p.add_argument("--patients", type=int)
    p.add_argument("--sample-rate", type=float, dest="sample_rate")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="filter and featurize a cohort")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--notch", action="store_const", const=True, default=None)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train the three task models")
    p.add_argument("--data")
    p.add_argument("--features")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("dqn-train", help="train the threshold-adaptation agent")
    p.add_argument("--data")
    p.add_argument("--features")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--variant")
    p.add_argument("--r-correct", type=float, dest="r_correct")
    p.add_argument("--r-wrong", type=float, dest="r_wrong")
    p.set_defaults(fn=cmd_dqn_train)

    p = sub.add_parser("ablate-rewards", help="reward-scheme ablation table")
    p.add_argument("--data")
    p.add_argument("--features")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("eval", help="evaluation report for a split")
    p.add_argument("--data")
    p.add_argument("--features")
    p.add_argument("--model")
    p.add_argument("--policy")
    p.add_argument("--split")
    p.add_argument("--out")
    p.add_argument("--n-boot", type=int, dest="n_boot")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("topo", help="export a scalp-map grid")
    p.add_argument("--features")
    p.add_argument("--recording")
    p.add_argument("--band")
    p.add_argument("--segment", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_topo)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--model")
    p.add_argument("--policy")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config_file(args.config)
        section = config.get(args.command.replace("-", "_"), config)
        args.fn(args, section)
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        _emit_error(exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
