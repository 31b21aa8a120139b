"""memerobust command line.

Every run writes into ``<out>/<run-id>/``: the resolved config
(``run_config.ini``), plus whatever the subcommand produces. The run id is a
hash of the subcommand and its resolved settings, so the same invocation
always lands in the same place and produces the same bytes.

Exit codes: 0 ok, 1 usage, 2 data error, 3 remote endpoint error.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .dataset import DatasetError, load_splits, replace_samples, save_dataset, save_splits
from .harness import (Artifacts, GridReport, HarnessConfig, HarnessError, RemoteError, derive_seed, dump_json,
                      evaluate, gen_aug_dataset, load_json, make_report, make_spec, perturb_sample,
                      prepare_artifacts, run_grid, run_single_channel_suite)
from .harness.remote import EndpointConfig, remote_evaluate
from .imagenoise import CORRUPTIONS, load_uap, save_uap, train_uap
from .metrics import MetricError, rows_to_csv
from .paraphrase import ParaphraseError, RemoteTranslator
from .synthetic import make_splits
from .textnoise import Trigger, hotflip_edits, universal_trigger_search
from .toymodel import ModelConfig, NotTrainedError, TrainConfig, load_checkpoint, save_checkpoint, train_classifier

TEXT_FAMILIES = {"none": 0, "typos": 1, "hotflip": 2, "triggers": 3, "backtranslation": 4}
IMAGE_FAMILIES = {"none": 0, "uap": 1, "corruption": 2, "augmix": 3}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    # paths
    manifest: str = ""
    out: str = "runs"
    checkpoint: str = ""
    # run
    run_seed: int = 0
    jobs: int = 1
    mode: str = "multimodal"
    # training
    with_tda: bool = False
    gate: str = "scalar"
    epochs: int = 40
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    # noise
    typo_rate: float = 0.3
    hotflip_fraction: float = 0.05
    trigger_length: int = 3
    trigger_iterations: int = 10
    trigger_target: str = "flip"
    corruption_severity: int = 3
    corruption_kind: str = ""
    uap_eps: float = 8 / 255
    uap_epochs: int = 10
    augmix_width: int = 3
    augmix_depth: int = 3
    augmix_alpha: float = 1.0
    # remote
    endpoint_url: str = ""
    endpoint_timeout: float = 10.0
    endpoint_retries: int = 3
    translator_url: str = ""

    def harness(self) -> HarnessConfig:
        return HarnessConfig(
            typo_rate=self.typo_rate, hotflip_fraction=self.hotflip_fraction,
            trigger_length=self.trigger_length, trigger_iterations=self.trigger_iterations,
            trigger_target=self.trigger_target, corruption_severity=self.corruption_severity,
            corruption_kind=self.corruption_kind or None, uap_eps=self.uap_eps, uap_epochs=self.uap_epochs,
            augmix_width=self.augmix_width, augmix_depth=self.augmix_depth, augmix_alpha=self.augmix_alpha)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, momentum=self.momentum, batch_size=self.batch_size)

    def model_config(self) -> ModelConfig:
        return ModelConfig(gate=self.gate)


SECTIONS = {
    "paths": ("manifest", "out", "checkpoint"),
    "run": ("run_seed", "jobs", "mode"),
    "train": ("with_tda", "gate", "epochs", "lr", "momentum", "batch_size"),
    "noise": ("typo_rate", "hotflip_fraction", "trigger_length", "trigger_iterations", "trigger_target",
              "corruption_severity", "corruption_kind", "uap_eps", "uap_epochs", "augmix_width",
              "augmix_depth", "augmix_alpha"),
    "remote": ("endpoint_url", "endpoint_timeout", "endpoint_retries", "translator_url"),
}
FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = FIELD_TYPES[name]
    raw = raw.strip().strip('"').strip("'")
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise UsageError(f"config key {name!r}: cannot parse {raw!r} as {kind.__name__}")


def read_config_file(path) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise UsageError(f"bad config file {path}: {exc}")
    out = {}
    for section in cp.sections():
        for key, raw in cp[section].items():
            name = "run_seed" if key == "seed" else key
            if name not in FIELD_TYPES:
                raise UsageError(f"unknown config key {key!r} in [{section}]")
            out[name] = _coerce(name, raw)
    return out


def resolve_config(args) -> RunConfig:
    """flags > config file > defaults."""
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in FIELD_TYPES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


def write_config(cfg: RunConfig, path) -> None:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    d = asdict(cfg)
    for section, keys in SECTIONS.items():
        cp[section] = {k: repr(d[k]) if isinstance(d[k], float) else str(d[k]) for k in keys}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def run_dir(cmd: str, cfg: RunConfig, extra: dict) -> Path:
    payload = json.dumps({"cmd": cmd, "config": asdict(cfg), "extra": extra}, sort_keys=True)
    rid = f"{cmd}-{hashlib.sha256(payload.encode()).hexdigest()[:12]}"
    d = Path(cfg.out) / rid
    d.mkdir(parents=True, exist_ok=True)
    write_config(cfg, d / "run_config.ini")
    return d


# ---------------------------------------------------------------- helpers

def _splits(cfg: RunConfig, need=("test",)) -> dict:
    if not cfg.manifest:
        raise UsageError("--manifest is required")
    splits = load_splits(cfg.manifest)
    for name in need:
        if name not in splits:
            raise DatasetError(f"{cfg.manifest} has no {name!r} split")
    return splits


def _model(cfg: RunConfig, splits: dict, out: Path):
    """Load --checkpoint, or train on the manifest's train split and save it."""
    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint)
    if "train" not in splits:
        raise DatasetError("no --checkpoint given and the manifest has no train split")
    model = train_classifier(splits["train"], cfg.train_config(), cfg.with_tda, cfg.run_seed,
                             cfg.model_config(), out / "curve.csv")
    save_checkpoint(model, out / "model.ckpt")
    return model


def _write_report(report, out: Path, stem: str) -> None:
    from .harness.plotting import grid_heatmap, suite_chart

    (out / f"{stem}.json").write_text(dump_json(report), encoding="utf-8")
    (out / f"{stem}.md").write_text(make_report(report, "markdown"), encoding="utf-8")
    (out / f"{stem}.csv").write_text(make_report(report, "csv"), encoding="utf-8")
    if isinstance(report, GridReport):
        if report.cells:
            grid_heatmap(report, out / f"{stem}.png")
    else:
        suite_chart(report, out / f"{stem}.png")


def _provider(cfg: RunConfig):
    return RemoteTranslator(cfg.translator_url, timeout=cfg.endpoint_timeout) if cfg.translator_url else None


def _perturb_all(model, splits: dict, cfg: RunConfig, spec, artifacts, provider=None) -> list:
    out = []
    k = 0
    for ds in splits.values():
        samples = []
        for s in ds:
            samples.append(perturb_sample(model, s, k, spec, cfg.harness(), artifacts, cfg.mode, provider))
            k += 1
        out.append(replace_samples(ds, samples))
    return out


# ---------------------------------------------------------------- subcommands

def cmd_make_fixture(args, cfg):
    out = run_dir("make-fixture", cfg, {"n": [args.n_train, args.n_val, args.n_test], "sep": args.separable})
    sp = make_splits(cfg.run_seed, args.n_train, args.n_val, args.n_test, args.separable)
    path = save_splits(sp.values(), out)
    print(path)


def cmd_train(args, cfg):
    out = run_dir("train", cfg, {})
    train = _splits(cfg, need=("train",))["train"]
    model = train_classifier(train, cfg.train_config(), cfg.with_tda, cfg.run_seed, cfg.model_config(),
                             out / "curve.csv")
    save_checkpoint(model, out / "model.ckpt")
    epoch, loss, acc = model.curve[-1] if model.curve else (0, float("nan"), float("nan"))
    print(f"{out / 'model.ckpt'}  epoch={epoch} loss={loss:.4f} train_acc={acc:.4f}")


def cmd_perturb_text(args, cfg):
    t = TEXT_FAMILIES[args.family]
    extra = {"family": args.family, "tokens": args.tokens, "trigger": args.trigger}
    out = run_dir("perturb-text", cfg, extra)
    splits = _splits(cfg, need=())
    model = load_checkpoint(cfg.checkpoint) if cfg.checkpoint else None
    if t == 2 and model is None:
        raise UsageError("hotflip needs --checkpoint")
    spec = make_spec(cfg.run_seed, t, 0, cfg.harness())
    if t == 3:
        if args.tokens:
            trig = Trigger(tuple(args.tokens.split()), -1)
        elif args.trigger:
            d = json.loads(Path(args.trigger).read_text())
            trig = Trigger(tuple(d["tokens"]), d["target_label"], d["search_loss"])
        else:
            raise UsageError("triggers need --tokens or --trigger FILE")
        spec = replace(spec, text=replace(spec.text, trigger=trig))
    print(save_splits(_perturb_all(model, splits, cfg, spec, None, _provider(cfg)), out))


def cmd_perturb_image(args, cfg):
    i = IMAGE_FAMILIES[args.family]
    out = run_dir("perturb-image", cfg, {"family": args.family, "uap": args.uap})
    splits = _splits(cfg, need=())
    artifacts = Artifacts()
    if i == 1:
        if not args.uap:
            raise UsageError("uap needs --uap FILE (from `attack uap`)")
        artifacts.uap = load_uap(args.uap)
    spec = make_spec(cfg.run_seed, 0, i, cfg.harness(), artifacts)
    print(save_splits(_perturb_all(None, splits, cfg, spec, artifacts), out))


def cmd_attack(args, cfg):
    out = run_dir("attack", cfg, {"kind": args.kind, "split": args.split, "target": args.target})
    splits = _splits(cfg, need=())
    model = _model(cfg, splits, out)
    if args.kind == "uap":
        ds = splits.get(args.split or "train")
        if ds is None:
            raise DatasetError(f"no {args.split or 'train'!r} split")
        delta = train_uap(model, ds, cfg.uap_eps, cfg.uap_epochs, seed=derive_seed(cfg.run_seed, 0xA11))
        save_uap(delta, out / "uap.f32")
        print(f"{out / 'uap.f32'}  fooling_rate={delta.fooling_rate:.4f}")
    elif args.kind == "trigger":
        ds = splits.get(args.split or "train")
        if ds is None:
            raise DatasetError(f"no {args.split or 'train'!r} split")
        target = int(args.target)
        pool = [s for s in ds if s.label != target] or list(ds)
        trig = universal_trigger_search(model, pool, cfg.trigger_length, target, cfg.trigger_iterations,
                                        channel=cfg.mode)
        rec = {"tokens": list(trig.tokens), "target_label": trig.target_label, "search_loss": trig.search_loss}
        (out / "trigger.json").write_text(json.dumps(rec, indent=1) + "\n")
        print(" ".join(trig.tokens), f"loss={trig.search_loss:.4f}")
    else:
        ds = splits.get(args.split or "test")
        if ds is None:
            raise DatasetError(f"no {args.split or 'test'!r} split")
        samples, log = [], []
        for s in ds:
            budget = int(np.ceil(cfg.hotflip_fraction * len(s.caption)))
            cap, edits = hotflip_edits(model, s, budget, channel=cfg.mode)
            samples.append(replace(s, caption=cap))
            log.append({"id": s.id, "caption": cap,
                        "edits": [[e.op, e.position, e.char, e.score] for e in edits]})
        save_dataset(replace_samples(ds, samples), out)
        (out / "edits.jsonl").write_text("".join(json.dumps(r) + "\n" for r in log), encoding="utf-8")
        print(out / "manifest.jsonl")


def cmd_eval(args, cfg):
    t, i = TEXT_FAMILIES[args.text_family], IMAGE_FAMILIES[args.image_family]
    out = run_dir("eval", cfg, {"t": t, "i": i, "remote": args.remote})
    splits = _splits(cfg, need=("test",))
    test = splits["test"]
    if args.remote:
        if not cfg.endpoint_url:
            raise UsageError("--remote needs endpoint_url")
        ep = EndpointConfig(cfg.endpoint_url, timeout=cfg.endpoint_timeout, retries=cfg.endpoint_retries,
                            max_in_flight=max(1, cfg.jobs))
        rows = [remote_evaluate(ep, test, "clean")]
    else:
        model = _model(cfg, splits, out)
        hc = cfg.harness()
        artifacts = None
        if i == 1 or t == 3:
            if "train" not in splits:
                raise DatasetError("UAP/trigger cells need the train split to build artifacts")
            artifacts = prepare_artifacts(model, splits["train"], cfg.run_seed, hc, cfg.mode, i == 1, t == 3)
        clean = evaluate(model, test, make_spec(cfg.run_seed, 0, 0, hc), cfg.mode, hc, artifacts)
        rows = [clean]
        if (t, i) != (0, 0):
            rows.append(evaluate(model, test, make_spec(cfg.run_seed, t, i, hc, artifacts), cfg.mode, hc,
                                 artifacts, clean, _provider(cfg)))
    text = rows_to_csv(rows)
    (out / "metrics.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_grid(args, cfg):
    out = run_dir("grid", cfg, {})
    splits = _splits(cfg, need=("train", "test"))
    model = _model(cfg, splits, out)
    report = run_grid(model, splits["test"], cfg.run_seed, cfg.harness(), train=splits["train"],
                      mode=cfg.mode, jobs=cfg.jobs)
    _write_report(report, out, "grid")
    sys.stdout.write(make_report(report, "markdown"))


def cmd_ablate(args, cfg):
    out = run_dir("ablate", cfg, {"label": args.label})
    splits = _splits(cfg, need=("train", "test"))
    model = _model(cfg, splits, out)
    report = run_single_channel_suite(model, splits["test"], cfg.run_seed, cfg.harness(), train=splits["train"],
                                      jobs=cfg.jobs, label=args.label)
    _write_report(report, out, "suite")
    sys.stdout.write(make_report(report, "markdown"))


def cmd_gen_aug(args, cfg):
    out = run_dir("gen-aug", cfg, {"n": args.n})
    train = _splits(cfg, need=("train",))["train"]
    print(gen_aug_dataset(train, args.n, cfg.run_seed, out, cfg.harness(), _provider(cfg)))


def cmd_report(args, cfg):
    src = Path(args.input)
    try:
        report = load_json(src.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"results file not found: {src}")
    except (ValueError, KeyError) as exc:
        raise DatasetError(f"{src}: not a saved report ({exc})")
    out = run_dir("report", cfg, {"input": str(src)})
    _write_report(report, out, src.stem)
    sys.stdout.write(make_report(report, args.format))


# ---------------------------------------------------------------- parser

class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run")
    g.add_argument("--config", help="INI-style config file; explicit flags override it")
    g.add_argument("--seed", dest="run_seed", type=int, help="the single source of randomness (default 0)")
    g.add_argument("--out", help="output root; results go to <out>/<run-id>/ (default runs)")
    g.add_argument("--jobs", type=int, help="parallel grid cells / remote requests (default 1)")
    g.add_argument("--manifest", help="JSONL manifest (may hold several splits)")
    g.add_argument("--checkpoint", help="trained model checkpoint; omitted means train first")
    g.add_argument("--mode", choices=("multimodal", "text_only", "image_only"), help="channel mode")


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--with-tda", dest="with_tda", action="store_const", const=True,
                   help="insert the text denoising adapter")
    g.add_argument("--gate", choices=("scalar", "vector"), help="adapter gate shape (default scalar)")
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--batch-size", dest="batch_size", type=int)


def _noise_flags(p):
    g = p.add_argument_group("noise")
    g.add_argument("--rate", dest="typo_rate", type=float, help="typo rate per eligible word (default 0.3)")
    g.add_argument("--hotflip-fraction", type=float, help="HotFlip budget as a fraction of caption length")
    g.add_argument("--trigger-length", type=int)
    g.add_argument("--trigger-iterations", type=int)
    g.add_argument("--trigger-target", choices=("flip", "0", "1"))
    g.add_argument("--severity", dest="corruption_severity", type=int, choices=range(1, 6),
                   help="corruption severity 1-5 (default 3)")
    g.add_argument("--kind", dest="corruption_kind", choices=CORRUPTIONS,
                   help="fixed corruption kind (default: drawn per sample)")
    g.add_argument("--eps", dest="uap_eps", type=float, help="UAP L-inf radius on the [0,1] scale")
    g.add_argument("--uap-epochs", type=int)
    g.add_argument("--augmix-width", type=int)
    g.add_argument("--augmix-depth", type=int)
    g.add_argument("--augmix-alpha", type=float)
    g.add_argument("--translator-url", help="remote pivot-translation endpoint for back-translation")


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="memerobust", description="Robustness benchmark for multimodal meme classifiers.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("make-fixture", help="write a synthetic train/val/test manifest")
    _common(p)
    p.add_argument("--n-train", type=int, default=400)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--separable", action="store_true", help="noise-free class cues")
    p.set_defaults(func=cmd_make_fixture)

    p = sub.add_parser("train", help="train on the clean train split")
    _common(p)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("perturb-text", help="apply one caption-noise family to a manifest")
    _common(p)
    _noise_flags(p)
    p.add_argument("--in", dest="manifest", help="input manifest (same as --manifest)")
    p.add_argument("--family", required=True, choices=tuple(k for k in TEXT_FAMILIES if k != "none"))
    p.add_argument("--tokens", help="trigger tokens, space separated")
    p.add_argument("--trigger", help="trigger.json written by `attack trigger`")
    p.set_defaults(func=cmd_perturb_text)

    p = sub.add_parser("perturb-image", help="apply one image-noise family to a manifest")
    _common(p)
    _noise_flags(p)
    p.add_argument("--in", dest="manifest", help="input manifest (same as --manifest)")
    p.add_argument("--family", required=True, choices=tuple(k for k in IMAGE_FAMILIES if k != "none"))
    p.add_argument("--uap", help="uap.f32 written by `attack uap`")
    p.set_defaults(func=cmd_perturb_image)

    p = sub.add_parser("attack", help="run HotFlip, trigger search or UAP training")
    _common(p)
    _train_flags(p)
    _noise_flags(p)
    p.add_argument("kind", choices=("hotflip", "trigger", "uap"))
    p.add_argument("--split", help="split to attack (default: test for hotflip, train otherwise)")
    p.add_argument("--target", choices=("0", "1"), default="1", help="trigger target label")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="evaluate one noise cell against the clean baseline")
    _common(p)
    _train_flags(p)
    _noise_flags(p)
    p.add_argument("--text-family", choices=tuple(TEXT_FAMILIES), default="none")
    p.add_argument("--image-family", choices=tuple(IMAGE_FAMILIES), default="none")
    p.add_argument("--remote", action="store_true", help="score the clean test split with the remote endpoint")
    p.add_argument("--endpoint-url")
    p.add_argument("--endpoint-timeout", type=float)
    p.add_argument("--endpoint-retries", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="clean baseline plus all 12 text x image cells")
    _common(p)
    _train_flags(p)
    _noise_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("ablate", help="text-only and image-only suites")
    _common(p)
    _train_flags(p)
    _noise_flags(p)
    p.add_argument("--label", default="model", help="model name shown in the table")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-aug", help="back-translation + AugMix copies of the train split")
    _common(p)
    _noise_flags(p)
    p.add_argument("--n", type=int, default=10000)
    p.set_defaults(func=cmd_gen_aug)

    p = sub.add_parser("report", help="re-render a saved grid/suite JSON")
    _common(p)
    p.add_argument("input", help="grid.json or suite.json from an earlier run")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        args.func(args, cfg)
    except UsageError as exc:
        print(f"memerobust: {exc}", file=sys.stderr)
        return 1
    except (RemoteError, ParaphraseError) as exc:
        print(f"memerobust: remote error: {exc}", file=sys.stderr)
        return 3
    except (DatasetError, HarnessError, MetricError, NotTrainedError, OSError, ValueError) as exc:
        print(f"memerobust: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
