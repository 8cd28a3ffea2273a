"""Command-line laboratory: train encoders, probe them, certify the bounds.

Subcommands: train, probe, verify {lemma1|thm3|rate|lemma4|oracle},
gradcheck, gen-data.  Every run writes CSV and JSON artifacts plus a
``report.json`` embedding the resolved config hash and seed, so any number
in any artifact is re-derivable.  Artifacts are byte-identical across
re-runs with the same config and seed; wall-clock metrics are therefore
written as 0 unless ``--timings`` is given.

Exit codes: 0 = success / all certificates pass, 1 = a certificate or
check failed, 2 = invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autograd import LossSpec, finite_diff_check
from .config import SCHEMA_VERSION, config_hash, render_value, resolve
from .encoder import EncoderParams, ViewBatch, encoder_forward, init_params
from .errors import ConfigError, ContrastLabError, NegativeDenominator
from .evaluation import lemma4_chain_check
from .geometry import unit_rows
from .rng import substream
from .training import TrainConfig, load_checkpoint, save_checkpoint, train
from .verification import (
    BoundCertificate,
    SweepSpec,
    lemma1_certificate,
    oracle_certificate,
    rate_fit,
    theorem3_certificate,
)
from .worldmodel import (
    DiscreteClassMixture,
    load_mixture,
    preset_mixture,
    preset_sphere,
    random_mixture,
    save_mixture,
)

VERIFY_CHECKS = ("lemma1", "thm3", "rate", "lemma4", "oracle")

TRAIN_LOG_HEADER = ("epoch", "loss", "wall_ms")
PROBE_HEADER = ("seed", "loss_kind", "tau_plus", "accuracy")
GRADCHECK_HEADER = ("case", "loss_kind", "tau_plus", "floor_mode", "step",
                    "max_rel_err", "excluded")


@dataclass
class RunReport:
    """Everything one command run produced."""

    command: str
    config: dict
    out_dir: Path
    timings: bool = False
    artifacts: list[str] = field(default_factory=list)
    certificates: list[dict] = field(default_factory=list)
    failures: int = 0
    started: float = field(default_factory=time.time)

    @property
    def hash(self) -> str:
        return config_hash(self.config)

    def csv(self, name: str, header: tuple[str, ...], rows: list[tuple]) -> Path:
        path = self.out_dir / name
        lines = [",".join(header)]
        lines += [",".join(_render_cell(v) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.artifacts.append(name)
        return path

    def json(self, name: str, payload) -> Path:
        path = self.out_dir / name
        path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n",
                        encoding="utf-8")
        self.artifacts.append(name)
        return path

    def add_certificate(self, record: dict) -> None:
        self.certificates.append(record)
        if not record.get("passed", True) and not record.get("skipped", False):
            self.failures += 1

    def finish(self) -> int:
        payload = {
            "format_version": SCHEMA_VERSION,
            "command": self.command,
            "config": {k: render_value(v) for k, v in sorted(self.config.items())},
            "config_hash": self.hash,
            "seed": self.config.get("seed"),
            "artifacts": sorted(self.artifacts),
            "certificates_total": len(self.certificates),
            "certificates_failed": self.failures,
            "passed": self.failures == 0,
        }
        if self.timings:
            payload["elapsed_seconds"] = time.time() - self.started
        path = self.out_dir / "report.json"
        path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n",
                        encoding="utf-8")
        for name in self.artifacts:
            assert (self.out_dir / name).exists()
        return 1 if self.failures else 0


def _render_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _child_seed(seed: int, *path: int) -> int:
    """Independent integer seed for a sub-experiment."""
    return int(substream(seed, *path).integers(2 ** 62))


def _build_world(cfg: dict):
    if cfg["world"] == "sphere":
        return preset_sphere(cfg["preset"])
    if cfg["world"] == "discrete":
        if cfg["mixture_file"]:
            return load_mixture(cfg["mixture_file"])
        if cfg["preset"]:
            return preset_mixture(cfg["preset"])
        raise ConfigError("world = discrete needs key 'mixture_file' or 'preset'")
    raise ConfigError(f"unknown world {cfg['world']!r}; expected sphere | discrete")


def _representations(params: EncoderParams, features: np.ndarray) -> np.ndarray:
    z, _ = encoder_forward(params, features)
    return unit_rows(z)


def _eval_accuracy(params: EncoderParams, train_cfg, world, cfg: dict) -> float:
    """Linear-probe accuracy of the frozen encoder, per the config's protocol."""
    from .experiments import direction_probe_accuracy

    return direction_probe_accuracy(
        params, train_cfg, world,
        probe_fit="dataset" if cfg["probe_on_dataset"] else "fresh",
        fit_size=cfg["eval_train_size"], replicas=cfg["eval_replicas"],
        test_size=cfg["eval_test_size"])


def cmd_train(cfg: dict, report: RunReport) -> int:
    world = _build_world(cfg)
    seeds = cfg["seeds"] or (cfg["seed"],)
    probe_rows = []
    for kind in cfg["loss_kinds"]:
        for tau in cfg["tau_plus"]:
            for run_seed in seeds:
                train_cfg = TrainConfig(
                    loss_kind=kind, tau_plus=tau, temperature=cfg["temperature"],
                    m_positives=cfg["m_positives"], floor_mode=cfg["floor_mode"],
                    batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                    learning_rate=cfg["learning_rate"], optimizer=cfg["optimizer"],
                    seed=run_seed, dataset_size=cfg["dataset_size"],
                    embed_dim=cfg["embed_dim"], hidden_dim=cfg["hidden_dim"],
                    anchor_mode=cfg["anchor_mode"], view_noise=cfg["view_noise"],
                    class_resample_prob=cfg["class_resample_prob"],
                    tail_average=cfg["tail_average"],
                )
                params, log = train(train_cfg, world)
                tag = f"{kind}_tau{tau:g}_seed{run_seed}"
                rows = [(rec.epoch, rec.loss, rec.wall_ms if report.timings else 0)
                        for rec in log]
                report.csv(f"train_log_{tag}.csv", TRAIN_LOG_HEADER, rows)
                ckpt = report.out_dir / f"checkpoint_{tag}.json"
                save_checkpoint(ckpt, params, report.hash,
                                meta={"loss_kind": kind, "tau_plus": tau, "seed": run_seed})
                report.artifacts.append(ckpt.name)
                accuracy = _eval_accuracy(params, train_cfg, world, cfg)
                probe_rows.append((run_seed, kind, float(tau), accuracy))
                print(f"train {tag}: final_loss={log[-1].loss:.6f} accuracy={accuracy:.4f}")
    report.csv("probe.csv", PROBE_HEADER, probe_rows)
    return report.finish()


def cmd_probe(cfg: dict, report: RunReport) -> int:
    if not cfg["checkpoint"]:
        raise ConfigError("probe needs key 'checkpoint'")
    world = _build_world(cfg)
    params, _ = load_checkpoint(cfg["checkpoint"])
    probe_cfg = TrainConfig(seed=cfg["seed"])
    accuracy = _eval_accuracy(params, probe_cfg, world,
                              cfg | {"probe_on_dataset": False})
    report.csv("probe.csv", PROBE_HEADER,
               [(cfg["seed"], cfg["loss_kind"], cfg["tau_plus"], accuracy)])
    print(f"probe: accuracy={accuracy:.4f}")
    return report.finish()


def _random_instance(seed: int, *, s_points: int, k_classes: int, embed_dim: int,
                     path: tuple[int, ...]) -> tuple[np.ndarray, DiscreteClassMixture]:
    rng = substream(seed, *path)
    mix = random_mixture(rng, s_points, k_classes)
    emb = unit_rows(rng.standard_normal((s_points, embed_dim)))
    return emb, mix


def _corrupt(cert: BoundCertificate, scale: float) -> BoundCertificate:
    if scale == 1.0:
        return cert
    rhs = cert.rhs * scale
    passed = cert.lhs <= rhs + cert.slack
    return replace(cert, rhs=rhs, passed=passed)


def cmd_verify(check: str, cfg: dict, report: RunReport) -> int:
    seed = cfg["seed"]
    scale = cfg.get("corrupt_rhs_scale", 1.0)

    if check == "lemma1":
        for inst in range(cfg["instances"]):
            emb, mix = _random_instance(seed, s_points=cfg["s_points"],
                                        k_classes=cfg["k_classes"],
                                        embed_dim=cfg["embed_dim"], path=(20, inst))
            for j, n_neg in enumerate(cfg["n_list"]):
                cert = lemma1_certificate(emb, mix, n_neg, cfg["trials"],
                                          _child_seed(seed, 21, inst, j))
                cert = _corrupt(cert, scale)
                cert.meta["instance"] = inst
                report.add_certificate(cert.to_record())
        report.json("certificates.json", report.certificates)

    elif check == "thm3":
        for inst in range(cfg["instances"]):
            emb, mix = _random_instance(seed, s_points=cfg["s_points"],
                                        k_classes=cfg["k_classes"],
                                        embed_dim=cfg["embed_dim"], path=(30, inst))
            for a, tau in enumerate(cfg["tau_list"]):
                for b, n_neg in enumerate(cfg["n_grid"]):
                    for c, m_pos in enumerate(cfg["m_grid"]):
                        try:
                            cert = theorem3_certificate(
                                emb, mix, n_neg, m_pos, tau, cfg["trials"],
                                _child_seed(seed, 31, inst, a, b, c))
                        except NegativeDenominator as exc:
                            report.add_certificate({
                                "check": "thm3", "skipped": True, "reason": str(exc),
                                "meta": {"instance": inst, "tau_plus": tau,
                                         "n_neg": n_neg, "m_pos": m_pos},
                            })
                            continue
                        cert = _corrupt(cert, scale)
                        cert.meta["instance"] = inst
                        report.add_certificate(cert.to_record())
        report.json("certificates.json", report.certificates)

    elif check == "rate":
        emb, mix = _random_instance(seed, s_points=cfg["s_points"],
                                    k_classes=cfg["k_classes"],
                                    embed_dim=cfg["embed_dim"], path=(40,))
        tau = None if cfg["tau_plus"] < 0 else cfg["tau_plus"]
        sweep = SweepSpec(variable=cfg["sweep_variable"], grid=cfg["sweep_grid"],
                          other=cfg["other_size"], tau_plus=tau)
        fit = rate_fit(emb, mix, sweep, cfg["trials"], _child_seed(seed, 41))
        record = fit.to_record()
        record["passed"] = bool(fit.status == "ok"
                                and cfg["slope_min"] <= fit.slope <= cfg["slope_max"]
                                and fit.r2 >= cfg["r2_min"])
        report.add_certificate(record)
        report.json("ratefit.json", record)
        print(f"rate: slope={fit.slope:.4f} r2={fit.r2:.4f} status={fit.status}")

    elif check == "lemma4":
        for mi in range(cfg["mixtures"]):
            k = cfg["k_list"][mi % len(cfg["k_list"])]
            rng = substream(seed, 50, mi)
            mix = random_mixture(rng, max(cfg["s_points"], k), k)
            for ei in range(cfg["embeddings"]):
                emb = unit_rows(substream(seed, 51, mi, ei)
                                .standard_normal((mix.n_points, cfg["embed_dim"])))
                for n_neg in range(k - 1, cfg["n_max_factor"] * k + 1):
                    cert = lemma4_chain_check(emb, mix, n_neg, include_probe=(ei == 0))
                    cert = _corrupt(cert, scale)
                    cert.meta.update({"mixture": mi, "embedding": ei})
                    report.add_certificate(cert.to_record())
        report.json("certificates.json", report.certificates)

    elif check == "oracle":
        for inst in range(cfg["instances"]):
            rng = substream(seed, 60, inst)
            k = int(rng.integers(2, 6))
            s_points = int(rng.integers(max(k, 4), cfg["s_max"] + 1))
            n_neg = int(rng.integers(1, cfg["n_max"] + 1))
            mix = random_mixture(rng, s_points, k)
            emb = unit_rows(rng.standard_normal((s_points, cfg["embed_dim"])))
            cert = oracle_certificate(emb, mix, n_neg, tolerance=cfg["tolerance"],
                                      budget=cfg["budget"])
            cert = _corrupt(cert, scale)
            cert.meta["instance"] = inst
            report.add_certificate(cert.to_record())
        report.json("certificates.json", report.certificates)

    else:
        raise ConfigError(f"unknown verify check {check!r}; expected one of {VERIFY_CHECKS}")

    passed = sum(1 for c in report.certificates if c.get("passed"))
    print(f"verify {check}: {passed}/{len(report.certificates)} certificates passed")
    return report.finish()


def cmd_gradcheck(cfg: dict, report: RunReport) -> int:
    kinds = ("biased", "debiased", "unbiased")
    floors = ("exp_floor", "zero_floor")
    taus = (0.0, 0.05, 0.1, 0.2)
    rows = []
    worst = 0.0
    for case in range(cfg["cases"]):
        rng = substream(cfg["seed"], 70, case)
        kind = kinds[case % len(kinds)]
        tau = 0.0 if kind == "biased" else taus[case % len(taus)]
        floor_mode = floors[case % len(floors)]
        b = int(rng.integers(2, 5))
        m = int(rng.integers(1, 4))
        d = int(rng.integers(2, 5))
        feat = int(rng.integers(3, 7))
        labels = np.concatenate(([0, 1], rng.integers(0, 3, size=b - 2)))
        batch = ViewBatch(features=rng.standard_normal(((m + 1) * b, feat)),
                          batch_size=b, m_positives=m, labels=labels)
        params = init_params(rng, feat, d)
        spec = LossSpec(kind=kind, tau_plus=tau, temperature=float(rng.uniform(0.2, 1.5)),
                        floor_mode=floor_mode)
        rep = finite_diff_check(params, batch, spec, step=cfg["step"])
        rows.append((case, kind, tau, floor_mode, rep.step, rep.max_rel_err,
                     len(rep.excluded)))
        worst = max(worst, rep.max_rel_err)
    report.csv("gradcheck.csv", GRADCHECK_HEADER, rows)
    failed = worst > cfg["tolerance"]
    report.add_certificate({"check": "gradcheck", "lhs": worst,
                            "rhs": cfg["tolerance"], "passed": not failed,
                            "meta": {"cases": cfg["cases"], "step": cfg["step"]}})
    print(f"gradcheck: worst max_rel_err={worst:.3e} over {cfg['cases']} cases")
    return report.finish()


def cmd_gen_data(cfg: dict, report: RunReport) -> int:
    if cfg["preset"]:
        mix = preset_mixture(cfg["preset"])
    else:
        mix = random_mixture(substream(cfg["seed"], 80), cfg["s_points"],
                             cfg["k_classes"], cfg["feature_dim"])
    path = report.out_dir / cfg["filename"]
    save_mixture(mix, path)
    report.artifacts.append(cfg["filename"])
    print(f"gen-data: wrote {path}")
    return report.finish()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contrastlab",
        description="Contrastive-loss laboratory: training, probing, bound certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "probe", "gradcheck", "gen-data"):
        sub.add_parser(name)
    verify = sub.add_parser("verify")
    verify.add_argument("check", choices=VERIFY_CHECKS)
    for _, p in sub.choices.items():
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default="contrastlab-out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override; repeatable, later wins")
        p.add_argument("--timings", action="store_true",
                       help="record wall-clock metrics (artifacts stop being byte-reproducible)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    schema_key = args.command if args.command != "verify" else f"verify.{args.check}"
    try:
        cfg = resolve(schema_key, args.config, args.set, args.seed)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        report = RunReport(command=schema_key, config=cfg, out_dir=out_dir,
                           timings=args.timings)
        if args.command == "train":
            return cmd_train(cfg, report)
        if args.command == "probe":
            return cmd_probe(cfg, report)
        if args.command == "verify":
            return cmd_verify(args.check, cfg, report)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, report)
        return cmd_gen_data(cfg, report)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ContrastLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
