"""Command-line harness: train | explain | attack | eval | theory | sweep.

Every run resolves its configuration from built-in defaults, an optional
flat key=value config file, and command-line flags (flags override file
values), validates it up front collecting every problem, writes the fully
resolved copy next to the outputs, and embeds its sha256 digest in each
emitted CSV.  Environment variables are never consulted.  On failure a
machine-readable errors.json is written and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import explain, harness, io, metrics, nn, theory, train
from .attack import TopKFoolConfig, topk_fooling


class ConfigError(Exception):
    """Carries the complete list of validation problems."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


EXPERIMENT_KINDS = (
    "train",
    "explain",
    "attack",
    "eval-retrieval",
    "eval-fidelity",
    "eval-similarity",
    "theory-check",
    "class-sweep",
)

# Defaults for every config key, by kind.  Values are strings; the empty
# string means "unset".
_COMMON_DEFAULTS = {"out": "", "seed": "0", "dataset": "", "model": ""}

_DEFAULTS: dict[str, dict[str, str]] = {
    "train": {
        **_COMMON_DEFAULTS,
        "synthetic.classes": "4",
        "synthetic.per_class": "60",
        "synthetic.side": "8",
        "synthetic.margin": "0.35",
        "arch.hidden": "32,16",
        "arch.activation": "relu",
        "train.steps": "800",
        "train.batch_size": "32",
        "train.learning_rate": "0.1",
        "train.adversarial": "false",
        "train.adv_epsilon": "0.1",
        "train.adv_iterations": "10",
    },
    "explain": {
        **_COMMON_DEFAULTS,
        "explain.method": "relex",
        "explain.count": "8",
        "explain.pgm": "false",
        "relex.batch_size": "100",
        "relex.sigma_fraction": "0.1",
        "relex.lambda1": "0.0001",
        "relex.lambda2": "1.0",
        "relex.epochs": "50",
        "relex.learning_rate": "0.001",
        "relex.normalize_gradient": "true",
        "smoothgrad.n": "50",
        "smoothgrad.sigma_fraction": "0.1",
        "intgrad.steps": "32",
    },
    "attack": {
        **_COMMON_DEFAULTS,
        "attack.kind": "pgd",
        "attack.eps": "0.1",
        "attack.iterations": "40",
        "attack.step_size": "auto",
        "attack.count": "32",
        "topk.k": "6",
        "topk.explainer": "simgrad",
        "topk.iterations": "40",
        "topk.fd_step": "0.001",
    },
    "eval-retrieval": {},
    "eval-fidelity": {},
    "eval-similarity": {},
    "theory-check": {
        **_COMMON_DEFAULTS,
        "theory.instances": "200",
        "theory.alpha_scale": "0.01",
        "theory.tau": "auto",
        "theory.radius_instances": "5",
    },
    "class-sweep": {
        **_COMMON_DEFAULTS,
        "sweep.count": "30",
        "sweep.margin": "0.35",
        "sweep.per_image": "2",
        "sweep.eps": "",
        "relex.lambda1": "0.05",
        "relex.learning_rate": "0.1",
        "relex.epochs": "50",
        "relex.batch_size": "100",
    },
}

_EVAL_DEFAULTS = {
    **_COMMON_DEFAULTS,
    "eval.methods": "relex,simgrad,smoothgrad,intgrad",
    "eval.eps": "",  # empty -> desk grid
    "eval.count": "100",
    "eval.sample_every": "1",
    "eval.topk_fraction": "0.1",
    "eval.attack_iterations": "40",
    "adv_set": "",
    "relex.batch_size": "100",
    "relex.sigma_fraction": "0.1",
    "relex.lambda1": "0.05",
    "relex.lambda2": "1.0",
    "relex.epochs": "50",
    "relex.learning_rate": "0.1",
    "relex.normalize_gradient": "true",
    "smoothgrad.n": "50",
    "smoothgrad.sigma_fraction": "0.1",
    "intgrad.steps": "32",
}
for _kind in ("eval-retrieval", "eval-fidelity", "eval-similarity"):
    _DEFAULTS[_kind] = dict(_EVAL_DEFAULTS)


def parse_config_file(path) -> dict[str, str]:
    """Flat key = value document; '#' starts a comment, blank lines skipped."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"{path}:{lineno}: expected 'key = value', got {raw!r}"])
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


class ExperimentConfig:
    """Fully resolved experiment settings: one kind plus string values."""

    def __init__(self, kind: str, values: dict[str, str]):
        self.kind = kind
        self.values = dict(values)

    def text(self) -> str:
        lines = [f"kind = {self.kind}"]
        lines += [f"{k} = {self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return harness.config_digest_of(self.text())

    # typed accessors -----------------------------------------------------
    def str_(self, key: str) -> str:
        return self.values[key]

    def int_(self, key: str) -> int:
        return int(self.values[key])

    def float_(self, key: str) -> float:
        return float(self.values[key])

    def bool_(self, key: str) -> bool:
        return self.values[key].lower() in ("1", "true", "yes", "on")

    def floats(self, key: str) -> list[float]:
        text = self.values[key]
        return [float(t) for t in text.split(",") if t.strip()] if text else []

    def strs(self, key: str) -> list[str]:
        text = self.values[key]
        return [t.strip() for t in text.split(",") if t.strip()] if text else []


def resolve_config(kind: str, file_path: str | None, flag_values: dict[str, str]) -> ExperimentConfig:
    """Merge defaults <- config file <- flags; collect every problem."""
    errors: list[str] = []
    defaults = _DEFAULTS[kind]
    values = dict(defaults)
    if file_path:
        if not Path(file_path).exists():
            raise ConfigError([f"config file not found: {file_path}"])
        file_values = parse_config_file(file_path)
        file_kind = file_values.pop("kind", None)
        if file_kind is not None and file_kind != kind:
            errors.append(
                f"experiment kind conflict: config file {file_path} says {file_kind!r} "
                f"but the command line says {kind!r}"
            )
        unknown = sorted(set(file_values) - set(defaults))
        if unknown:
            errors.append(f"unknown config keys for {kind}: {', '.join(unknown)}")
        for key, value in file_values.items():
            if key in defaults:
                values[key] = value
    for key, value in flag_values.items():
        if value is not None:
            values[key] = str(value)

    # referenced files must resolve before execution
    for key in ("dataset", "model"):
        if key in values and values[key] and not Path(values[key]).exists():
            errors.append(f"{key} file not found: {values[key]}")
    for path in values.get("adv_set", "").split(","):
        path = path.strip()
        if path and not Path(path).exists():
            errors.append(f"adv_set file not found: {path}")
    if not values.get("out"):
        errors.append("no output directory given (--out or 'out' in the config file)")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(kind, values)


def _prepare_out(cfg: ExperimentConfig) -> tuple[Path, str]:
    out = Path(cfg.str_("out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved-config.txt").write_text(cfg.text())
    return out, cfg.digest()


def _relex_overrides(cfg: ExperimentConfig) -> dict:
    return {
        "batch_size": cfg.int_("relex.batch_size"),
        "sigma_fraction": cfg.float_("relex.sigma_fraction"),
        "lambda1": cfg.float_("relex.lambda1"),
        "lambda2": cfg.float_("relex.lambda2"),
        "epochs": cfg.int_("relex.epochs"),
        "learning_rate": cfg.float_("relex.learning_rate"),
        "normalize_gradient": cfg.bool_("relex.normalize_gradient"),
    }


def _explainer_params(cfg: ExperimentConfig) -> dict:
    # explainer_map only reads the keys relevant to the chosen method
    return {
        "n": cfg.int_("smoothgrad.n"),
        "sigma_fraction": cfg.float_("smoothgrad.sigma_fraction"),
        "steps": cfg.int_("intgrad.steps"),
    }


def _load_eval_inputs(cfg: ExperimentConfig, count_key: str):
    dataset = io.load_dataset(cfg.str_("dataset"))
    count = cfg.int_(count_key)
    count = min(count, len(dataset)) if count >= 0 else len(dataset)
    return dataset.images[:count], dataset.labels[:count], dataset


# ---------------------------------------------------------------------------
# Subcommand runners.  Each takes a resolved config and returns artifacts.
# ---------------------------------------------------------------------------


def run_train(cfg: ExperimentConfig) -> None:
    out, digest = _prepare_out(cfg)
    if cfg.str_("dataset"):
        dataset = io.load_dataset(cfg.str_("dataset"))
    else:
        dataset = io.generate_synthetic(
            cfg.int_("synthetic.classes"),
            cfg.int_("synthetic.per_class"),
            cfg.int_("synthetic.side"),
            cfg.float_("synthetic.margin"),
            seed=cfg.int_("seed"),
        )
        io.save_dataset(dataset, out / "dataset.relex")
    side_shape = dataset.images.shape[1:]
    classes = int(dataset.labels.max()) + 1 if len(dataset) else cfg.int_("synthetic.classes")
    hidden = [int(h) for h in cfg.strs("arch.hidden")]
    arch = nn.mlp(side_shape, hidden, classes, seed=cfg.int_("seed"), activation=cfg.str_("arch.activation"))
    tcfg = train.TrainConfig(
        steps=cfg.int_("train.steps"),
        batch_size=cfg.int_("train.batch_size"),
        learning_rate=cfg.float_("train.learning_rate"),
        seed=cfg.int_("seed"),
        adversarial=cfg.bool_("train.adversarial"),
        adv_epsilon=cfg.float_("train.adv_epsilon"),
        adv_iterations=cfg.int_("train.adv_iterations"),
    )
    result = train.train_classifier(dataset, arch, tcfg)
    io.save_model(result.model, out / "model.relex")
    with open(out / "train-report.csv", "w") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("train_accuracy,final_loss,steps\n")
        fh.write(f"{result.train_accuracy!r},{result.loss_trace[-1]!r},{tcfg.steps}\n")


def run_explain(cfg: ExperimentConfig) -> None:
    out, digest = _prepare_out(cfg)
    model = io.load_model(cfg.str_("model"))
    images, labels, _ = _load_eval_inputs(cfg, "explain.count")
    method = cfg.str_("explain.method")
    if method not in harness.METHOD_NAMES:
        raise ConfigError([f"unknown method {method!r}; expected one of {harness.METHOD_NAMES}"])
    rows = []
    for i in range(len(images)):
        target = int(labels[i])
        mask = harness.compute_map(
            model,
            images[i],
            target,
            method,
            harness.derived_seed(cfg.int_("seed"), 2, 0, i),
            _relex_overrides(cfg),
            _explainer_params(cfg),
        )
        io.save_saliency(mask, out / f"saliency-{i:04d}.relex", method=method, config_digest=digest)
        if cfg.bool_("explain.pgm"):
            preview = mask if mask.ndim == 2 else mask.reshape(mask.shape[-2:])
            io.write_pgm(preview, out / f"saliency-{i:04d}.pgm")
        score = float(nn.forward(model, mask * images[i])[target])
        rows.append((i, target, float(np.abs(mask).sum()), score))
    with open(out / "explain-report.csv", "w") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("index,target,saliency_l1,masked_target_score\n")
        for i, target, l1, score in rows:
            fh.write(f"{i},{target},{l1!r},{score!r}\n")


def run_attack(cfg: ExperimentConfig) -> None:
    out, digest = _prepare_out(cfg)
    model = io.load_model(cfg.str_("model"))
    images, labels, dataset = _load_eval_inputs(cfg, "attack.count")
    kind = cfg.str_("attack.kind")
    seed = cfg.int_("seed")
    if kind == "pgd":
        iterations = cfg.int_("attack.iterations")
        rows = []
        for ei, eps in enumerate(cfg.floats("attack.eps")):
            step = (
                harness.pgd_step_size(eps, iterations)
                if cfg.str_("attack.step_size") == "auto"
                else cfg.float_("attack.step_size")
            )
            adv = harness.make_adversaries(
                model, images, labels, eps, iterations,
                seed=harness.derived_seed(seed, 1, ei), clamp_range=dataset.value_range,
            )
            flip = float(np.mean(np.argmax(nn.forward(model, adv), axis=1) != labels)) if len(adv) else float("nan")
            manifest = {
                "attack": "pgd-untargeted",
                "eps": repr(float(eps)),
                "step_size": repr(float(step)),
                "iterations": str(iterations),
                "seed": str(seed),
                "source_digest": dataset.provenance.get("kind", "unknown"),
                "config_digest": digest,
            }
            io.save_adv_set(out / f"adv-eps{eps:.6f}.relex", adv, manifest)
            rows.append((eps, step, flip))
        with open(out / "attack-report.csv", "w") as fh:
            fh.write(f"# config_digest={digest}\n")
            fh.write("eps,step_size,label_flip_rate\n")
            for eps, step, flip in rows:
                fh.write(f"{eps!r},{step!r},{flip!r}\n")
    elif kind == "topk":
        tcfg = TopKFoolConfig(
            k=cfg.int_("topk.k"),
            iterations=cfg.int_("topk.iterations"),
            epsilon=cfg.floats("attack.eps")[0] if cfg.floats("attack.eps") else 0.1,
            step_size=0.01 if cfg.str_("attack.step_size") == "auto" else cfg.float_("attack.step_size"),
            fd_step=cfg.float_("topk.fd_step"),
            seed=seed,
            clamp_range=dataset.value_range,
        )
        adv = np.empty_like(images)
        rows = []
        for i in range(len(images)):
            result = topk_fooling(model, cfg.str_("topk.explainer"), images[i], tcfg)
            adv[i] = result.x_adv
            rows.append((i, result.mass_before, result.mass_after, result.accepted_steps, result.rejected_steps))
        manifest = {
            "attack": "topk-fooling",
            "explainer": cfg.str_("topk.explainer"),
            "k": str(tcfg.k),
            "eps": repr(tcfg.epsilon),
            "iterations": str(tcfg.iterations),
            "seed": str(seed),
            "config_digest": digest,
        }
        io.save_adv_set(out / "adv-topk.relex", adv, manifest)
        with open(out / "attack-report.csv", "w") as fh:
            fh.write(f"# config_digest={digest}\n")
            fh.write("index,topk_mass_before,topk_mass_after,accepted,rejected\n")
            for row in rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    else:
        raise ConfigError([f"unknown attack kind {kind!r}; expected pgd or topk"])


def run_eval(cfg: ExperimentConfig) -> None:
    out, digest = _prepare_out(cfg)
    model = io.load_model(cfg.str_("model"))
    images, labels, dataset = _load_eval_inputs(cfg, "eval.count")
    methods = tuple(cfg.strs("eval.methods"))
    for m in methods:
        if m not in harness.METHOD_NAMES:
            raise ConfigError([f"unknown method {m!r}; expected one of {harness.METHOD_NAMES}"])
    adversaries: dict[float, np.ndarray] = {}
    eps_grid = cfg.floats("eval.eps")
    for path in cfg.strs("adv_set"):
        adv, manifest = io.load_adv_set(path)
        if len(adv) < len(images):
            raise ConfigError(
                [f"adversarial set {path} has {len(adv)} samples but {len(images)} are evaluated"]
            )
        eps = float(manifest["eps"])
        adversaries[eps] = adv[: len(images)]
        if eps not in eps_grid:
            eps_grid.append(eps)
    if not eps_grid:
        eps_grid = list(harness.desk_eps_grid())
    results = harness.evaluate_methods(
        model,
        images,
        labels,
        eps_grid,
        methods=methods,
        seed=cfg.int_("seed"),
        attack_iterations=cfg.int_("eval.attack_iterations"),
        relex_overrides=_relex_overrides(cfg),
        explainer_params=_explainer_params(cfg),
        topk_fraction=cfg.float_("eval.topk_fraction"),
        sample_every=cfg.int_("eval.sample_every"),
        clamp_range=dataset.value_range,
        config_digest=digest,
        adversaries=adversaries,
    )
    if results.reports:
        for (method, eps), report in sorted(results.reports.items()):
            report.to_csv(out / f"metrics-{method}-eps{eps:.6f}.csv")
    else:  # empty evaluation set: header-only artifacts
        for method in methods:
            for eps in [0.0] + list(eps_grid):
                metrics.MetricReport([], digest).to_csv(out / f"metrics-{method}-eps{eps:.6f}.csv")
    harness.write_retrieval_csv(results, out / "retrieval-vs-eps.csv", digest)
    harness.write_l1_csv(results, out / "l1-vs-eps.csv", digest)
    harness.write_relevance_csv(results, out / "relevance-vs-eps.csv", digest)
    harness.write_similarity_csv(results, out / "similarity-vs-eps.csv", digest)


def run_theory(cfg: ExperimentConfig) -> None:
    out, digest = _prepare_out(cfg)
    model = io.load_model(cfg.str_("model"))
    dataset = io.load_dataset(cfg.str_("dataset"))
    tau = None if cfg.str_("theory.tau") == "auto" else cfg.float_("theory.tau")
    t1, t2 = harness.theory_experiment(
        model,
        dataset.images,
        dataset.labels,
        instances=cfg.int_("theory.instances"),
        seed=cfg.int_("seed"),
        alpha_scale=cfg.float_("theory.alpha_scale"),
        tau=tau,
    )
    theory.write_bound_reports(t1, out / "bounds-label-consistency.csv", digest)
    theory.write_bound_reports(t2, out / "bounds-saliency-consistency.csv", digest)
    # brute-force radius on a few instances, uniform random masks
    rows = []
    rng = np.random.default_rng(harness.derived_seed(cfg.int_("seed"), 7))
    tau_val = theory.default_tau(model.class_count) if tau is None else tau
    grid = np.linspace(0.05, 1.0, 20)
    for j in range(min(cfg.int_("theory.radius_instances"), len(dataset))):
        x0 = dataset.images[j]
        m = rng.uniform(0.5, 1.0, x0.shape)
        if nn.masked_loss(model, x0, m, int(dataset.labels[j])) > tau_val:
            continue
        res = theory.robustness_radius_bruteforce(
            model, x0, m, tau_val, int(dataset.labels[j]), grid,
            directions=128, seed=harness.derived_seed(cfg.int_("seed"), 8, j),
        )
        rows.append((j, res.radius, res.violation_found))
    with open(out / "radius-report.csv", "w") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("index,radius,violation_found\n")
        for j, radius, found in rows:
            fh.write(f"{j},{radius!r},{int(found)}\n")


def run_sweep(cfg: ExperimentConfig) -> None:
    out, digest = _prepare_out(cfg)
    model = io.load_model(cfg.str_("model"))
    side = model.input_shape[-1]
    images, evidence = io.generate_composites(
        model.class_count,
        cfg.int_("sweep.count"),
        side,
        margin=cfg.float_("sweep.margin"),
        seed=cfg.int_("seed"),
        per_image=cfg.int_("sweep.per_image"),
    )
    overrides = {
        "lambda1": cfg.float_("relex.lambda1"),
        "learning_rate": cfg.float_("relex.learning_rate"),
        "epochs": cfg.int_("relex.epochs"),
        "batch_size": cfg.int_("relex.batch_size"),
    }
    clean = harness.class_sweep(model, images, evidence, seed=cfg.int_("seed"), relex_overrides=overrides)
    harness.write_sweep_csv(clean, out / "sweep-clean.csv", digest)
    if cfg.str_("sweep.eps"):
        adv = harness.class_sweep(
            model, images, evidence, seed=cfg.int_("seed"), relex_overrides=overrides,
            eps=cfg.float_("sweep.eps"),
        )
        harness.write_sweep_csv(adv, out / "sweep-adversarial.csv", digest)


_RUNNERS = {
    "train": run_train,
    "explain": run_explain,
    "attack": run_attack,
    "eval-retrieval": run_eval,
    "eval-fidelity": run_eval,
    "eval-similarity": run_eval,
    "theory-check": run_theory,
    "class-sweep": run_sweep,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="experiment seed (all randomness derives from it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relex",
        description="Learn robust saliency-map explanations and evaluate them against white-box attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a desk-scale classifier (optionally PGD-adversarially)")
    _add_common(p)
    p.add_argument("--dataset", help="dataset container (omit to generate synthetic stripes)")
    p.add_argument("--classes", dest="synthetic.classes", type=int, help="synthetic: class count")
    p.add_argument("--per-class", dest="synthetic.per_class", type=int, help="synthetic: images per class")
    p.add_argument("--side", dest="synthetic.side", type=int, help="synthetic: image side length")
    p.add_argument("--margin", dest="synthetic.margin", type=float, help="synthetic: stripe amplitude margin")
    p.add_argument("--hidden", dest="arch.hidden", help="hidden layer sizes, e.g. 32,16")
    p.add_argument("--activation", dest="arch.activation", help="relu | softplus[:beta]")
    p.add_argument("--steps", dest="train.steps", type=int, help="SGD steps")
    p.add_argument("--batch-size", dest="train.batch_size", type=int)
    p.add_argument("--learning-rate", dest="train.learning_rate", type=float)
    p.add_argument("--adversarial", dest="train.adversarial", action="store_const", const="true",
                   help="replace each minibatch by PGD adversaries")
    p.add_argument("--adv-epsilon", dest="train.adv_epsilon", type=float)

    p = sub.add_parser("explain", help="compute saliency maps for dataset inputs")
    _add_common(p)
    p.add_argument("--model", help="model container")
    p.add_argument("--dataset", help="dataset container")
    p.add_argument("--method", dest="explain.method",
                   help="relex | relex-nobatch | relex-50 | relex-100 | simgrad | smoothgrad | intgrad")
    p.add_argument("--count", dest="explain.count", type=int, help="number of inputs to explain")
    p.add_argument("--pgm", dest="explain.pgm", action="store_const", const="true",
                   help="also write 8-bit PGM previews")
    p.add_argument("--epochs", dest="relex.epochs", type=int)
    p.add_argument("--batch-size", dest="relex.batch_size", type=int)
    p.add_argument("--sigma-fraction", dest="relex.sigma_fraction", type=float)
    p.add_argument("--lambda1", dest="relex.lambda1", type=float)
    p.add_argument("--lambda2", dest="relex.lambda2", type=float)
    p.add_argument("--learning-rate", dest="relex.learning_rate", type=float)
    p.add_argument("--smoothgrad-n", dest="smoothgrad.n", type=int)
    p.add_argument("--intgrad-steps", dest="intgrad.steps", type=int)

    p = sub.add_parser("attack", help="craft adversarial examples (PGD or top-k saliency fooling)")
    _add_common(p)
    p.add_argument("--model", help="model container")
    p.add_argument("--dataset", help="dataset container")
    p.add_argument("--kind", dest="attack.kind", help="pgd | topk")
    p.add_argument("--eps", dest="attack.eps", help="comma-separated L-inf budgets")
    p.add_argument("--iterations", dest="attack.iterations", type=int)
    p.add_argument("--step-size", dest="attack.step_size", help="number or 'auto' (max(0.01, 2.5*eps/T))")
    p.add_argument("--count", dest="attack.count", type=int, help="number of inputs to attack")
    p.add_argument("--topk-k", dest="topk.k", type=int)
    p.add_argument("--topk-explainer", dest="topk.explainer")
    p.add_argument("--topk-iterations", dest="topk.iterations", type=int)

    p = sub.add_parser("eval", help="run the metric evaluation over an epsilon grid or saved adversarial sets")
    _add_common(p)
    p.add_argument("--mode", choices=("retrieval", "fidelity", "similarity"), default="retrieval",
                   help="experiment kind (artifacts are shared; the mode names the run)")
    p.add_argument("--model", help="model container")
    p.add_argument("--dataset", help="dataset container")
    p.add_argument("--methods", dest="eval.methods", help="comma-separated method names")
    p.add_argument("--eps", dest="eval.eps", help="comma-separated budgets (empty: desk grid)")
    p.add_argument("--count", dest="eval.count", type=int, help="number of evaluation inputs")
    p.add_argument("--adv-set", dest="adv_set", help="comma-separated adversarial-set containers")
    p.add_argument("--sample-every", dest="eval.sample_every", type=int,
                   help="flip-curve stride (1 = every pixel)")
    p.add_argument("--attack-iterations", dest="eval.attack_iterations", type=int)
    p.add_argument("--lambda1", dest="relex.lambda1", type=float)
    p.add_argument("--learning-rate", dest="relex.learning_rate", type=float)
    p.add_argument("--epochs", dest="relex.epochs", type=int)

    p = sub.add_parser("theory", help="numerically verify the consistency bounds on a model/dataset")
    _add_common(p)
    p.add_argument("--model", help="model container")
    p.add_argument("--dataset", help="dataset container")
    p.add_argument("--instances", dest="theory.instances", type=int)
    p.add_argument("--alpha-scale", dest="theory.alpha_scale", type=float)
    p.add_argument("--tau", dest="theory.tau", help="threshold or 'auto' (-log(1/classes))")

    p = sub.add_parser("sweep", help="class-conditioned explanation sweep on composite inputs")
    _add_common(p)
    p.add_argument("--model", help="model container")
    p.add_argument("--count", dest="sweep.count", type=int, help="number of composite inputs")
    p.add_argument("--margin", dest="sweep.margin", type=float)
    p.add_argument("--eps", dest="sweep.eps", help="also sweep PGD adversaries at this budget")
    p.add_argument("--lambda1", dest="relex.lambda1", type=float)
    p.add_argument("--learning-rate", dest="relex.learning_rate", type=float)
    p.add_argument("--epochs", dest="relex.epochs", type=int)

    return parser


_COMMAND_KINDS = {
    "train": "train",
    "explain": "explain",
    "attack": "attack",
    "theory": "theory-check",
    "sweep": "class-sweep",
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    if command == "eval":
        kind = f"eval-{args.mode}"
    else:
        kind = _COMMAND_KINDS[command]
    flag_values = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "config", "mode") and value is not None
    }
    out_hint = flag_values.get("out")
    try:
        cfg = resolve_config(kind, args.config, flag_values)
    except ConfigError as err:
        _emit_errors(out_hint, "validate", err.errors)
        return 2
    try:
        _RUNNERS[kind](cfg)
    except ConfigError as err:
        _emit_errors(cfg.str_("out"), "validate", err.errors)
        return 2
    except Exception as err:  # noqa: BLE001 - surfaced in the error log
        _emit_errors(cfg.str_("out"), "run", [f"{type(err).__name__}: {err}"])
        return 1
    return 0


def _emit_errors(out: str | None, stage: str, errors: list[str]) -> None:
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if out:
        try:
            path = Path(out)
            path.mkdir(parents=True, exist_ok=True)
            (path / "errors.json").write_text(
                json.dumps([{"stage": stage, "error": e} for e in errors], indent=2) + "\n"
            )
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
