"""Run configuration: dataclass defaults, flat key=value files, overrides.

Config files are flat text, one ``key=value`` per line with ``#`` comments.
The effective configuration of every run is echoed to config_effective.json;
that JSON is itself accepted wherever a config file is, so a run can be
reproduced from its own output directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from cnlgnn.errors import UsageError
from cnlgnn.intervention import CngConfig, PerturbConfig
from cnlgnn.synthetic import SyntheticSpec

ABLATION_TOKENS = ("cng", "eim", "group")


@dataclass(frozen=True)
class RunConfig:
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0
    folds: int = 5
    feature_noise_sigma: float = 0.1
    lambda_ctr: float = 0.5
    lambda_orth: float = 0.1
    lambda_mi: float = 0.1
    hidden_dim: int = 64
    eim_variant: str = "inner"
    early_stop_patience: int = 5
    f1_average: str = "macro"
    val_fraction: float = 0.1
    group_count_hint: int = 8
    ablation: str = ""  # comma-joined subset of {cng, eim, group}
    cng: CngConfig = field(default_factory=CngConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)

    def ablation_set(self) -> frozenset[str]:
        tokens = frozenset(t for t in self.ablation.split(",") if t)
        bad = tokens - set(ABLATION_TOKENS)
        if bad:
            raise UsageError(f"unknown ablation toggles {sorted(bad)}; valid: {ABLATION_TOKENS}")
        return tokens

    def validate(self) -> None:
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.folds < 2:
            raise UsageError("folds must be >= 2")
        if self.lr <= 0:
            raise UsageError("lr must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise UsageError("val_fraction must lie in (0, 1)")
        if self.eim_variant not in ("inner", "elementwise"):
            raise UsageError("eim_variant must be 'inner' or 'elementwise'")
        if self.f1_average not in ("macro", "micro"):
            raise UsageError("f1_average must be 'macro' or 'micro'")
        self.ablation_set()
        self.cng.validate()
        self.perturb.validate()


# flat key -> (section, attribute, documentation)
_KEYMAP: dict[str, tuple[str, str, str]] = {
    "epochs": ("run", "epochs", "training epochs per fold"),
    "lr": ("run", "lr", "Adam learning rate"),
    "seed": ("run", "seed", "root seed for all random streams"),
    "folds": ("run", "folds", "cross-validation fold count"),
    "feature_noise_sigma": ("run", "feature_noise_sigma", "train-time Gaussian feature noise"),
    "lambda_ctr": ("run", "lambda_ctr", "weight of the counterfactual consistency loss"),
    "lambda_orth": ("run", "lambda_orth", "weight of the orthogonality loss"),
    "lambda_mi": ("run", "lambda_mi", "weight of the mutual-information proxy loss"),
    "hidden_dim": ("run", "hidden_dim", "hidden width of the encoder and branches"),
    "eim_variant": ("run", "eim_variant", "edge scorer form: inner | elementwise"),
    "early_stop_patience": ("run", "early_stop_patience", "epochs without val-F1 gain before stopping"),
    "f1_average": ("run", "f1_average", "primary F1 flavour: macro | micro"),
    "val_fraction": ("run", "val_fraction", "share of training nodes held out for early stopping"),
    "group_count_hint": ("run", "group_count_hint", "upper bound on detected group count"),
    "ablation": ("run", "ablation", "comma list of disabled parts: cng,eim,group"),
    "cng.strategy": ("cng", "strategy", "counterfactual sampling: random | similar | dissimilar"),
    "cng.k": ("cng", "k", "counterfactual neighbours sampled per node"),
    "cng.candidate_pool": ("cng", "candidate_pool", "ranked pool size the k samples are drawn from"),
    "perturb.inter_group_drop_prob": ("perturb", "inter_group_drop_prob", "drop probability for inter-group edges"),
    "perturb.mask_drop_rate": ("perturb", "mask_drop_rate", "fraction of lowest-importance edges masked"),
    "perturb.edge_noise_sigma": ("perturb", "edge_noise_sigma", "sigma of train-time edge weight noise"),
    "synth.num_nodes": ("synth", "num_nodes", "synthetic benchmark node count"),
    "synth.num_groups": ("synth", "num_groups", "synthetic benchmark block count"),
    "synth.intra_edge_prob": ("synth", "intra_edge_prob", "edge probability inside a block"),
    "synth.inter_edge_prob": ("synth", "inter_edge_prob", "edge probability across blocks"),
    "synth.causal_dim": ("synth", "causal_dim", "width of the causal feature block"),
    "synth.spurious_dim": ("synth", "spurious_dim", "width of the spurious feature block"),
    "synth.noise_dim": ("synth", "noise_dim", "width of the distractor feature block"),
    "synth.spurious_train_corr": ("synth", "spurious_train_corr", "spurious/label agreement in the train split"),
    "synth.spurious_test_corr": ("synth", "spurious_test_corr", "spurious/label agreement in the test split"),
    "synth.seed": ("synth", "seed", "synthetic benchmark seed"),
}


@dataclass(frozen=True)
class FullConfig:
    run: RunConfig = field(default_factory=RunConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)

    def flat(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for key, (section, attr, _) in _KEYMAP.items():
            if section == "run":
                out[key] = getattr(self.run, attr)
            elif section == "cng":
                out[key] = getattr(self.run.cng, attr)
            elif section == "perturb":
                out[key] = getattr(self.run.perturb, attr)
            else:
                out[key] = getattr(self.synth, attr)
        return out


def default_flat() -> dict[str, object]:
    return FullConfig().flat()


def _convert(key: str, raw: object) -> object:
    default = default_flat()[key]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r}: cannot parse value {raw!r}") from None


def read_config_file(path) -> dict[str, object]:
    """Flat key=value text, or the JSON emitted as config_effective.json."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        data = json.loads(text)
        if not isinstance(data, dict):
            raise UsageError(f"{path}: JSON config must be an object")
        return dict(data)
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path} line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(
    config_path=None,
    overrides: list[str] | None = None,
    seed: int | None = None,
) -> FullConfig:
    """Defaults, then file values, then --set overrides, then the --seed flag."""
    flat = default_flat()
    sources: dict[str, object] = {}
    if config_path is not None:
        sources.update(read_config_file(config_path))
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        sources[key.strip()] = value.strip()

    for key, raw in sources.items():
        if key not in flat:
            raise UsageError(f"unknown config key {key!r}")
        flat[key] = _convert(key, raw)
    if seed is not None:
        flat["seed"] = int(seed)

    cng = CngConfig(
        strategy=flat["cng.strategy"],
        k=flat["cng.k"],
        candidate_pool=flat["cng.candidate_pool"],
    )
    perturb = PerturbConfig(
        inter_group_drop_prob=flat["perturb.inter_group_drop_prob"],
        mask_drop_rate=flat["perturb.mask_drop_rate"],
        edge_noise_sigma=flat["perturb.edge_noise_sigma"],
    )
    run_kwargs = {
        attr: flat[key]
        for key, (section, attr, _) in _KEYMAP.items()
        if section == "run"
    }
    run = RunConfig(cng=cng, perturb=perturb, **run_kwargs)
    synth = SyntheticSpec(**{
        attr: flat[key] for key, (section, attr, _) in _KEYMAP.items() if section == "synth"
    })
    run.validate()
    cfg = FullConfig(run=run, synth=synth)
    return cfg


def with_ablation(cfg: FullConfig, tokens: frozenset[str]) -> FullConfig:
    run = replace(cfg.run, ablation=",".join(sorted(tokens)))
    return FullConfig(run=run, synth=cfg.synth)


def with_mask_rate(cfg: FullConfig, tau: float) -> FullConfig:
    perturb = replace(cfg.run.perturb, mask_drop_rate=tau)
    return FullConfig(run=replace(cfg.run, perturb=perturb), synth=cfg.synth)


def write_effective(cfg: FullConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.flat(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_help_lines() -> list[str]:
    """One ``key=default  doc`` line per config key, defaults straight from code."""
    flat = default_flat()
    width = max(len(f"{k}={flat[k]}") for k in _KEYMAP)
    return [
        f"  {f'{key}={flat[key]}':<{width}}  {doc}"
        for key, (_, _, doc) in _KEYMAP.items()
    ]
