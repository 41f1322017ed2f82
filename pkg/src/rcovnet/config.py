"""Experiment configuration from INI files.

See ``configs/README.md`` for every key.  Sections:

``[experiment]``  name, seed, out
``[data]``        source (simulate | file), path, split (fractional | trailing) and its sizes
``[simulation]``  CAW process, embedding and length
``[transform]``   kind, lag
``[model]``       type (convlstm | ma | ema | mfa-var | mfa-dcaw) and its settings
``[train]``       optimiser and loss settings
``[compare]``     baseline search grids and the simulation comparison table
``[ablate]``      transform and loss grids
"""
import configparser
import hashlib
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

from rcovnet.errors import ConfigError, RcovError
from rcovnet.nn.losses import LossKind
from rcovnet.nn.spec import PRESETS, build_spec
from rcovnet.nn.training import TrainConfig
from rcovnet.simulator import CawParams, Innovation
from rcovnet.transforms import Fractional, TrailingDays, TransformKind

MODEL_TYPES = ("convlstm", "ma", "ema", "mfa-var", "mfa-dcaw")


def _ints(text):
    """``"1-3,5"`` -> (1, 2, 3, 5)."""
    out = []
    for part in (p.strip() for p in str(text).split(",")):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _words(text):
    return tuple(v.strip().lower() for v in str(text).split(",") if v.strip())


def _lags(text):
    """``"0.3,0.4; 0.1,0.2"`` -> one row of diagonals per lag."""
    return tuple(_floats(row) for row in str(text).split(";") if row.strip())


@dataclass
class SimulationConfig:
    params: str = "paper"             # paper | diagonal
    innovation: str = "wishart"
    length: int = 5000
    d: int = 60
    r: int = 3
    nu: float = 5.0
    nu1: float = 10.0
    nu2: float = 8.0
    c: Tuple[float, ...] = ()
    a: Tuple[Tuple[float, ...], ...] = ()
    b: Tuple[Tuple[float, ...], ...] = ()
    embedding: str = "random"         # random | series
    embedding_seed: Optional[int] = None
    embedding_series: str = ""
    sigma0_scale: float = 0.1
    burn_in: int = 100

    def caw_params(self):
        if self.params == "paper":
            p = CawParams.paper()
            p.nu, p.nu1, p.nu2 = self.nu, self.nu1, self.nu2
            return p
        if self.params == "diagonal":
            if not (self.c and self.a and self.b):
                raise ConfigError("diagonal simulation needs c, a and b")
            return CawParams.from_diagonals(self.c, self.a, self.b, self.nu, nu1=self.nu1, nu2=self.nu2)
        raise ConfigError(f"unknown simulation params {self.params!r}")


@dataclass
class DataConfig:
    source: str = "simulate"
    path: str = ""
    split: str = "fractional"
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    val_days: int = 252
    test_days: int = 252

    def scheme(self):
        if self.split == "fractional":
            return Fractional(self.train_frac, self.val_frac, self.test_frac)
        if self.split == "trailing":
            return TrailingDays(self.val_days, self.test_days)
        raise ConfigError(f"unknown split {self.split!r}")


@dataclass
class ModelConfig:
    type: str = "convlstm"
    preset: str = "simulation"
    channels: Tuple[int, ...] = ()
    kernels: Tuple[int, ...] = ()
    peephole: bool = False
    use_bias: bool = True
    lrelu_slope: float = 0.01
    lag: int = 5          # MA / EMA window
    r: int = 1
    p: int = 1
    q: int = 1


@dataclass
class CompareConfig:
    ma_lags: Tuple[int, ...] = tuple(range(1, 11))
    var_r: Tuple[int, ...] = (1, 2, 3)
    var_q: Tuple[int, ...] = (1, 2, 3)
    dcaw_r: Tuple[int, ...] = (1, 2, 3)
    dcaw_pq: Tuple[int, ...] = (1, 2)
    table2_seeds: Tuple[int, ...] = ()
    table2_innovations: Tuple[str, ...] = ("wishart", "matrix-f")
    table2_dcaw: Tuple[int, ...] = (3, 2, 2)  # r, p, q of the DCAW fitted in the simulation table


@dataclass
class AblateConfig:
    transforms: Tuple[str, ...] = tuple(k.value for k in TransformKind)
    losses: Tuple[str, ...] = ("l1", "l2", "huber")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    out: str = "runs/experiment"
    data: DataConfig = field(default_factory=DataConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    transform: TransformKind = TransformKind.SQRT_CHOLESKY
    lag: int = 20
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    text: str = ""

    def model_spec(self, d):
        m = self.model
        if m.type != "convlstm":
            raise ConfigError("model spec requested for a baseline model")
        kw = dict(use_bias=m.use_bias, peephole=m.peephole, lrelu_slope=m.lrelu_slope)
        try:
            if m.preset == "custom":
                return build_spec(d, self.lag, m.channels, m.kernels, **kw)
            if m.preset not in PRESETS:
                raise ConfigError(f"unknown preset {m.preset!r}; choose from {sorted(PRESETS)} or custom")
            return PRESETS[m.preset](d=d, lag=self.lag, **kw)
        except ConfigError:
            raise
        except RcovError as exc:
            raise ConfigError(str(exc)) from None

    def digest(self):
        return hashlib.sha256(self.text.encode()).hexdigest()

    def to_dict(self):
        out = asdict(self)
        out.pop("text")
        out["transform"] = self.transform.value
        out["train"] = self.train.to_dict()
        return out


_SECTIONS = {"experiment", "data", "simulation", "transform", "model", "train", "compare", "ablate"}


def _get(sec, key, conv, default):
    if sec is None or key not in sec:
        return default
    raw = sec[key].strip()
    try:
        if conv is bool:
            return sec.getboolean(key)
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{sec.name}] {key} = {raw!r}: {exc}") from None


def _fill(obj, sec, convs):
    for key, conv in convs.items():
        setattr(obj, key, _get(sec, key, conv, getattr(obj, key)))
    if sec is not None:
        unknown = set(sec) - set(convs)
        if unknown:
            raise ConfigError(f"unknown keys in [{sec.name}]: {', '.join(sorted(unknown))}")
    return obj


def parse_config(text, overrides=None):
    """Parse INI text into an :class:`ExperimentConfig`.

    ``overrides`` maps ``"section.key"`` to a string value applied before
    validation (used by the ``--seed`` and ``--out`` flags).
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for dotted, value in (overrides or {}).items():
        s, k = dotted.split(".", 1)
        if not cp.has_section(s):
            cp.add_section(s)
        cp[s][k] = str(value)
    unknown = set(cp.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    sec = {name: (cp[name] if cp.has_section(name) else None) for name in _SECTIONS}

    cfg = ExperimentConfig(text=text + "".join(f"\n# override {k}={v}" for k, v in sorted((overrides or {}).items())))
    _fill(cfg, sec["experiment"], {"name": str, "seed": int, "out": str})
    _fill(cfg.data, sec["data"], {"source": str.lower, "path": str, "split": str.lower, "train_frac": float,
                                  "val_frac": float, "test_frac": float, "val_days": int, "test_days": int})
    _fill(cfg.simulation, sec["simulation"], {
        "params": str.lower, "innovation": str.lower, "length": int, "d": int, "r": int, "nu": float,
        "nu1": float, "nu2": float, "c": _floats, "a": _lags, "b": _lags, "embedding": str.lower,
        "embedding_seed": int, "embedding_series": str, "sigma0_scale": float, "burn_in": int})
    tsec = sec["transform"]
    cfg.transform = _get(tsec, "kind", TransformKind.parse, cfg.transform)
    cfg.lag = _get(tsec, "lag", int, cfg.lag)
    if tsec is not None and set(tsec) - {"kind", "lag"}:
        raise ConfigError(f"unknown keys in [transform]: {', '.join(sorted(set(tsec) - {'kind', 'lag'}))}")
    _fill(cfg.model, sec["model"], {"type": str.lower, "preset": str.lower, "channels": _ints, "kernels": _ints,
                                    "peephole": bool, "use_bias": bool, "lrelu_slope": float, "lag": int,
                                    "r": int, "p": int, "q": int})
    train_kw = {}
    train_keys = {"lr": float, "beta1": float, "beta2": float, "weight_decay": float, "batch_size": int,
                  "l1_lambda": float, "huber_delta": float, "huber_mode": str, "loss": str, "max_epochs": int,
                  "patience": int}
    if sec["train"] is not None:
        for key in sec["train"]:
            if key not in train_keys:
                raise ConfigError(f"unknown keys in [train]: {key}")
            train_kw[key] = _get(sec["train"], key, train_keys[key], None)
    try:
        cfg.train = TrainConfig(seed=cfg.seed, **train_kw)
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from None
    _fill(cfg.compare, sec["compare"], {"ma_lags": _ints, "var_r": _ints, "var_q": _ints, "dcaw_r": _ints,
                                        "dcaw_pq": _ints, "table2_seeds": _ints, "table2_innovations": _words,
                                        "table2_dcaw": _ints})
    _fill(cfg.ablate, sec["ablate"], {"transforms": _words, "losses": _words})
    _validate(cfg)
    return cfg


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def _validate(cfg):
    d = cfg.data
    if d.source not in ("simulate", "file"):
        raise ConfigError("[data] source must be simulate or file")
    if d.source == "file" and not d.path:
        raise ConfigError("[data] source = file needs a path")
    if d.source == "simulate" and d.path:
        raise ConfigError("[data] give either source = simulate or a path, not both")
    d.scheme()
    s = cfg.simulation
    try:
        Innovation.parse(s.innovation)
        for inn in cfg.compare.table2_innovations:
            Innovation.parse(inn)
    except ValueError as exc:
        raise ConfigError(f"[simulation] {exc}") from None
    if s.params == "diagonal":
        r = len(s.c)
        if any(len(row) != r for row in s.a + s.b):
            raise ConfigError("[simulation] c, a and b rows must share one length")
        s.r = r
    elif s.params != "paper":
        raise ConfigError("[simulation] params must be paper or diagonal")
    if s.embedding not in ("random", "series"):
        raise ConfigError("[simulation] embedding must be random or series")
    if s.length < 2 or s.d < 2 or not 1 <= s.r < s.d:
        raise ConfigError("[simulation] need length >= 2 and 1 <= r < d")
    if cfg.lag < 1:
        raise ConfigError("[transform] lag must be positive")
    if cfg.model.type not in MODEL_TYPES:
        raise ConfigError(f"[model] type must be one of {', '.join(MODEL_TYPES)}")
    for t in cfg.ablate.transforms:
        try:
            TransformKind.parse(t)
        except ValueError:
            raise ConfigError(f"[ablate] unknown transform {t!r}") from None
    for l in cfg.ablate.losses:
        try:
            LossKind.parse(l)
        except ValueError:
            raise ConfigError(f"[ablate] unknown loss {l!r}") from None
    if len(cfg.compare.table2_dcaw) != 3:
        raise ConfigError("[compare] table2_dcaw must be r, p, q")
    if cfg.model.type == "convlstm":
        cfg.model_spec(s.d if d.source == "simulate" else 2)


def embedding_seed(cfg):
    s = cfg.simulation.embedding_seed
    return cfg.seed if s is None else s
