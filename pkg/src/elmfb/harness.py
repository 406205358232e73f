"""
Experiment orchestration: configuration, training data, SNR sweeps, output.

Determinism: every test trial draws from its own stream
``(seed, (TEST_STREAM, snr_index, trial_index))`` and per-cell statistics
are reduced in trial order, so emitted numbers depend only on the config,
never on the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baseline import baseline_receive
from .elm import CascadeReceiver, SharedWeightPool, TrainingSet, infer, train_cascade
from .metrics import nmse, snr_to_sigma2
from .numerics import RngStream, as_generator, gaussian_complex
from .phy import (
    ChannelRealization,
    PowerProfile,
    build_walsh,
    coarse_estimate,
    draw_channel,
    qpsk_demodulate,
    qpsk_modulate,
    superimpose,
    uplink_transmit,
)

__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "ExperimentConfig",
    "RESULT_JSON_SCHEMA",
    "ResultRow",
    "TrainingError",
    "emit_results",
    "generate_training_set",
    "parse_results",
    "parse_snr_grid",
    "run_sweep",
    "train_receiver",
]

log = logging.getLogger(__name__)

TRAIN_STREAM = 2
TEST_STREAM = 3
METHODS = ("elm", "baseline")
CSV_HEADER = ["method", "snr_db", "nmse_linear", "nmse_db", "ber", "trials", "bits", "config_hash"]

RESULT_JSON_SCHEMA = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "additionalProperties": False,
        "required": CSV_HEADER,
        "properties": {
            "method": {"enum": list(METHODS)},
            "snr_db": {"type": ["number", "string"]},
            "nmse_linear": {"type": ["number", "string"]},
            "nmse_db": {"type": ["number", "string"]},
            "ber": {"type": ["number", "string"]},
            "trials": {"type": "integer", "minimum": 0},
            "bits": {"type": "integer", "minimum": 0},
            "config_hash": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
        },
    },
}


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def parse_snr_grid(text: str) -> tuple:
    """``"0:2:20"`` (inclusive start:step:stop), ``"0,5,inf"`` or a single value."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"SNR range must be start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("SNR step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 10) for i in range(n))
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    M: int = 512
    N: int = 16
    rho: float = 0.20
    Eu: float = 1.0
    Nt: int = 10_000
    snr_grid_db: tuple = tuple(float(s) for s in range(0, 21, 2))
    seed: int = 0
    train_sigma2: float = 0.0
    ber_error_floor: int = 1000
    ber_bit_cap: int = 10**8
    nmse_min_trials: int = 2000
    methods: tuple = METHODS
    ridge: float = 0.0
    g_error_var: float = 0.0
    block_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "methods", tuple(self.methods))
        self.validate()

    def validate(self) -> None:
        if self.M < 2 or self.M & (self.M - 1):
            raise ConfigError(f"M must be a power of two, got {self.M}")
        if not 0 < self.N < self.M:
            raise ConfigError(f"need 0 < N < M, got N={self.N}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.Eu <= 0:
            raise ConfigError("Eu must be positive")
        if self.Nt < 2:
            raise ConfigError("Nt must be at least 2")
        if not self.snr_grid_db:
            raise ConfigError("empty SNR grid")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate method")
        for name in ("train_sigma2", "ridge", "g_error_var"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.ber_error_floor < 0 or self.ber_bit_cap <= 0 or self.nmse_min_trials < 1:
            raise ConfigError("invalid stopping-rule parameters")
        if self.block_size < 1:
            raise ConfigError("block_size must be positive")

    def canonical(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Read ``key = value`` lines; ``#`` starts a comment."""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = _coerce(key, val, f"{path}:{lineno}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def sigma2_grid(self):
        return [snr_to_sigma2(s, self.Eu) for s in self.snr_grid_db]


_FIELD_TYPES = {f.name: f.default for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, val: str, where: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        if key == "snr_grid_db":
            return parse_snr_grid(val)
        if key == "methods":
            return tuple(m.strip() for m in val.split(",") if m.strip())
        default = _FIELD_TYPES[key]
        if isinstance(default, int):
            return int(float(val)) if "e" in val.lower() else int(val)
        return float(val)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {val!r}") from exc


# --------------------------------------------------------------------------
# data generation


def _coarse_batch(X, G, sigma2, gen, chunk=256):
    """Coarse estimates of the columns of X sent over the columns of G."""
    N, K = G.shape
    M = X.shape[0]
    out = np.empty((M, K), dtype=np.complex128)
    for lo in range(0, K, chunk):
        hi = min(lo + chunk, K)
        g = G[:, lo:hi].T  # (k, N)
        R = g[:, :, None] * X[:, lo:hi].T[:, None, :]  # (k, N, M) = g x^T
        if sigma2 > 0:
            R = R + gaussian_complex(gen, R.shape, sigma2)
        gg = np.sum(g.real**2 + g.imag**2, axis=1)
        out[:, lo:hi] = (np.einsum("kn,knm->km", g.conj(), R) / gg[:, None]).T
    return out


def generate_training_set(cfg: ExperimentConfig, rng=None) -> TrainingSet:
    """Draw 4*Nt independent received signals and split them into the four blocks.

    Blocks 1 and 3 are labelled with the downlink CSI, blocks 2 and 4 with
    the data symbols of the same realizations.
    """
    if rng is None:
        rng = RngStream(cfg.seed, TRAIN_STREAM)
    gen = as_generator(rng)
    P = build_walsh(cfg.M, cfg.N)
    pw = PowerProfile(cfg.rho, cfg.Eu)
    inputs, labels_h, labels_d = [], [], []
    for k in range(4):
        Hm = gaussian_complex(gen, (cfg.N, cfg.Nt), 1.0 / cfg.N)
        G = gaussian_complex(gen, (cfg.N, cfg.Nt), 1.0 / cfg.N)
        bits = gen.integers(0, 2, size=(2 * cfg.M, cfg.Nt), dtype=np.uint8)
        D = qpsk_modulate(bits)
        X = superimpose(Hm, D, P, pw)
        inputs.append(_coarse_batch(X, G, cfg.train_sigma2, gen))
        (labels_h if k % 2 == 0 else labels_d).append(Hm if k % 2 == 0 else D)
    return TrainingSet(inputs, labels_h, labels_d, meta={"config_hash": cfg.config_hash()})


def train_receiver(cfg: ExperimentConfig) -> CascadeReceiver:
    P = build_walsh(cfg.M, cfg.N)
    pw = PowerProfile(cfg.rho, cfg.Eu)
    pool = SharedWeightPool.generate(cfg.seed, cfg.M)
    ts = generate_training_set(cfg)
    try:
        return train_cascade(ts, pool, P, pw, ridge=cfg.ridge)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        raise TrainingError(
            f"training failed for M={cfg.M}, N={cfg.N}, rho={cfg.rho}, Nt={cfg.Nt}: {exc}"
        ) from exc


# --------------------------------------------------------------------------
# Monte-Carlo sweep

_WORKER_CTX = None


def _init_worker(cfg, net):
    global _WORKER_CTX
    _WORKER_CTX = (cfg, net)


def simulate_trial(cfg: ExperimentConfig, P, pw, sigma2: float, gen):
    """One test realization; returns ``(h, bits, xhat)``."""
    ch = draw_channel(gen, cfg.N, sigma2)
    bits = gen.integers(0, 2, size=2 * cfg.M, dtype=np.uint8)
    x = superimpose(ch.h, qpsk_modulate(bits), P, pw)
    r = uplink_transmit(x, ch, gen)
    g_bs = ch.g
    if cfg.g_error_var > 0:
        g_bs = g_bs + gaussian_complex(gen, cfg.N, cfg.g_error_var)
    return ch.h, bits, coarse_estimate(r, g_bs)


def _simulate_block(snr_idx, block_idx, methods, ctx=None):
    cfg, net = ctx if ctx is not None else _WORKER_CTX
    P = build_walsh(cfg.M, cfg.N)
    pw = PowerProfile(cfg.rho, cfg.Eu)
    sigma2 = snr_to_sigma2(cfg.snr_grid_db[snr_idx], cfg.Eu)
    t0 = block_idx * cfg.block_size
    Hs, Bs, Xs = [], [], []
    for t in range(t0, t0 + cfg.block_size):
        gen = RngStream(cfg.seed, (TEST_STREAM, snr_idx, t)).generator()
        h, bits, xhat = simulate_trial(cfg, P, pw, sigma2, gen)
        Hs.append(h)
        Bs.append(bits)
        Xs.append(xhat)
    Htrue = np.stack(Hs, axis=1)
    bits = np.stack(Bs, axis=1)
    Xhat = np.stack(Xs, axis=1)

    out = {}
    for m in methods:
        with np.errstate(all="ignore"):
            if m == "elm":
                h_est, d_est = infer(Xhat, net)
            else:
                h_est, d_est = baseline_receive(Xhat, P, pw)
            ratios = nmse(Htrue, h_est)
        errors = np.count_nonzero(qpsk_demodulate(d_est) != bits, axis=0)
        ok = np.isfinite(ratios) & np.all(np.isfinite(d_est), axis=0)
        out[m] = (np.where(ok, ratios, 0.0), errors, ok)
    return out


@dataclass
class _CellState:
    nmse: list = field(default_factory=list)
    trials: int = 0
    errors: int = 0
    bits: int = 0
    faults: int = 0
    done: bool = False

    def consume(self, ratios, errors, ok, cfg: ExperimentConfig) -> None:
        bits_per_trial = 2 * cfg.M
        for i in range(ratios.size):
            if not ok[i]:
                self.faults += 1
                continue
            self.nmse.append(float(ratios[i]))
            self.trials += 1
            self.errors += int(errors[i])
            self.bits += bits_per_trial
            if self.trials >= cfg.nmse_min_trials and (
                self.errors >= cfg.ber_error_floor or self.bits >= cfg.ber_bit_cap
            ):
                self.done = True
                return


@dataclass(frozen=True)
class ResultRow:
    method: str
    snr_db: float
    nmse_linear: float
    nmse_db: float
    ber: float
    trials: int
    bits: int
    config_hash: str


def _sig9(x: float) -> float:
    return float(f"{x:.9g}")


def _make_row(method, snr_db, st: _CellState, chash) -> ResultRow:
    nm = _sig9(math.fsum(st.nmse) / st.trials) if st.trials else math.nan
    nm_db = _sig9(10.0 * math.log10(nm)) if nm > 0 else (-math.inf if nm == 0 else math.nan)
    ber = _sig9(st.errors / st.bits) if st.bits else math.nan
    return ResultRow(method, float(snr_db), nm, nm_db, ber, st.trials, st.bits, chash)


def run_sweep(
    cfg: ExperimentConfig,
    workers: int = 1,
    net: Optional[CascadeReceiver] = None,
    max_faults: int = 1000,
    return_samples: bool = False,
):
    """Train once (if needed), then estimate NMSE and BER on every SNR point.

    Each (method, SNR) cell runs trials until at least ``nmse_min_trials``
    trials are in and the BER rule (``ber_error_floor`` errors or
    ``ber_bit_cap`` bits) is met. Pass a trained `net` to skip training.

    With ``return_samples=True`` the per-trial NMSE values of every cell
    are returned too, as ``(rows, {(method, snr_db): ndarray})``.
    """
    cfg.validate()
    if "elm" in cfg.methods and net is None:
        log.info("training cascade: M=%d N=%d Nt=%d rho=%g", cfg.M, cfg.N, cfg.Nt, cfg.rho)
        net = train_receiver(cfg)
    chash = cfg.config_hash()
    ctx = (cfg, net if "elm" in cfg.methods else None)

    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=ctx)
    rows = []
    samples = {}
    try:
        for si, snr in enumerate(cfg.snr_grid_db):
            states = {m: _CellState() for m in cfg.methods}
            next_block = 0
            while True:
                active = tuple(m for m in cfg.methods if not states[m].done)
                if not active:
                    break
                wave = range(next_block, next_block + max(1, workers))
                next_block += len(wave)
                if pool is None:
                    results = [_simulate_block(si, b, active, ctx) for b in wave]
                else:
                    results = list(pool.map(_simulate_block, [si] * len(wave), wave, [active] * len(wave)))
                for res in results:
                    for m in active:
                        st = states[m]
                        if not st.done:
                            st.consume(*res[m], cfg)
                            if st.faults > max_faults:
                                raise FloatingPointError(
                                    f"{m} at {snr} dB: {st.faults} non-finite trials, giving up"
                                )
            for m in cfg.methods:
                st = states[m]
                if st.faults:
                    log.warning("%s at %s dB: %d trials skipped (non-finite output)", m, snr, st.faults)
                row = _make_row(m, snr, st, chash)
                log.info("%s snr=%s nmse=%.4g ber=%.4g trials=%d", m, snr, row.nmse_linear, row.ber, row.trials)
                rows.append(row)
                if return_samples:
                    samples[(m, float(snr))] = np.array(st.nmse)
    finally:
        if pool is not None:
            pool.shutdown()
    return (rows, samples) if return_samples else rows


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def _json_value(v):
    if isinstance(v, float):
        return _sig9(v) if math.isfinite(v) else _fmt(v)
    return v


def _row_from_mapping(d) -> ResultRow:
    return ResultRow(
        method=str(d["method"]),
        snr_db=float(d["snr_db"]),
        nmse_linear=float(d["nmse_linear"]),
        nmse_db=float(d["nmse_db"]),
        ber=float(d["ber"]),
        trials=int(d["trials"]),
        bits=int(d["bits"]),
        config_hash=str(d["config_hash"]),
    )


def format_results(rows, fmt: str = "csv") -> str:
    if not rows:
        raise ValueError("no result rows to emit")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
        return buf.getvalue()
    if fmt == "json":
        objs = [{k: _json_value(getattr(r, k)) for k in CSV_HEADER} for r in rows]
        return json.dumps(objs, indent=1) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_results(rows, fmt: str, path) -> Path:
    """Write rows as CSV or JSON with 9 significant digits."""
    text = format_results(rows, fmt)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc
    return path


def parse_results(path, fmt: Optional[str] = None) -> list:
    path = Path(path)
    text = path.read_text()
    if fmt is None:
        fmt = "json" if text.lstrip().startswith("[") else "csv"
    if fmt == "json":
        return [_row_from_mapping(d) for d in json.loads(text)]
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
    return [_row_from_mapping(d) for d in reader]
