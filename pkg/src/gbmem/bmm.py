"""Bernoulli mixture models fitted by expectation-maximization.

All likelihood computations run in the log domain. Bernoulli probabilities
are clamped to ``[EPS_P, 1 - EPS_P]`` whenever they enter a logarithm, so a
single mismatched bit never produces ``-inf``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .bitmatrix import BitMatrix, as_bits, column_means
from .errors import (
    DegenerateComponentError,
    DegenerateInputError,
    MalformedHeaderError,
    ParameterError,
    ShapeError,
    TruncatedPayloadError,
)
from .rng import as_generator

EPS_P = 1e-6
# responsibility mass below this counts as an empty component
_MIN_MASS = 1e-12


@dataclass(frozen=True, eq=False)
class BmmParams:
    """Prototypes ``mu`` (K x D) and mixing coefficients ``pi`` (K,)."""

    mu: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64, ndmin=2)
        pi = np.array(self.pi, dtype=np.float64).reshape(-1)
        if mu.shape[0] != pi.shape[0]:
            raise ShapeError(f"{mu.shape[0]} prototypes but {pi.shape[0]} mixing coefficients")
        if np.any(mu < 0) or np.any(mu > 1) or not np.all(np.isfinite(mu)):
            raise ValueError("prototype entries must lie in [0, 1]")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixing coefficients must be a distribution, sum={pi.sum()}")
        pi = pi / pi.sum()
        mu.flags.writeable = False
        pi.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "pi", pi)

    @property
    def k(self) -> int:
        return self.mu.shape[0]

    @property
    def d(self) -> int:
        return self.mu.shape[1]


@dataclass(frozen=True)
class EmConfig:
    """EM settings. Defaults follow the reported BMM protocol."""

    k: int = 1
    eps: float = 1e-3
    n_max: int = 10
    n_init: int = 5
    n_iter: int = 3
    pi_trainable: bool = True
    init_mode: str = "centroid"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.n_max < 1 or self.n_init < 1 or self.n_iter < 1:
            raise ParameterError("k, n_max, n_init and n_iter must all be >= 1")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if self.init_mode not in ("centroid", "random"):
            raise ParameterError(f"unknown init_mode {self.init_mode!r}")


@dataclass
class FitReport:
    ll_trace: list = field(default_factory=list)
    complete_ll_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    chosen_init: int = 0
    warmup_ll: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class QuantizedBmm:
    """Prototypes stored as q-bit integer levels; pi kept in float64."""

    levels: np.ndarray
    q: int
    pi: np.ndarray

    def __post_init__(self):
        _check_q(self.q)
        levels = np.array(self.levels, dtype=np.uint64, ndmin=2)
        if levels.size and levels.max() > (1 << self.q) - 1:
            raise ValueError(f"level exceeds 2^{self.q} - 1")
        pi = np.array(self.pi, dtype=np.float64).reshape(-1)
        levels.flags.writeable = False
        pi.flags.writeable = False
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "pi", pi)

    @property
    def k(self) -> int:
        return self.levels.shape[0]

    @property
    def d(self) -> int:
        return self.levels.shape[1]


def clamp(mu):
    return np.clip(mu, EPS_P, 1.0 - EPS_P)


def _check_dims(bits, params):
    if bits.shape[1] != params.d:
        raise ShapeError(f"data has {bits.shape[1]} columns, model has D={params.d}")


def _log_joint(bits, mu, pi):
    """log(pi_k) + log p(z_i | mu_k) for every row/component pair, (N, K)."""
    mu = clamp(mu)
    log_mu = np.log(mu)
    log_1m = np.log1p(-mu)
    z = bits.astype(np.float64, copy=False)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    # z.log_mu + (1 - z).log_1m, rearranged to share one matmul
    return z @ (log_mu - log_1m).T + log_1m.sum(axis=1) + log_pi


def e_step(Z, params: BmmParams) -> np.ndarray:
    """Posterior responsibilities gamma (N x K)."""
    bits = as_bits(Z)
    _check_dims(bits, params)
    lj = _log_joint(bits, params.mu, params.pi)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def m_step(Z, gamma, pi_trainable: bool = True, pi=None) -> BmmParams:
    """Closed-form parameter update from responsibilities.

    With ``pi_trainable=False`` the mixing coefficients are returned
    unchanged (``pi`` must then be given; it defaults to uniform).
    """
    bits = as_bits(Z)
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape[0] != bits.shape[0]:
        raise ShapeError(f"{gamma.shape[0]} responsibility rows for {bits.shape[0]} samples")
    mass = gamma.sum(axis=0)
    empty = np.flatnonzero(mass < _MIN_MASS)
    if empty.size:
        raise DegenerateComponentError(empty)
    mu = clamp((gamma.T @ bits.astype(np.float64)) / mass[:, None])
    if pi_trainable:
        new_pi = mass / bits.shape[0]
    elif pi is None:
        new_pi = np.full(gamma.shape[1], 1.0 / gamma.shape[1])
    else:
        new_pi = np.asarray(pi, dtype=np.float64)
    return BmmParams(mu, new_pi)


def log_likelihood(Z, params: BmmParams) -> float:
    """Marginal log-likelihood sum_i log sum_k pi_k p(z_i | mu_k)."""
    bits = as_bits(Z)
    _check_dims(bits, params)
    return float(np.sum(logsumexp(_log_joint(bits, params.mu, params.pi), axis=1)))


def expected_complete_ll(Z, params: BmmParams, gamma) -> float:
    """Responsibility-weighted complete-data log-likelihood.

    This is the quantity sum_ik gamma_ik log(pi_k p(z_i | mu_k)); it is
    reported alongside the marginal but not used for stopping.
    """
    bits = as_bits(Z)
    _check_dims(bits, params)
    lj = _log_joint(bits, params.mu, params.pi)
    gamma = np.asarray(gamma, dtype=np.float64)
    # 0 * log(0) is taken as 0 for components with pi_k = 0
    return float(np.sum(np.where(gamma > 0, gamma * lj, 0.0)))


def init_params(Z, config: EmConfig, rng) -> BmmParams:
    """Initial prototypes around the data centroid, or uniform in [0.25, 0.75]."""
    bits = as_bits(Z)
    if bits.shape[0] < 1:
        raise DegenerateInputError("cannot initialise a BMM from zero samples")
    gen = as_generator(rng)
    k, d = config.k, bits.shape[1]
    if config.init_mode == "centroid":
        centroid = column_means(bits)
        std = bits.std(axis=0, dtype=np.float64)
        mu = clamp(centroid + gen.standard_normal((k, d)) * std)
    else:
        mu = gen.uniform(0.25, 0.75, size=(k, d))
    return BmmParams(mu, np.full(k, 1.0 / k))


def _reinit_components(bits, params, comps, config, gen):
    fresh = init_params(bits, config, gen)
    mu = params.mu.copy()
    mu[list(comps)] = fresh.mu[list(comps)]
    pi = params.pi.copy()
    if config.pi_trainable:
        # give revived components a fair share again
        pi[list(comps)] = 1.0 / config.k
        pi = pi / pi.sum()
    return BmmParams(mu, pi)


def _em_step(bits, params, config, gen, revived):
    gamma = e_step(bits, params)
    try:
        new = m_step(bits, gamma, config.pi_trainable, params.pi)
    except DegenerateComponentError as exc:
        again = [c for c in exc.components if c in revived]
        if again:
            raise DegenerateComponentError(again, f"components {again} degenerated twice") from exc
        revived.update(exc.components)
        params = _reinit_components(bits, params, exc.components, config, gen)
        gamma = e_step(bits, params)
        new = m_step(bits, gamma, config.pi_trainable, params.pi)
    return new, gamma


def fit(Z, config: EmConfig | None = None, rng=None):
    """Fit a BMM with warm-up restarts followed by EM to convergence.

    ``n_init`` initialisations each run ``n_iter`` EM steps; the one with the
    highest marginal log-likelihood is continued for at most ``n_max`` steps,
    stopping early once the relative change of the marginal log-likelihood
    drops below ``eps``.

    Returns
    -------
    params : BmmParams
    report : FitReport
        ``ll_trace`` covers the chosen warm-up and the continuation, starting
        from the initial parameters.
    """
    config = config or EmConfig()
    bits = as_bits(Z)
    n = bits.shape[0]
    if n < config.k:
        raise DegenerateInputError(f"{n} samples cannot support {config.k} components")
    gen = as_generator(config.seed if rng is None else rng)

    best = None
    warmup_ll = []
    for w in range(config.n_init):
        revived = set()
        params = init_params(bits, config, gen)
        lls = [log_likelihood(bits, params)]
        cll = []
        for _ in range(config.n_iter):
            params, gamma = _em_step(bits, params, config, gen, revived)
            lls.append(log_likelihood(bits, params))
            cll.append(expected_complete_ll(bits, params, gamma))
        warmup_ll.append(lls[-1])
        if best is None or lls[-1] > best[1][-1]:
            best = (params, lls, cll, w, revived)

    params, lls, cll, chosen, revived = best
    report = FitReport(ll_trace=list(lls), complete_ll_trace=list(cll), chosen_init=chosen, warmup_ll=warmup_ll)
    prev = lls[-1]
    for s in range(1, config.n_max + 1):
        params, gamma = _em_step(bits, params, config, gen, revived)
        cur = log_likelihood(bits, params)
        report.ll_trace.append(cur)
        report.complete_ll_trace.append(expected_complete_ll(bits, params, gamma))
        report.iterations = s
        if abs(cur - prev) / abs(cur) < config.eps:
            report.converged = True
            break
        prev = cur
    return params, report


def sample(params: BmmParams, n: int, rng) -> BitMatrix:
    """Draw ``n`` rows: a component from pi, then independent Bernoulli bits."""
    if n < 0:
        raise ParameterError("sample size must be non-negative")
    gen = as_generator(rng)
    comp = gen.choice(params.k, size=n, p=params.pi)
    u = gen.random((n, params.d))
    return BitMatrix.from_array(u < params.mu[comp])


def _check_q(q):
    if not isinstance(q, (int, np.integer)) or not 1 <= q <= 32:
        raise ParameterError(f"quantization bits must be an integer in 1..32, got {q!r}")


def quantize(params: BmmParams, q: int) -> QuantizedBmm:
    """Uniform q-bit quantization of the prototypes: round(mu * (2^q - 1))."""
    _check_q(q)
    top = float((1 << q) - 1)
    levels = np.floor(params.mu * top + 0.5).astype(np.uint64)
    return QuantizedBmm(levels, int(q), params.pi)


def dequantize(qb: QuantizedBmm) -> BmmParams:
    """Map levels back to probabilities ``level / (2^q - 1)``.

    The result is not clamped; routines that take logarithms clamp on use.
    """
    return BmmParams(qb.levels.astype(np.float64) / float((1 << qb.q) - 1), qb.pi)


# -- serialization ---------------------------------------------------------

MODEL_MAGIC = b"GBMM"
_MODEL_HEAD = struct.Struct("<4sIIB")


def _pack_levels(levels, q):
    flat = levels.reshape(-1).astype(np.uint64)
    shifts = np.arange(q, dtype=np.uint64)
    bits = ((flat[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def _unpack_levels(buf, count, q):
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=count * q, bitorder="little")
    weights = np.uint64(1) << np.arange(q, dtype=np.uint64)
    return (bits.reshape(count, q).astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


def model_nbytes(k, d, q):
    payload = 8 * k * d if q == 0 else (k * d * q + 7) // 8
    return _MODEL_HEAD.size + 8 * k + payload


def encode_model(model) -> bytes:
    """Serialize a BmmParams (q = 0) or QuantizedBmm (q-bit packed levels)."""
    if isinstance(model, QuantizedBmm):
        head = _MODEL_HEAD.pack(MODEL_MAGIC, model.k, model.d, model.q)
        payload = _pack_levels(model.levels, model.q)
    else:
        head = _MODEL_HEAD.pack(MODEL_MAGIC, model.k, model.d, 0)
        payload = np.ascontiguousarray(model.mu, dtype="<f8").tobytes()
    return head + np.asarray(model.pi, dtype="<f8").tobytes() + payload


def decode_model(buf: bytes, offset: int = 0):
    """Parse one model record; returns ``(model, next_offset)``."""
    if len(buf) - offset < _MODEL_HEAD.size:
        raise MalformedHeaderError("model record too short for a header")
    magic, k, d, q = _MODEL_HEAD.unpack_from(buf, offset)
    if magic != MODEL_MAGIC:
        raise MalformedHeaderError(f"bad model magic {magic!r}")
    if q > 32:
        raise MalformedHeaderError(f"invalid prototype precision q={q}")
    end = offset + model_nbytes(k, d, q)
    if len(buf) < end:
        raise TruncatedPayloadError(f"model record needs {end - offset} bytes")
    off = offset + _MODEL_HEAD.size
    pi = np.frombuffer(buf, dtype="<f8", count=k, offset=off)
    off += 8 * k
    if q == 0:
        mu = np.frombuffer(buf, dtype="<f8", count=k * d, offset=off).reshape(k, d)
        return BmmParams(mu, pi), end
    levels = _unpack_levels(buf[off:end], k * d, q).reshape(k, d)
    return QuantizedBmm(levels, q, pi), end


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    model, end = decode_model(buf)
    if end != len(buf):
        raise MalformedHeaderError(f"{len(buf) - end} trailing bytes after model record")
    return model


def align_components(mu_hat, mu_true):
    """Greedy minimal-L-infinity matching of fitted to true prototypes.

    Returns ``perm`` such that ``mu_hat[perm[k]]`` is matched to
    ``mu_true[k]``.
    """
    mu_hat = np.asarray(mu_hat)
    mu_true = np.asarray(mu_true)
    cost = np.abs(mu_true[:, None, :] - mu_hat[None, :, :]).max(axis=2)
    perm = np.full(mu_true.shape[0], -1)
    used_t, used_h = set(), set()
    for flat in np.argsort(cost, axis=None, kind="stable"):
        t, h = divmod(int(flat), cost.shape[1])
        if t in used_t or h in used_h:
            continue
        perm[t] = h
        used_t.add(t)
        used_h.add(h)
    return perm


def with_pi(params: BmmParams, pi) -> BmmParams:
    return replace(params, pi=np.asarray(pi, dtype=np.float64))
