"""Synthetic regularized logistic-regression instance and its oracles.

The global objective is f(x) = (1/N) sum_i f_i(x) where server i's local
cost f_i = sum_j sum_t f_{ij,t} sums per-user, per-minibatch losses

    f_{ij,t}(x) = sum_{samples} (kappa/2)||x||^2
                  - y log s(w.x) - (1-y) log(1 - s(w.x)),

with s the logistic function.  kappa applies per sample, so the
effective ridge weight of f is kappa * total_samples / N.  Features are
i.i.d. standard normal and labels i.i.d. Bernoulli(1/2); both are pure
functions of the dataset seed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .topology import _power_eig_sym


class ProblemError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    n_servers: int = 20
    users_per_server: int = 20
    minibatches_per_user: int = 10
    batch_size: int = 5
    dim: int = 200
    kappa: float = 0.05

    def validate(self):
        for name in ("n_servers", "users_per_server", "minibatches_per_user",
                     "batch_size", "dim"):
            if getattr(self, name) < 1:
                raise ProblemError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kappa < 0:
            raise ProblemError(f"kappa must be nonnegative, got {self.kappa}")


@dataclass(frozen=True)
class Dataset:
    """Samples indexed (server, user, minibatch, in-batch): features [N,P,S,B,d],
    labels [N,P,S,B] in {0,1} stored as float64."""

    cfg: DatasetConfig
    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @property
    def kappa(self):
        return self.cfg.kappa

    @property
    def total_samples(self):
        c = self.cfg
        return c.n_servers * c.users_per_server * c.minibatches_per_user * c.batch_size

    @property
    def samples_per_server(self):
        c = self.cfg
        return c.users_per_server * c.minibatches_per_user * c.batch_size


@dataclass(frozen=True)
class Curvature:
    """Strong convexity mu and gradient-Lipschitz bound lip of f, plus the
    conservative per-minibatch bounds [N,P,S]."""

    mu: float
    lip: float
    minibatch_lip: np.ndarray = field(repr=False)


def synthesize_dataset(cfg, seed=0):
    """Generate the instance deterministically from (cfg, seed)."""
    cfg.validate()
    c = cfg
    gen = _rng.keyed_generator(seed, _rng.DATASET)
    shape = (c.n_servers, c.users_per_server, c.minibatches_per_user, c.batch_size)
    features = gen.standard_normal(size=shape + (c.dim,))
    labels = gen.integers(0, 2, size=shape).astype(np.float64)
    return Dataset(cfg=cfg, features=features, labels=labels)


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    """log(1 + e^z) without overflow: max(z,0) + log1p(e^{-|z|})."""
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def minibatch_loss(x, ds, i, j, t):
    """f_{ij,t}(x); stable for all finite x (B log 2 at x = 0)."""
    feats = ds.features[i, j, t]
    y = ds.labels[i, j, t]
    z = np.einsum("bd,d->b", feats, x)
    b = ds.cfg.batch_size
    reg = 0.5 * ds.kappa * b * float(x @ x)
    return reg + float(np.sum(_softplus(z) - y * z))


def minibatch_gradient(x, ds, i, j, t):
    """grad f_{ij,t}(x) = sum_samples [kappa x + (s(w.x) - y) w].

    einsum keeps the accumulation order identical to the batched kernel
    below, so single-user and all-user evaluation agree bit-for-bit.
    """
    feats = ds.features[i, j, t]
    y = ds.labels[i, j, t]
    z = np.einsum("bd,d->b", feats, x)
    coeff = sigmoid(z) - y
    return ds.kappa * ds.cfg.batch_size * x + np.einsum("bd,b->d", feats, coeff)


def minibatch_gradients_at(ds, x, users, slots):
    """Batched minibatch gradients: user (i, users[i,m]) evaluates its slot
    slots[i,m] at server model x[i].  x: [N,d]; users, slots: [N,M]; -> [N,M,d]."""
    n_idx = np.arange(ds.cfg.n_servers)[:, None]
    feats = ds.features[n_idx, users, slots]          # [N,M,B,d]
    y = ds.labels[n_idx, users, slots]                # [N,M,B]
    z = np.einsum("nmbd,nd->nmb", feats, x)
    coeff = sigmoid(z) - y
    data = np.einsum("nmbd,nmb->nmd", feats, coeff)
    return ds.kappa * ds.cfg.batch_size * x[:, None, :] + data


def server_gradients(ds, x):
    """Exact local gradients grad f_i(x[i]) for every server: [N,d] -> [N,d]."""
    c = ds.cfg
    feats = ds.features.reshape(c.n_servers, -1, c.dim)   # [N, P*S*B, d]
    y = ds.labels.reshape(c.n_servers, -1)
    z = np.einsum("nsd,nd->ns", feats, x)
    coeff = sigmoid(z) - y
    data = np.einsum("nsd,ns->nd", feats, coeff)
    return ds.kappa * ds.samples_per_server * x + data


def objective(x, ds):
    """Global objective f(x) = (1/N) sum of all per-sample losses."""
    c = ds.cfg
    feats = ds.features.reshape(-1, c.dim)
    y = ds.labels.reshape(-1)
    z = feats @ x
    reg = 0.5 * ds.kappa * ds.total_samples * float(x @ x)
    return (reg + float(np.sum(_softplus(z) - y * z))) / c.n_servers


def full_gradient(x, ds):
    """grad f(x) = (1/N)[kappa * total * x + sum (s(w.x) - y) w]."""
    c = ds.cfg
    feats = ds.features.reshape(-1, c.dim)
    y = ds.labels.reshape(-1)
    coeff = sigmoid(feats @ x) - y
    return (ds.kappa * ds.total_samples * x + feats.T @ coeff) / c.n_servers


def solve_centralized(ds, tol, x0=None, max_iter=1_000_000):
    """Centralized minimizer of f: full-gradient descent with Armijo
    backtracking (c = 1e-4, halving), deterministic from x = 0 (or x0).
    Stops at ||grad f|| <= tol; raises if the iteration cap is reached
    (tol too tight for float precision)."""
    if tol <= 0:
        raise ProblemError(f"tol must be positive, got {tol}")
    x = np.zeros(ds.cfg.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    f_x = objective(x, ds)
    g = full_gradient(x, ds)
    armijo = 1e-4
    # Trial steps are capped at 1/lip: beyond that the objective genuinely
    # increases, and near the minimizer the loss comparison is pure rounding
    # noise, so an uncapped search would let the step balloon and the
    # iterates random-walk instead of contracting.
    step_max = 1.0 / curvature(ds).lip
    step = step_max
    for _ in range(max_iter):
        g_sq = float(g @ g)
        if np.sqrt(g_sq) <= tol:
            return x
        step = min(step * 2.0, step_max)
        # Near the minimizer the true decrease step*g_sq drops below the
        # resolution of f itself; without a noise allowance the test can
        # only accept steps too small to change x and the search stalls
        # above tol.  A few ulps of |f| keeps it honest earlier on.
        slack = 4.0 * np.finfo(float).eps * abs(f_x)
        while True:
            x_new = x - step * g
            f_new = objective(x_new, ds)
            if f_new <= f_x - armijo * step * g_sq + slack:
                break
            step *= 0.5
            if step < 1e-20:
                raise ProblemError("line search collapsed; gradient inconsistent with loss")
        x, f_x = x_new, f_new
        g = full_gradient(x, ds)
    raise ProblemError(f"no convergence to tol={tol} within {max_iter} iterations")


def curvature(ds):
    """Curvature constants of f.

    mu = kappa * total_samples / N (the ridge part; the logistic Hessian is
    PSD).  lip = mu + lambda_max(sum w w^T)/(4N), a valid upper bound since
    the logistic curvature factor is at most 1/4; lambda_max by power
    iteration.  Per-minibatch bound: kappa*B + (1/4) sum_batch ||w||^2.
    """
    c = ds.cfg
    mu = ds.kappa * ds.total_samples / c.n_servers
    omega = ds.features.reshape(-1, c.dim)
    lam = _power_eig_sym(omega.T @ omega)
    lip = mu + lam / (4.0 * c.n_servers)
    mb = c.kappa * c.batch_size + 0.25 * np.einsum("npsbd,npsbd->nps",
                                                   ds.features, ds.features)
    return Curvature(mu=float(mu), lip=float(lip), minibatch_lip=mb)


_DUMP_MAGIC = b"CFDS"
_DUMP_VERSION = 1


def write_dataset(ds, path):
    """Binary dump: little-endian header (magic, version, counts, dim, kappa),
    then row-major float64 features and uint8 labels."""
    c = ds.cfg
    header = np.array(
        [c.n_servers, c.users_per_server, c.minibatches_per_user, c.batch_size, c.dim],
        dtype="<u4",
    )
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(np.array([_DUMP_VERSION], dtype="<u4").tobytes())
        fh.write(header.tobytes())
        fh.write(np.array([c.kappa], dtype="<f8").tobytes())
        fh.write(ds.features.astype("<f8").tobytes())
        fh.write(ds.labels.astype("u1").tobytes())


def read_dataset(path):
    """Read back a write_dataset dump."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _DUMP_MAGIC:
        raise ProblemError(f"{path}: not a dataset dump (bad magic)")
    version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    if version != _DUMP_VERSION:
        raise ProblemError(f"{path}: unsupported dump version {version}")
    counts = np.frombuffer(raw, dtype="<u4", count=5, offset=8)
    n, p, s, b, d = (int(v) for v in counts)
    kappa = float(np.frombuffer(raw, dtype="<f8", count=1, offset=28)[0])
    cfg = DatasetConfig(n_servers=n, users_per_server=p, minibatches_per_user=s,
                        batch_size=b, dim=d, kappa=kappa)
    off = 36
    n_feat = n * p * s * b * d
    features = np.frombuffer(raw, dtype="<f8", count=n_feat, offset=off)
    features = features.reshape(n, p, s, b, d).astype(np.float64)
    off += 8 * n_feat
    labels = np.frombuffer(raw, dtype="u1", count=n * p * s * b, offset=off)
    labels = labels.reshape(n, p, s, b).astype(np.float64)
    return Dataset(cfg=cfg, features=features, labels=labels)
