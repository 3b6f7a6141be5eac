"""Ground-truth linear-Gaussian structural causal model with analytic oracles.

Generative process (all noise standard normal unless noted):

    A = sigma_a * z,             z ~ N(0, 1)
    U ~ N(0, I_{d_u})
    X = W_a A + W_u U + b_x      (noiseless linear mechanism)
    Y = w_y . X + c_a A + c_u . U + b_y

Because the X-mechanism is a noiseless linear map of a standard-normal U,
conditioning U on observed (X = x, A = a) reduces to conditioning a Gaussian
on the linear constraint W_u u = x - W_a a - b_x, which has the closed form

    mean = W_u^T (W_u W_u^T)^{-1} (x - W_a a - b_x)
    cov  = I - W_u^T (W_u W_u^T)^{-1} W_u

Counterfactuals then follow the abduct / act / predict recipe exactly: draw
u from the posterior, replace a by the intervention value, replay the
mechanism.  These oracles anchor every evaluation of the learned models.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .data import Dataset
from .errors import ArgumentError, ModelError
from .nn import write_json_atomic
from .rng import RngStream

DEFAULT_SCM_SEED = 20250808
DEFAULT_ASSET = "default_scm.json"


@dataclass(frozen=True)
class LinearGaussianSCM:
    w_a: np.ndarray          # (d_x, 1) effect of A on X
    w_u: np.ndarray          # (d_x, d_u) effect of U on X; full row rank
    b_x: np.ndarray          # (d_x,)
    w_y: np.ndarray          # (d_x,) effect of X on Y
    c_a: float               # direct effect of A on Y
    c_u: np.ndarray          # (d_u,) direct effect of U on Y
    b_y: float
    sigma_a: float

    def __post_init__(self):
        for name in ("w_a", "w_u", "b_x", "w_y", "c_u"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.w_a.ndim != 2 or self.w_a.shape[1] != 1:
            raise ModelError(f"w_a must be (d_x, 1), got {self.w_a.shape}")
        if self.w_u.ndim != 2 or self.w_u.shape[0] != self.w_a.shape[0]:
            raise ModelError(f"w_u must be (d_x, d_u), got {self.w_u.shape}")
        if self.sigma_a <= 0:
            raise ModelError("sigma_a must be positive")
        sv = np.linalg.svd(self.w_u, compute_uv=False)
        if sv.size < self.d_x or sv[self.d_x - 1] < 1e-10:
            raise ModelError("w_u must have full row rank (posterior needs W_u W_u^T invertible)")

    @property
    def d_x(self) -> int:
        return self.w_a.shape[0]

    @property
    def d_u(self) -> int:
        return self.w_u.shape[1]

    # -- serialization ---------------------------------------------------------

    def to_doc(self, seed: int | None = None) -> dict:
        return {
            "seed": seed,
            "W_A": self.w_a.tolist(),
            "W_U": self.w_u.tolist(),
            "b_X": self.b_x.tolist(),
            "w_Y": self.w_y.tolist(),
            "c_A": float(self.c_a),
            "c_U": self.c_u.tolist(),
            "b_Y": float(self.b_y),
            "sigma_A": float(self.sigma_a),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "LinearGaussianSCM":
        return cls(np.asarray(doc["W_A"]), np.asarray(doc["W_U"]), np.asarray(doc["b_X"]),
                   np.asarray(doc["w_Y"]), float(doc["c_A"]), np.asarray(doc["c_U"]),
                   float(doc["b_Y"]), float(doc["sigma_A"]))

    def save(self, path, seed: int | None = None) -> None:
        write_json_atomic(path, self.to_doc(seed=seed))

    @classmethod
    def load(cls, path) -> "LinearGaussianSCM":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_doc(json.load(fh))


def random_scm(seed: int = DEFAULT_SCM_SEED, d_x: int = 4, d_u: int = 5) -> LinearGaussianSCM:
    """Seeded random coefficients: W_a, W_u, w_y, c_u ~ N(0,1); offsets zero."""
    rng = RngStream(seed, 0)
    return LinearGaussianSCM(
        w_a=rng.standard_normal((d_x, 1)),
        w_u=rng.standard_normal((d_x, d_u)),
        b_x=np.zeros(d_x),
        w_y=rng.standard_normal((d_x,)),
        c_a=1.0,
        c_u=rng.standard_normal((d_u,)),
        b_y=0.0,
        sigma_a=1.0,
    )


def default_scm() -> LinearGaussianSCM:
    """The frozen repository SCM asset (seeded, committed as JSON)."""
    ref = importlib.resources.files("ncmfair").joinpath("assets", DEFAULT_ASSET)
    with ref.open("r", encoding="utf-8") as fh:
        return LinearGaussianSCM.from_doc(json.load(fh))


# -- sampling and oracles --------------------------------------------------------


def sample_synthetic(scm: LinearGaussianSCM, n: int, rng: RngStream) -> Dataset:
    """n i.i.d. (a, x, y) triplets; draw order is A then U, fixed for determinism."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    a = scm.sigma_a * rng.standard_normal((n, 1))
    u = rng.standard_normal((n, scm.d_u))
    x = a @ scm.w_a.T + u @ scm.w_u.T + scm.b_x
    y = x @ scm.w_y[:, None] + scm.c_a * a + u @ scm.c_u[:, None] + scm.b_y
    return Dataset(a, x, y, ("a",), tuple(f"x{i}" for i in range(scm.d_x)), ("y",))


@dataclass(frozen=True)
class GaussianPosterior:
    """Exact posterior of U given evidence; covariance is symmetric PSD."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=np.float64))
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ModelError("posterior covariance must be symmetric")
        if np.linalg.eigvalsh(self.cov).min() < -1e-10:
            raise ModelError("posterior covariance must be PSD")

    def sample(self, q: int, rng: RngStream) -> np.ndarray:
        """Draw q posterior samples via an eigendecomposition square root."""
        if q < 1:
            raise ArgumentError("q must be >= 1")
        lam, vec = np.linalg.eigh(self.cov)
        lam = np.clip(lam, 0.0, None)
        root = vec * np.sqrt(lam)[None, :]
        z = rng.standard_normal((q, self.mean.size))
        return self.mean[None, :] + z @ root.T


def _posterior_projector(scm: LinearGaussianSCM) -> np.ndarray:
    gram = scm.w_u @ scm.w_u.T
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise ModelError("W_u W_u^T is numerically singular")
    return np.linalg.solve(gram, scm.w_u).T  # (d_u, d_x): W_u^T (W_u W_u^T)^{-1}


def analytic_posterior(scm: LinearGaussianSCM, x, a: float) -> GaussianPosterior:
    """Posterior of U | X=x, A=a from the noiseless linear conditioning."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (scm.d_x,):
        raise ArgumentError(f"x must have shape ({scm.d_x},), got {x.shape}")
    proj = _posterior_projector(scm)
    r = x - scm.w_a[:, 0] * float(a) - scm.b_x
    mean = proj @ r
    cov = np.eye(scm.d_u) - proj @ scm.w_u
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(mean, cov)


def analytic_counterfactual(scm: LinearGaussianSCM, x, a: float, a_prime: float,
                            q: int, rng: RngStream) -> np.ndarray:
    """Abduct U from (x, a), intervene A <- a', replay the mechanism; (q, d_x)."""
    posterior = analytic_posterior(scm, x, a)
    u = posterior.sample(q, rng)
    return float(a_prime) * scm.w_a[:, 0][None, :] + u @ scm.w_u.T + scm.b_x


# -- ground-truth plug-ins for the learned-model interfaces -----------------------


class _LinearPlugin:
    """Affine row map usable wherever a learned model is expected.

    ``predict`` runs plain numpy; ``forward_t`` builds the same map with
    autodiff ops, so the oracles compose with the differentiable losses.
    """

    def __init__(self, matrix: np.ndarray, offset: np.ndarray):
        self._matrix = np.asarray(matrix, dtype=np.float64)
        self._offset = np.asarray(offset, dtype=np.float64)

    def predict(self, inp: np.ndarray) -> np.ndarray:
        inp = np.asarray(inp, dtype=np.float64)
        if inp.ndim != 2 or inp.shape[1] != self._matrix.shape[0]:
            raise ArgumentError(
                f"expected input (batch, {self._matrix.shape[0]}), got {inp.shape}"
            )
        return inp @ self._matrix + self._offset

    def forward_t(self, inp) -> Tensor:
        from . import autodiff as ad

        t = inp if isinstance(inp, Tensor) else Tensor(np.asarray(inp, dtype=np.float64))
        if t.data.ndim != 2 or t.data.shape[1] != self._matrix.shape[0]:
            raise ArgumentError(
                f"expected input (batch, {self._matrix.shape[0]}), got {t.data.shape}"
            )
        return ad.add(ad.matmul(t, Tensor(self._matrix)), Tensor(self._offset))

    def parameters(self):
        return []

    def set_trainable(self, trainable: bool) -> None:
        pass  # nothing to train


class OracleMechanism(_LinearPlugin):
    """Drop-in mechanism backed by the true SCM; inputs are rows [a | u]."""

    def __init__(self, scm: LinearGaussianSCM):
        matrix = np.concatenate([scm.w_a.T, scm.w_u.T], axis=0)
        super().__init__(matrix, scm.b_x)
        self.scm = scm
        self.d_a = 1
        self.d_u = scm.d_u
        self.d_x = scm.d_x


class OracleAbductor(_LinearPlugin):
    """Drop-in abductor sampling the exact posterior; inputs are rows [x | a | noise].

    Uses the reparametrization u = mean(x, a) + C^{1/2} eta with eta standard
    normal, so the pushforward noise realizes the posterior exactly.
    """

    def __init__(self, scm: LinearGaussianSCM):
        proj = _posterior_projector(scm)
        cov = np.eye(scm.d_u) - proj @ scm.w_u
        lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
        root = vec * np.sqrt(np.clip(lam, 0.0, None))[None, :]
        matrix = np.concatenate([proj.T, -(scm.w_a.T @ proj.T), root.T], axis=0)
        offset = -proj @ scm.b_x
        super().__init__(matrix, offset)
        self.scm = scm
        self.d_u = scm.d_u
        self.d_noise = scm.d_u
