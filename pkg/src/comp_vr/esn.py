"""Echo state network trajectory predictor with a sharded dual-ascent trainer.

The readout solves the ridge problem

    min_W  1/(2Q) ||X^T W - Y||^2 + xi ||W||^2

through its Fenchel dual.  Samples (columns of X) are split into row blocks
of the dual matrix A; each worker maximizes a local quadratic model of the
dual over its block in closed form and a master sums the updates.  At any
dual point the primal readout is W = V(A)^T / 2 with V(A) = (X A)^T / (xi Q).
"""
from __future__ import annotations

import warnings
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Reservoir:
    w_in: np.ndarray      # (N_r, N_i)
    w_rec: np.ndarray     # (N_r, N_r)
    state: np.ndarray     # (N_r,)

    @classmethod
    def create(cls, input_dim: int, reservoir_dim: int, rng: np.random.Generator,
               spectral_radius: float | None = None) -> "Reservoir":
        w_in = rng.uniform(0.0, 1.0, (reservoir_dim, input_dim))
        w_rec = rng.uniform(0.0, 1.0, (reservoir_dim, reservoir_dim))
        if spectral_radius is not None:
            # entries are positive, so the Perron root is the spectral radius
            w_rec *= spectral_radius / np.max(np.abs(np.linalg.eigvals(w_rec)))
        return cls(w_in, w_rec, np.zeros(reservoir_dim))

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def reservoir_dim(self) -> int:
        return self.w_in.shape[0]

    def copy(self) -> "Reservoir":
        return Reservoir(self.w_in, self.w_rec, self.state.copy())


def reservoir_step(res: Reservoir, x: np.ndarray, state: np.ndarray | None = None) -> np.ndarray:
    """tanh(W_in x + W_rec s); pure, ``res`` is not modified."""
    x = np.asarray(x, dtype=float)
    if x.shape != (res.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({res.input_dim},)")
    s = res.state if state is None else state
    return np.tanh(res.w_in @ x + res.w_rec @ s)


@dataclass
class Readout:
    weights: np.ndarray | None = None   # (N_i + N_r, N_o)
    regularization: float = 0.25        # xi
    strong_convexity: float = 1.0       # zeta
    smoothness: float = 1.0             # mu, kept for completeness
    kappa: float | None = None          # None -> n_workers / zeta at training time

    @property
    def trained(self) -> bool:
        return self.weights is not None


def readout_predict(res: Reservoir, readout: Readout, x: np.ndarray, state: np.ndarray | None = None) -> np.ndarray:
    if not readout.trained:
        raise RuntimeError("readout has not been trained")
    s = res.state if state is None else state
    return readout.weights.T @ np.concatenate([np.asarray(x, dtype=float), s])


# ---------------------------------------------------------------------------
# dual trainer


@dataclass
class DualState:
    dual: np.ndarray                  # A, (Q, N_o)
    model: np.ndarray                 # V(A), (N_o, d)
    shards: list[np.ndarray]          # sample indices per worker
    round: int = 0


def dual_objective(x: np.ndarray, y: np.ndarray, a: np.ndarray, xi: float) -> float:
    """D(A) = -||XA||^2/(4 xi Q^2) + <A, Y>/Q - ||A||^2/(2Q)."""
    q = x.shape[1]
    xa = x @ a
    return float(-np.sum(xa * xa) / (4 * xi * q * q) + np.sum(a * y) / q - np.sum(a * a) / (2 * q))


def model_from_dual(x: np.ndarray, a: np.ndarray, xi: float) -> np.ndarray:
    return (x @ a).T / (xi * x.shape[1])


def ridge_closed_form(x: np.ndarray, y: np.ndarray, xi: float) -> np.ndarray:
    """Centralized solution (X X^T + 2 xi Q I)^-1 X Y."""
    d, q = x.shape
    return np.linalg.solve(x @ x.T + 2 * xi * q * np.eye(d), x @ y)


def partition(q: int, n_workers: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Split sample indices 0..q-1 into ``n_workers`` non-empty blocks."""
    n_workers = min(n_workers, q)
    idx = np.arange(q) if rng is None else rng.permutation(q)
    return [np.sort(b) for b in np.array_split(idx, n_workers)]


def local_system(x_j: np.ndarray, kappa: float, xi: float, q: int) -> np.ndarray:
    """Inverse of I + kappa/(xi Q) X_j^T X_j; constant across rounds."""
    lhs = np.eye(x_j.shape[1]) + (kappa / (xi * q)) * (x_j.T @ x_j)
    cond = np.linalg.cond(lhs)
    assert np.isfinite(cond) and cond < 1e14, "local dual system is ill-conditioned"
    return np.linalg.inv(lhs)


def local_dual_step(x_j: np.ndarray, y_j: np.ndarray, a_j: np.ndarray, model: np.ndarray,
                    kappa: float, xi: float, q: int, lhs_inv: np.ndarray | None = None) -> np.ndarray:
    """Closed-form maximizer of the worker's local dual model over its block."""
    if x_j.shape[1] == 0:
        raise ValueError("empty shard")
    if lhs_inv is None:
        lhs_inv = local_system(x_j, kappa, xi, q)
    return lhs_inv @ (y_j - a_j - 0.5 * x_j.T @ model.T)


def aggregate_round(state: DualState, x: np.ndarray, deltas: list[np.ndarray], xi: float,
                    step_rule: str = "full") -> DualState:
    """Apply all worker updates; the same step scales both A and V so V stays V(A)."""
    if len(deltas) != len(state.shards):
        raise RuntimeError("round aborted: not every worker reported")
    step = 1.0 if step_rule == "full" else 1.0 / (state.round + 1)
    q = x.shape[1]
    a = state.dual.copy()
    v = state.model.copy()
    for idx, d in zip(state.shards, deltas):
        a[idx] += step * d
        v += step * (x[:, idx] @ d).T / (xi * q)
    return DualState(a, v, state.shards, state.round + 1)


@dataclass
class TrainResult:
    weights: np.ndarray
    rounds: int
    dual_history: list[float] = field(default_factory=list)
    state: DualState | None = None


def train_readout(x: np.ndarray, y: np.ndarray, n_workers: int = 3, xi: float = 0.25, zeta: float = 1.0,
                  max_rounds: int = 1000, step_rule: str = "full", kappa: float | None = None,
                  shards: list[np.ndarray] | None = None, tol: float = 1e-14,
                  track_dual: bool = False, executor: Executor | None = None) -> TrainResult:
    """Bulk-synchronous dual ascent; returns W = V(A)^T / 2.

    ``x`` is (d, Q) with samples as columns, ``y`` is (Q, N_o).  Rounds stop
    early once the largest update falls below ``tol`` relative to ``A``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(x.shape[1], -1)
    q = x.shape[1]
    if shards is None:
        shards = partition(q, n_workers)
    if sorted(np.concatenate(shards).tolist()) != list(range(q)):
        raise ValueError("shards must partition the sample indices")
    kappa = len(shards) / zeta if kappa is None else kappa
    inverses = [local_system(x[:, idx], kappa, xi, q) for idx in shards]
    state = DualState(np.zeros_like(y), np.zeros((y.shape[1], x.shape[0])), shards)
    history = [dual_objective(x, y, state.dual, xi)] if track_dual else []

    def work(j: int) -> np.ndarray:
        idx = shards[j]
        return local_dual_step(x[:, idx], y[idx], state.dual[idx], state.model, kappa, xi, q, inverses[j])

    rounds = 0
    for _ in range(max_rounds):
        if executor is None:
            deltas = [work(j) for j in range(len(shards))]
        else:
            deltas = list(executor.map(work, range(len(shards))))
        state = aggregate_round(state, x, deltas, xi, step_rule)
        rounds += 1
        if track_dual:
            history.append(dual_objective(x, y, state.dual, xi))
        biggest = max(float(np.max(np.abs(d))) for d in deltas)
        if biggest <= tol * (1.0 + float(np.max(np.abs(state.dual)))):
            break
    return TrainResult(0.5 * state.model.T, rounds, history, state)


def train_readout_fused(x: np.ndarray, y: np.ndarray, n_workers: int = 3, xi: float = 0.25,
                        zeta: float = 1.0, max_rounds: int = 1000, step_rule: str = "full",
                        kappa: float | None = None, shards: list[np.ndarray] | None = None,
                        tol: float = 1e-14) -> TrainResult:
    """Same rounds as :func:`train_readout`, carried out in sample space.

    Since X_j^T V^T = X_j^T X A / (xi Q), every worker's update is a block of
    one Q x Q linear map, so a round costs a few small matrix products.
    The iterates are identical to the worker version up to rounding.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(x.shape[1], -1)
    q = x.shape[1]
    if shards is None:
        shards = partition(q, n_workers)
    kappa = len(shards) / zeta if kappa is None else kappa
    gram_q = x.T @ x
    precond = np.zeros((q, q))
    for idx in shards:
        precond[np.ix_(idx, idx)] = local_system(x[:, idx], kappa, xi, q)
    coupling = 0.5 * gram_q / (xi * q)
    a = np.zeros_like(y)
    rounds = 0
    for r in range(max_rounds):
        delta = precond @ (y - a - coupling @ a)
        step = 1.0 if step_rule == "full" else 1.0 / (r + 1)
        a = a + step * delta
        rounds += 1
        if np.max(np.abs(delta)) <= tol * (1.0 + np.max(np.abs(a))):
            break
    model = model_from_dual(x, a, xi)
    return TrainResult(0.5 * model.T, rounds, [], DualState(a, model, shards, rounds))


# ---------------------------------------------------------------------------
# per-user predictor


@dataclass
class EsnModel:
    """One user's reservoir, readout and sliding observation window.

    With ``input_mode="displacement"`` the network sees per-slot
    displacements and the forecast is the last position plus the predicted
    displacements; with ``"position"`` it sees raw positions.  Inputs are
    divided by ``input_scale`` on the way in and multiplied back on the way
    out.
    """

    reservoir: Reservoir
    readout: Readout
    window: int = 6                       # Q
    n_workers: int = 3
    max_rounds: int = 1000
    step_rule: str = "full"
    input_scale: float = 1.0
    input_mode: str = "displacement"
    last_position: np.ndarray | None = None
    inputs: list[np.ndarray] = field(default_factory=list)   # scaled, oldest first
    states: list[np.ndarray] = field(default_factory=list)   # state after each input

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int = 2, reservoir_dim: int = 300,
               output_dim: int = 2, window: int = 6, n_workers: int = 3, xi: float = 0.25,
               zeta: float = 1.0, mu: float = 1.0, max_rounds: int = 1000, step_rule: str = "full",
               input_scale: float = 1.0, spectral_radius: float | None = None,
               input_mode: str = "displacement") -> "EsnModel":
        if output_dim != input_dim:
            raise ValueError("closed-loop rollout needs output_dim == input_dim")
        if input_mode not in ("displacement", "position"):
            raise ValueError(f"unknown input_mode {input_mode!r}")
        res = Reservoir.create(input_dim, reservoir_dim, rng, spectral_radius)
        return cls(res, Readout(None, xi, zeta, mu), window, n_workers, max_rounds, step_rule,
                   input_scale, input_mode)

    def observe(self, position: np.ndarray) -> None:
        pos = np.asarray(position, dtype=float)
        if self.input_mode == "displacement":
            raw = np.zeros_like(pos) if self.last_position is None else pos - self.last_position
        else:
            raw = pos
        self.last_position = pos.copy()
        x = raw / self.input_scale
        self.reservoir.state = reservoir_step(self.reservoir, x)
        self.inputs.append(x)
        self.states.append(self.reservoir.state.copy())
        keep = self.window + 1
        if len(self.inputs) > keep:
            del self.inputs[:-keep]
            del self.states[:-keep]

    def training_window(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Hidden matrix X (newest column first) and one-step-ahead targets Y."""
        if len(self.inputs) < self.window + 1:
            return None
        cols, targets = [], []
        for k in range(len(self.inputs) - 2, len(self.inputs) - 2 - self.window, -1):
            cols.append(np.concatenate([self.inputs[k], self.states[k]]))
            targets.append(self.inputs[k + 1])
        return np.array(cols).T, np.array(targets)

    def fit(self) -> TrainResult | None:
        data = self.training_window()
        if data is None:
            return None
        x, y = data
        result = train_readout_fused(x, y, self.n_workers, self.readout.regularization,
                               self.readout.strong_convexity, self.max_rounds, self.step_rule,
                               self.readout.kappa)
        self.readout.weights = result.weights
        return result

    def predict(self, horizon: int) -> np.ndarray:
        """(horizon, 2) closed-loop forecast; zero-order hold before the first fit."""
        if self.last_position is None:
            raise RuntimeError("no observations yet")
        last = self.last_position
        if horizon <= 0:
            return np.empty((0, last.size))
        if not self.readout.trained:
            return np.tile(last, (horizon, 1))
        x, s = self.inputs[-1], self.reservoir.state
        out = []
        for step in range(horizon):
            if step > 0:
                s = reservoir_step(self.reservoir, x, s)
            x = readout_predict(self.reservoir, self.readout, x, s)
            out.append(x * self.input_scale)
        out = np.array(out)
        if self.input_mode == "displacement":
            return last + np.cumsum(out, axis=0)
        return out

    # -- snapshots -------------------------------------------------------
    def to_dict(self) -> dict:
        r = self.reservoir
        return {
            "format": "esn-snapshot/1",
            "input_dim": r.input_dim, "reservoir_dim": r.reservoir_dim,
            "output_dim": r.input_dim, "window": self.window, "n_workers": self.n_workers,
            "max_rounds": self.max_rounds, "step_rule": self.step_rule, "input_scale": self.input_scale,
            "input_mode": self.input_mode,
            "last_position": None if self.last_position is None else self.last_position.tolist(),
            "regularization": self.readout.regularization,
            "strong_convexity": self.readout.strong_convexity, "smoothness": self.readout.smoothness,
            "kappa": self.readout.kappa,
            "w_in": r.w_in.ravel().tolist(), "w_rec": r.w_rec.ravel().tolist(),
            "state": r.state.tolist(),
            "readout": None if self.readout.weights is None else self.readout.weights.ravel().tolist(),
            "inputs": [v.tolist() for v in self.inputs], "states": [v.tolist() for v in self.states],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EsnModel":
        ni, nr, no = d["input_dim"], d["reservoir_dim"], d["output_dim"]
        res = Reservoir(np.array(d["w_in"]).reshape(nr, ni), np.array(d["w_rec"]).reshape(nr, nr), np.array(d["state"]))
        w = None if d["readout"] is None else np.array(d["readout"]).reshape(ni + nr, no)
        readout = Readout(w, d["regularization"], d["strong_convexity"], d["smoothness"], d["kappa"])
        last = None if d["last_position"] is None else np.array(d["last_position"])
        return cls(res, readout, d["window"], d["n_workers"], d["max_rounds"], d["step_rule"], d["input_scale"],
                   d["input_mode"], last, [np.array(v) for v in d["inputs"]], [np.array(v) for v in d["states"]])


def nrmse(predicted: np.ndarray, true: np.ndarray) -> float:
    """Per-coordinate RMSE over the window divided by the true range, averaged.

    Coordinates with zero range fall back to the unnormalized RMSE and warn.
    """
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(true, dtype=float)
    if p.shape != t.shape or p.shape[0] < 1:
        raise ValueError("need equal-length, non-empty trajectories")
    p, t = p.reshape(len(p), -1), t.reshape(len(t), -1)
    rmse = np.sqrt(np.mean((p - t) ** 2, axis=0))
    span = t.max(axis=0) - t.min(axis=0)
    if np.any(span == 0):
        warnings.warn("zero-range coordinate in NRMSE; using unnormalized RMSE there", RuntimeWarning)
    return float(np.mean(np.where(span > 0, rmse / np.where(span > 0, span, 1.0), rmse)))
