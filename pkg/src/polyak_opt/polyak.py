"""Stochastic Polyak-step methods and their epoch driver.

Three related methods share the machinery here:

* ``sp``      w ← w − γ·c·∇f_i(w) with c = (f_i(w) − f_i*)/‖∇f_i(w)‖².
              A zero gradient gives c = 0 (pseudoinverse convention);
              ``spsmax`` is the same step with c capped at ``step_cap``.
* ``taps``    keeps per-sample loss trackers α_i and a known target τ.
              Sampling index n (one past the data indices) triggers the
              aggregate update that drives mean(α) toward τ; data indices
              update (w, α_i) jointly with denominator ‖∇f_i‖² + 1.
* ``motaps``  like ``taps`` but the target τ is itself learned, damped by
              λ ∈ [0, lambda_max(n)).

Each method is one step of online SGD on a reformulated objective (see
``aux``), which fixes several conventions used below: the tracker mean
``alpha_bar`` is maintained incrementally but must always equal mean(alpha)
up to roundoff, and the aggregate branch reads all of its inputs from the
pre-step state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .losses import LossSpec, OptimumCertificate, full_grad, full_loss, loss_grad_i
from .traces import TraceRecord

ZERO_GRAD_SQNORM = 1e-30

METHODS = ("sp", "spsmax", "taps", "motaps")

_SCHEDULES = ("constant", "motaps_decreasing")


class NumericError(ArithmeticError):
    """A step produced a non-finite loss, gradient, or tracker value.

    ``sample_index`` is the index being processed; when the error escapes
    ``run_epochs``, ``records`` holds the trace of the epochs completed
    before the abort.
    """

    def __init__(self, message: str, sample_index: int | None = None):
        super().__init__(message)
        self.sample_index = sample_index
        self.records: list[TraceRecord] = []


@dataclass
class TapsState:
    """Iterate of the fixed-target method: weights, trackers and their mean."""

    w: np.ndarray
    alpha: np.ndarray
    alpha_bar: float
    tau_fixed: float
    t: int = 0


@dataclass
class MotapsState:
    """Iterate of the moving-target method; ``tau`` is learned."""

    w: np.ndarray
    alpha: np.ndarray
    alpha_bar: float
    tau: float
    t: int = 0


@dataclass(frozen=True)
class HyperParams:
    """Step-size and variant knobs shared by the drivers.

    ``step_cap`` only affects the sp/spsmax coefficient. ``schedule`` is
    either "constant" or "motaps_decreasing", the latter needing the
    strong-convexity constant ``mu`` (both γ and γ_τ then follow
    ``decreasing_schedule``).
    """

    gamma: float = 0.9
    gamma_tau: float = 0.1
    lam: float = 0.1
    beta: float = 0.0
    step_cap: float = math.inf
    schedule: str = "constant"
    mu: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0.0 and math.isfinite(self.gamma)):
            raise ValueError("gamma must be finite and > 0")
        if not 0.0 <= self.gamma_tau <= 1.0:
            raise ValueError("gamma_tau must lie in [0, 1]")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lambda must lie in [0, 1)")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if not self.step_cap > 0.0:
            raise ValueError("step_cap must be > 0 (inf disables the cap)")
        if self.schedule not in _SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "motaps_decreasing" and not self.mu > 0.0:
            raise ValueError("the decreasing schedule needs mu > 0")


@dataclass(frozen=True)
class StepOutcome:
    """Result of a single step.

    ``state_after`` is the updated state object (for sp: the new weight
    vector). ``sampled_index`` ∈ [0, n] where n encodes the aggregate
    branch; ``polyak_coeff`` is the applied coefficient, 0.0 on aggregate
    steps which have no per-sample coefficient.
    """

    state_after: object
    sampled_index: int
    polyak_coeff: float


# ---------------------------------------------------------------------------
# closed-form parameter rules


def lambda_max(n: int) -> float:
    """Largest admissible dampening for n samples: (2n+1)/(2n+3)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (2 * n + 1) / (2 * n + 3)


def motaps_tau_coeff(lam: float, n: int) -> float:
    """Shrink factor (1−λ)n/(λ+(1−λ)n) applied to ᾱ in the target update."""
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    return (1.0 - lam) * n / (lam + (1.0 - lam) * n)


def choose_lambda(epsilon: float, mu: float, n: int, f_star: float) -> float:
    """Dampening that keeps the residual term below ε/2 at the target rate.

    Returns 0.99·min{μ(n+1)ε/(2 f*²), lambda_max(n)}; with f* = 0 the first
    term is unconstrained and the cap alone applies. The 0.99 keeps the
    admissibility inequalities strict.
    """
    if not epsilon > 0.0:
        raise ValueError("epsilon must be > 0")
    if not mu > 0.0:
        raise ValueError("mu must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    if f_star < 0.0:
        raise ValueError("f_star must be >= 0")
    cap = lambda_max(n)
    if f_star == 0.0:
        return 0.99 * cap
    return 0.99 * min(mu * (n + 1) * epsilon / (2.0 * f_star**2), cap)


def decreasing_schedule(t: int, lam: float, mu: float, n: int) -> float:
    """Step size at step t: constant 1/((1−λ)(2n+1)) up to the switch point
    T_s = 2(2n+1)·ceil((1−λ)/μ), then ((t+1)²−t²)/(μ(t+1)²) ~ 2/(μt)."""
    if not mu > 0.0:
        raise ValueError("mu must be > 0")
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    switch = 2 * (2 * n + 1) * math.ceil((1.0 - lam) / mu)
    if t <= switch:
        return 1.0 / ((1.0 - lam) * (2 * n + 1))
    tp1 = float(t + 1)
    return (tp1 * tp1 - t * t) / (mu * tp1 * tp1)


def rule_of_thumb(sigma: float) -> tuple[float, float]:
    """(γ, γ_τ) from the regularization strength: γ = 1/(1+0.25σe^σ), γ_τ = 1−γ."""
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    gamma = 1.0 / (1.0 + 0.25 * sigma * math.exp(sigma))
    return gamma, 1.0 - gamma


def motaps_stepsizes(lam: float, n: int, preset: str = "half") -> tuple[float, float]:
    """Named constant-step presets for the moving-target method.

    "half": γ = 1/(2(1−λ)(2n+1)) with γ_τ = γ(λ+(1−λ)n); "full": the
    twice-larger γ = γ_τ = 1/((1−λ)(2n+1)). Both appear in the convergence
    analysis; they are exposed side by side rather than reconciled.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    if n < 1:
        raise ValueError("n must be >= 1")
    if preset == "half":
        gamma = 1.0 / (2.0 * (1.0 - lam) * (2 * n + 1))
        return gamma, gamma * (lam + (1.0 - lam) * n)
    if preset == "full":
        gamma = 1.0 / ((1.0 - lam) * (2 * n + 1))
        return gamma, gamma
    raise ValueError(f"unknown preset {preset!r}")


# ---------------------------------------------------------------------------
# single steps


def _finite_sample(fi: float, g: np.ndarray, i: int):
    if not (np.isfinite(fi) and np.isfinite(g).all()):
        raise NumericError(f"non-finite loss/gradient at sample {i}", sample_index=i)


def sp_step(
    spec: LossSpec,
    data: Dataset,
    w: np.ndarray,
    i: int,
    gamma: float = 1.0,
    fi_star: float = 0.0,
    step_cap: float = math.inf,
) -> StepOutcome:
    """One Polyak step on sample i; returns the new weight vector."""
    c, g = _sp_core(spec, data, w, i, fi_star, step_cap)
    return StepOutcome(w - (gamma * c) * g, i, c)


def _sp_core(spec, data, w, i, fi_star, step_cap):
    fi, g = loss_grad_i(spec, data, w, i)
    _finite_sample(fi, g, i)
    gsq = float(g @ g)
    if not math.isfinite(gsq):
        # finite gradient whose square norm overflows: the coefficient would
        # silently collapse to 0 and freeze the iterate mid-divergence
        raise NumericError(f"gradient norm overflow at sample {i}", sample_index=i)
    if gsq <= ZERO_GRAD_SQNORM:
        return 0.0, g
    c = min((fi - fi_star) / gsq, step_cap)
    if not math.isfinite(c):
        raise NumericError(f"non-finite step coefficient at sample {i}", sample_index=i)
    return c, g


def taps_step(
    state: TapsState, spec: LossSpec, data: Dataset, sampled: int, gamma: float = 1.0
) -> StepOutcome:
    """One fixed-target step; ``sampled == n`` is the aggregate branch."""
    st = _copy_taps(state)
    c, g = _taps_core(st, spec, data, st.w, sampled, gamma, st.tau_fixed)
    if g is not None:
        st.w = st.w - (gamma * c) * g
    st.t += 1
    return StepOutcome(st, sampled, c)


def _taps_core(state, spec, data, w, i, gamma, tau):
    """Tracker updates for one sampled index; the caller applies the w move.

    Returns (coefficient, gradient) on a data index and (0.0, None) on the
    aggregate index.
    """
    n = data.n
    if not 0 <= i <= n:
        raise IndexError(f"sampled index {i} out of range for n={n}")
    if i == n:
        delta = gamma * (tau - state.alpha_bar)
        if not np.isfinite(delta):
            raise NumericError("non-finite aggregate update", sample_index=i)
        state.alpha += delta
        state.alpha_bar += delta
        return 0.0, None
    fi, g = loss_grad_i(spec, data, w, i)
    _finite_sample(fi, g, i)
    gsq = float(g @ g)
    if not math.isfinite(gsq):
        raise NumericError(f"gradient norm overflow at sample {i}", sample_index=i)
    c = (fi - state.alpha[i]) / (gsq + 1.0)
    if not math.isfinite(c):
        raise NumericError(f"non-finite step coefficient at sample {i}", sample_index=i)
    state.alpha[i] += gamma * c
    state.alpha_bar += gamma * c / n
    return c, g


def motaps_step(
    state: MotapsState,
    spec: LossSpec,
    data: Dataset,
    sampled: int,
    gamma: float = 0.9,
    gamma_tau: float = 0.1,
    lam: float = 0.1,
) -> StepOutcome:
    """One moving-target step; ``sampled == n`` updates the trackers and τ."""
    if lam > lambda_max(data.n):
        raise ValueError(f"lambda={lam} exceeds lambda_max({data.n})={lambda_max(data.n)}")
    st = _copy_motaps(state)
    c, g = _motaps_core(st, spec, data, st.w, sampled, gamma, gamma_tau, lam)
    if g is not None:
        st.w = st.w - (gamma * c) * g
    st.t += 1
    return StepOutcome(st, sampled, c)


def _motaps_core(state, spec, data, w, i, gamma, gamma_tau, lam):
    n = data.n
    if i < n:
        return _taps_core(state, spec, data, w, i, gamma, state.tau)
    if i != n:
        raise IndexError(f"sampled index {i} out of range for n={n}")
    # The aggregate branch is one simultaneous SGD step on the target
    # component, so every line reads the pre-step values. Sequencing the τ
    # assignment between the α and ᾱ updates would detach alpha_bar from
    # mean(alpha) by γ·(τ_new − τ_old) at each aggregate step.
    old_tau = state.tau
    old_bar = state.alpha_bar
    delta = gamma * (old_tau - old_bar)
    new_tau = (1.0 - gamma_tau) * old_tau + gamma_tau * motaps_tau_coeff(lam, n) * old_bar
    if not (np.isfinite(delta) and np.isfinite(new_tau)):
        raise NumericError("non-finite aggregate update", sample_index=i)
    state.alpha += delta
    state.alpha_bar = old_bar + delta
    state.tau = new_tau
    return 0.0, None


def momentum_step(z, w, direction, beta: float, gamma: float):
    """Iterate-averaging momentum: z' = z − η·direction(w) with η = γ/(1−β),
    then w' = βw + (1−β)z'. The direction is evaluated at the averaged
    iterate w but applied to z; β = 0 reduces to the plain update."""
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    eta = gamma / (1.0 - beta)
    z_new = z - eta * np.asarray(direction(w), dtype=np.float64)
    return z_new, beta * w + (1.0 - beta) * z_new


def _copy_taps(state: TapsState) -> TapsState:
    return TapsState(
        w=np.array(state.w, dtype=np.float64),
        alpha=np.array(state.alpha, dtype=np.float64),
        alpha_bar=float(state.alpha_bar),
        tau_fixed=float(state.tau_fixed),
        t=state.t,
    )


def _copy_motaps(state: MotapsState) -> MotapsState:
    return MotapsState(
        w=np.array(state.w, dtype=np.float64),
        alpha=np.array(state.alpha, dtype=np.float64),
        alpha_bar=float(state.alpha_bar),
        tau=float(state.tau),
        t=state.t,
    )


# ---------------------------------------------------------------------------
# epoch driver


def sample_indices(rng: np.random.Generator, high: int, count: int) -> np.ndarray:
    """One epoch of i.i.d. uniform draws from {0, …, high−1}."""
    return rng.integers(0, high, size=count)


def _stepsizes_at(hyper: HyperParams, t: int, n: int) -> tuple[float, float]:
    if hyper.schedule == "constant":
        return hyper.gamma, hyper.gamma_tau
    g = decreasing_schedule(t, hyper.lam, hyper.mu, n)
    return g, g


def run_epochs(
    method: str,
    spec: LossSpec,
    data: Dataset,
    hyper: HyperParams,
    epochs: int,
    seed: int,
    certificate: OptimumCertificate | None = None,
    *,
    fi_star=0.0,
    tau: float | None = None,
    init_state=None,
    observer=None,
) -> list[TraceRecord]:
    """Run a Polyak-family method for whole epochs and return its trace.

    Initialization is w⁰ = 0 and α⁰ = ᾱ⁰ = τ⁰ = 0 unless ``init_state``
    supplies a starting state (copied, never mutated). Each epoch takes n
    sampled steps for sp/spsmax and n+1 for the tracker methods, sampling
    uniformly (the aggregate branch is index n). After every epoch
    ``alpha_bar`` is recomputed exactly from α, a record is appended, and
    ``observer(epoch, state_or_w)`` is invoked if given.

    ``fi_star`` (scalar or per-sample array) is the sp target; ``tau`` is
    the fixed taps target or the initial motaps τ. A numeric abort raises
    NumericError with the completed records attached.
    """
    meth = method.lower()
    if meth not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if not epochs >= 1:
        raise ValueError("epochs must be >= 1")
    n, dim = data.n, data.dim
    if n < 1:
        raise ValueError("cannot run on an empty dataset")
    if meth == "motaps" and hyper.lam > lambda_max(n):
        raise ValueError(f"lambda={hyper.lam} exceeds lambda_max({n})={lambda_max(n)}")

    fi_stars = np.full(n, float(fi_star)) if np.isscalar(fi_star) else np.asarray(fi_star, dtype=np.float64).copy()
    if fi_stars.shape != (n,):
        raise ValueError(f"fi_star must be scalar or length-{n}")

    sp_like = meth in ("sp", "spsmax")
    if sp_like:
        state = None
        w = np.zeros(dim) if init_state is None else np.array(init_state, dtype=np.float64)
    elif meth == "taps":
        state = (
            TapsState(np.zeros(dim), np.zeros(n), 0.0, float(tau or 0.0))
            if init_state is None
            else _copy_taps(init_state)
        )
    else:
        state = (
            MotapsState(np.zeros(dim), np.zeros(n), 0.0, float(tau or 0.0))
            if init_state is None
            else _copy_motaps(init_state)
        )
    if state is not None:
        w = state.w
        if state.alpha.shape != (n,):
            raise ValueError("tracker count does not match the dataset")
    if w.shape != (dim,):
        raise ValueError("state dimension does not match the dataset")

    beta = hyper.beta
    z = w.copy() if beta else w  # beta=0 keeps z aliased to w: plain updates
    rng = np.random.default_rng(seed)
    high = n if sp_like else n + 1
    records: list[TraceRecord] = []
    t = 0
    try:
        for epoch in range(1, epochs + 1):
            for idx in sample_indices(rng, high, high):
                i = int(idx)
                gamma_t, gamma_tau_t = _stepsizes_at(hyper, t, n)
                if sp_like:
                    c, g = _sp_core(spec, data, w, i, float(fi_stars[i]), hyper.step_cap)
                elif meth == "taps":
                    c, g = _taps_core(state, spec, data, w, i, gamma_t, state.tau_fixed)
                else:
                    c, g = _motaps_core(state, spec, data, w, i, gamma_t, gamma_tau_t, hyper.lam)
                if g is not None:
                    z -= (gamma_t / (1.0 - beta) * c) * g
                    w = beta * w + (1.0 - beta) * z if beta else z
                elif beta:
                    w = beta * w + (1.0 - beta) * z
                t += 1
                if state is not None:
                    state.w = w
                    state.t = t
            if state is not None:
                state.alpha_bar = float(np.mean(state.alpha))
            records.append(
                _make_record(meth, spec, data, w, state, hyper, fi_stars, certificate, epoch, t)
            )
            if observer is not None:
                observer(epoch, state if state is not None else w)
    except NumericError as err:
        err.records = records
        raise
    return records


def _make_record(meth, spec, data, w, state, hyper, fi_stars, certificate, epoch, steps):
    from . import aux  # deferred: aux builds on the state types above

    loss = full_loss(spec, data, w)
    gnorm = float(np.linalg.norm(full_grad(spec, data, w)))
    dist = float(np.linalg.norm(w - certificate.w_star)) if certificate is not None else None
    if meth in ("sp", "spsmax"):
        ev = aux.aux_value_sp(w, w, spec, data, fi_stars)
        tau_val = bar_val = None
    elif meth == "taps":
        ev = aux.aux_value_taps(w, state.alpha, w, spec, data, state.tau_fixed)
        tau_val, bar_val = state.tau_fixed, state.alpha_bar
    else:
        ev = aux.aux_value_motaps(w, state.alpha, state.tau, w, spec, data, hyper.lam)
        tau_val, bar_val = state.tau, state.alpha_bar
    return TraceRecord(
        epoch=epoch,
        passes=steps / data.n,
        full_loss=loss,
        grad_norm=gnorm,
        dist_to_opt=dist,
        aux_value=ev.h_value,
        growth_ratio=aux.growth_ratio(ev.growth_lhs, ev.growth_rhs),
        tau=tau_val,
        alpha_bar=bar_val,
    )
