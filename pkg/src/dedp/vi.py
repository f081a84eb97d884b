"""Variational policy iteration with mean-field (Bethe) message passing.

Policy evaluation runs a forward pass of per-component marginals through
projected kernels (each component sees the other components only through
the expectations of their rate factors) and a backward pass of gathered
messages that fold the discounted length prior and the per-component
rewards into one linear-time recursion.  Policy improvement ascends the
expected complete-data log-likelihood of the event sequence, whose gradient
reduces to expectations of the messages.

Conventions
-----------
* Only population components carry messages.  The clock is deterministic,
  so it is read off the step index.
* Rewards are shifted per (clock value, component) to be non-negative before
  any message is formed; ``ElboReport.value_offset`` undoes the shift.
* Arrays are padded to the largest population domain; padded cells carry no
  mass and no rate.
* ``coupling`` says where the deterministic policy is evaluated.
  ``"conditional"`` (default) evaluates it per cell (m, x) at the expected
  state with component m set to x, which is exact for one component and for
  point-mass marginals.  ``"expected"`` evaluates it once per step at the
  expected state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DivisionDomain, LineSearchFailed, NonConvergence, RateOverflow
from .model import RATE_TOL, DedpModel, check_state
from .simulator import RolloutConfig, default_horizon, monte_carlo_value

COUPLINGS = ("conditional", "expected")

# ---------------------------------------------------------------------------
# length prior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LengthPrior:
    """q(T, m) = gamma^T (1 - gamma) / M for T = 0..H, identical for every m."""

    gamma: float
    num_components: int
    horizon: int

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if self.num_components < 1 or self.horizon < 0:
            raise ValueError("need num_components >= 1 and horizon >= 0")

    @property
    def values(self) -> np.ndarray:
        T = np.arange(self.horizon + 1)
        return self.gamma**T * (1.0 - self.gamma) / self.num_components

    @property
    def total_mass(self) -> float:
        """Sum over T <= H and m; equals 1 - gamma^(H+1)."""
        return 1.0 - self.gamma ** (self.horizon + 1)

    @property
    def tail(self) -> np.ndarray:
        """sum_{T >= t} q(T, m) for t = 0..H."""
        return np.cumsum(self.values[::-1])[::-1]


def length_prior(gamma: float, num_components: int, horizon: int) -> LengthPrior:
    return LengthPrior(gamma, num_components, horizon)


# ---------------------------------------------------------------------------
# padded per-component layout
# ---------------------------------------------------------------------------


class Layout:
    """Padded arrays over population components, shared by every pass."""

    def __init__(self, model: DedpModel):
        self.model = model
        self.pops = model.population_indices
        self.n = len(self.pops)
        if self.n == 0:
            raise ConfigError("the solver needs at least one population component")
        self.dpad = int(model.domain_max[self.pops].max()) + 1
        dm = model.domain_max[self.pops]
        x = np.arange(self.dpad)
        self.valid = x[None, :] <= dm[:, None]
        self.G = model.g_table[:, self.pops, : self.dpad]  # (V, n, dpad)
        d = model.deltas[:, self.pops].T  # (n, V)
        dest = x[None, :, None] + d[:, None, :]
        ok = (dest >= 0) & (dest <= dm[:, None, None])
        # off-domain moves have zero factor by model validation; park them on x
        dest = np.where(ok, dest, x[None, :, None])
        stay = np.broadcast_to(x[None, :, None], (self.n, self.dpad, 1))
        self.dest_flat = np.concatenate([stay, dest], axis=2) + (np.arange(self.n) * self.dpad)[:, None, None]
        tab = model.reward_table[self.pops][:, :, : self.dpad]  # (n, period, dpad)
        self.offsets = np.where(self.valid[:, None, :], tab, np.inf).min(axis=2)  # (n, period)
        self.reward = np.where(self.valid[:, None, :], tab - self.offsets[:, :, None], 0.0)
        self.num_events = model.num_events
        self.grid = x.astype(float)

    def point_mass(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=int)[self.pops]
        alpha = np.zeros((self.n, self.dpad))
        alpha[np.arange(self.n), s] = 1.0
        return alpha

    def expected_state(self, alpha: np.ndarray, clock: int) -> np.ndarray:
        s = np.zeros(self.model.num_components)
        s[self.pops] = alpha @ self.grid
        ci = self.model.clock_index
        if ci is not None:
            s[ci] = clock
        return s

    def cell_states(self, mean_state: np.ndarray) -> np.ndarray:
        """(n, dpad, M) states: the expected state with component m set to x."""
        out = np.broadcast_to(mean_state, (self.n, self.dpad, mean_state.size)).copy()
        out[np.arange(self.n), :, self.pops] = self.grid[None, :]
        return out

    def own_messages(self, beta: np.ndarray, prior: LengthPrior) -> np.ndarray:
        """Reward-carrying part b of gathered messages.

        For m-hat != m the per-(T, m) messages are identically 1 (kernels are
        stochastic), so beta_t = b_t + (M - 1) sum_{T >= t} q(T); b removes
        that constant.
        """
        return beta - (self.n - 1) * prior.tail[:, None, None] * self.valid[None]


@lru_cache(maxsize=16)
def layout_for(model: DedpModel) -> Layout:
    return Layout(model)


def _clock(model: DedpModel, s0, t: int) -> int:
    ci = model.clock_index
    return 0 if ci is None else (int(s0[ci]) + t) % model.period


def _exclusive_product(a: np.ndarray) -> np.ndarray:
    """prod over axis 1 excluding each entry itself, without division."""
    n = a.shape[1]
    before = np.ones_like(a)
    after = np.ones_like(a)
    if n > 1:
        before[:, 1:] = np.cumprod(a[:, :-1], axis=1)
        after[:, :-1] = np.cumprod(a[:, ::-1], axis=1)[:, ::-1][:, 1:]
    return before * after


def _resolve_s0(model, s0):
    s0 = model.initial_state if s0 is None else s0
    if s0 is None:
        raise ValueError("no initial state given and the model has none")
    return check_state(model, s0)


def _check_coupling(coupling):
    if coupling not in COUPLINGS:
        raise ConfigError(f"coupling must be one of {COUPLINGS}, got {coupling!r}")


# ---------------------------------------------------------------------------
# projected kernels
# ---------------------------------------------------------------------------


@dataclass
class ProjectedKernel:
    """Per-component transition table p(s'^(m), v | s^(m)) at one step.

    ``probs[m, x, 0]`` is the null event and ``probs[m, x, v]`` event v
    (1..V), which moves component m from x to x + delta_v[m].
    """

    t: int
    coeffs: np.ndarray  # (n, dpad, V) coefficient c_v used in cell (m, x)
    cross: np.ndarray  # (V, n) prod_{m' != m} E[g_v^(m')]
    probs: np.ndarray  # (n, dpad, V+1)
    mean_state: np.ndarray  # (M,) expected state, clock exact
    coupling: str

    def row_sums(self) -> np.ndarray:
        return self.probs.sum(axis=2)

    def unit_rates(self, layout: Layout) -> np.ndarray:
        """Projected rate per unit coefficient, (n, dpad, V)."""
        return np.moveaxis(layout.G * self.cross[:, :, None], 0, 2)


def _policy_coefficients(model, layout, policy, mean_state, coupling):
    if coupling == "expected":
        c = model.event_coefficients(policy.act(mean_state))
        return np.broadcast_to(c, (layout.n, layout.dpad, c.size))
    states = layout.cell_states(mean_state).reshape(-1, model.num_components)
    c = model.event_coefficients(policy.act_batch(states))
    return c.reshape(layout.n, layout.dpad, -1)


def _rates_to_probs(rates):
    probs = np.empty(rates.shape[:2] + (rates.shape[2] + 1,))
    probs[:, :, 1:] = rates
    probs[:, :, 0] = 1.0 - rates.sum(axis=2)
    return probs


def _build_kernel(model, layout, policy, alpha, t, clock, coupling) -> ProjectedKernel:
    mean_state = layout.expected_state(alpha, clock)
    coeffs = _policy_coefficients(model, layout, policy, mean_state, coupling)
    cross = _exclusive_product(np.einsum("vmx,mx->vm", layout.G, alpha))
    rates = coeffs * np.moveaxis(layout.G * cross[:, :, None], 0, 2)
    probs = _rates_to_probs(rates)
    null = probs[:, :, 0]
    if np.any(null < -RATE_TOL):
        m, x = np.unravel_index(np.argmin(null), null.shape)
        name = model.components[layout.pops[m]].name
        raise RateOverflow(f"projected rate {1.0 - null[m, x]:.6g} > 1 for {name}={x} at step {t}")
    np.maximum(null, 0.0, out=null)
    return ProjectedKernel(t, coeffs, cross, probs, mean_state, coupling)


def projected_kernel(model: DedpModel, policy, forward_marginals, t: int, s0=None,
                     coupling: str = "conditional") -> ProjectedKernel:
    """Mean-field kernel at step ``t`` given per-component marginals (n, dpad).

    The rate of event v in cell (m, x) is
    c_v g_v^(m)(x) prod_{m' != m} E[g_v^(m')(s^(m'))]; the null event takes
    the remainder.  ``s0`` fixes the clock phase (the model's initial state
    by default).
    """
    _check_coupling(coupling)
    layout = layout_for(model)
    s0 = _resolve_s0(model, s0)
    alpha = np.asarray(forward_marginals, dtype=float)
    if alpha.shape != (layout.n, layout.dpad):
        raise ValueError(f"marginals must have shape {(layout.n, layout.dpad)}")
    return _build_kernel(model, layout, policy, alpha, t, _clock(model, s0, t), coupling)


# ---------------------------------------------------------------------------
# forward / backward passes
# ---------------------------------------------------------------------------


@dataclass
class ForwardMessages:
    alpha: np.ndarray  # (H+1, n, dpad), each slice normalised per component
    kernels: list  # ProjectedKernel for t = 0..H-1
    log_norm: np.ndarray  # (H+1, n) log normalisers of the raw forward updates

    @property
    def horizon(self) -> int:
        return self.alpha.shape[0] - 1


def forward_pass(model: DedpModel, policy, horizon: int, s0=None, prior=None, reference=None,
                 coupling: str = "conditional") -> ForwardMessages:
    """alpha_{t+1}(x') proportional to sum_{x, v} alpha_t(x) p_t(x', v | x), per component.

    ``prior`` replaces the point mass at ``s0`` with factorised marginals
    (n, dpad).  With ``reference`` (marginals from a previous sweep) each
    kernel is projected from the reference rather than from the marginals
    being produced.
    """
    _check_coupling(coupling)
    layout = layout_for(model)
    s0 = _resolve_s0(model, s0)
    alpha = np.zeros((horizon + 1, layout.n, layout.dpad))
    log_norm = np.zeros((horizon + 1, layout.n))
    alpha[0] = layout.point_mass(s0) if prior is None else np.asarray(prior, dtype=float)
    kernels = []
    size = layout.n * layout.dpad
    flat = layout.dest_flat.ravel()
    for t in range(horizon):
        src = alpha[t] if reference is None else reference[t]
        k = _build_kernel(model, layout, policy, src, t, _clock(model, s0, t), coupling)
        kernels.append(k)
        raw = np.bincount(flat, weights=(alpha[t][:, :, None] * k.probs).ravel(), minlength=size)
        raw = raw.reshape(layout.n, layout.dpad)
        z = raw.sum(axis=1)
        log_norm[t + 1] = np.log(z)
        alpha[t + 1] = raw / z[:, None]
    return ForwardMessages(alpha, kernels, log_norm)


def backward_pass(model: DedpModel, forward: ForwardMessages, prior: LengthPrior | None = None,
                  s0=None) -> np.ndarray:
    """Gathered backward messages beta_t for t = H..0, shape (H+1, n, dpad).

    beta_t(x) = sum_m q(t, m) base_{t,m}(x) + sum_{x', v} p_t(x', v | x) beta_{t+1}(x')

    The base is the shifted reward R_t^(m) for the message's own component
    and 1 for every other component.
    """
    layout = layout_for(model)
    s0 = _resolve_s0(model, s0)
    H = forward.horizon
    prior = prior or length_prior(model.gamma, layout.n, H)
    q = prior.values
    beta = np.zeros((H + 1, layout.n, layout.dpad))
    for t in range(H, -1, -1):
        own = layout.reward[:, _clock(model, s0, t), :]
        beta[t] = q[t] * (own + (layout.n - 1) * layout.valid)
        if t < H:
            beta[t] += (forward.kernels[t].probs * beta[t + 1].ravel()[layout.dest_flat]).sum(axis=2)
    return beta


def conditional_backward(model: DedpModel, forward: ForwardMessages, T: int, m: int, s0=None) -> np.ndarray:
    """Per-(T, m) messages beta_{t|T,m} for t = 0..T, before gathering.

    ``m`` indexes population components.  At t = T the message is the
    shifted reward of component m on its own table and 1 on every other;
    earlier steps propagate it back through the projected kernels.
    """
    layout = layout_for(model)
    s0 = _resolve_s0(model, s0)
    out = np.zeros((T + 1, layout.n, layout.dpad))
    out[T] = layout.valid
    out[T, m] = layout.reward[m, _clock(model, s0, T)]
    for t in range(T - 1, -1, -1):
        out[t] = (forward.kernels[t].probs * out[t + 1].ravel()[layout.dest_flat]).sum(axis=2)
    return out


# ---------------------------------------------------------------------------
# policy evaluation
# ---------------------------------------------------------------------------


@dataclass
class MessageSet:
    alpha: np.ndarray  # (H+1, n, dpad)
    beta: np.ndarray  # (H+1, n, dpad) gathered
    kernels: list
    log_norm: np.ndarray
    prior: LengthPrior
    s0: tuple
    coupling: str

    @property
    def horizon(self) -> int:
        return self.alpha.shape[0] - 1

    def joint(self, t: int, layout: Layout):
        """(s, v) slices at step t: alpha_t(x) p_t(v | x) and beta_{t+1}(x + delta_v)."""
        return self.alpha[t][:, :, None] * self.kernels[t].probs, self.beta[t + 1].ravel()[layout.dest_flat]


@dataclass
class ElboReport:
    elbo: float
    iterations: int
    residual: float
    value_offset: float = 0.0

    @property
    def exp_elbo(self) -> float:
        return math.exp(self.elbo) if self.elbo > -math.inf else 0.0

    @property
    def value(self) -> float:
        """Approximate value of the unshifted rewards."""
        return self.exp_elbo + self.value_offset

    def as_dict(self) -> dict:
        return {"elbo": self.elbo, "exp_elbo": self.exp_elbo, "iterations": self.iterations,
                "residual": self.residual, "value_offset": self.value_offset}


def _weight_total(layout, messages) -> float:
    own = layout.own_messages(messages.beta, messages.prior)
    return float(np.sum(messages.alpha[0] * own[0]))


def assemble_elbo(model: DedpModel, messages: MessageSet) -> float:
    """log(M / (1 - gamma) * sum_m sum_x alpha_0(x) b_0(x)) plus the forward log normalisers.

    ``b`` is the reward-carrying part of the gathered messages, so
    M / (1 - gamma) * sum alpha_0 b_0 is the mean-field estimate of the
    truncated value of the shifted rewards.  -inf when it is zero.
    """
    layout = layout_for(model)
    z = _weight_total(layout, messages)
    if z <= 0.0:
        return -math.inf
    return math.log(layout.n) - math.log1p(-model.gamma) + math.log(z) + float(messages.log_norm.sum())


def _offset_value(model, layout, s0, H) -> float:
    return float(sum(model.gamma**t * layout.offsets[:, _clock(model, s0, t)].sum() for t in range(H + 1)))


def policy_evaluation(
    model: DedpModel,
    policy,
    horizon: int | None = None,
    tol: float = 1e-10,
    max_iters: int = 20,
    damping: float = 0.0,
    s0=None,
    coupling: str = "conditional",
    verify: bool = True,
):
    """Alternate forward and backward sweeps until messages stop changing.

    The first sweep projects each kernel from the marginals it has just
    produced.  Later sweeps re-project from the previous sweep's marginals,
    optionally damped.  Returns (MessageSet, ElboReport).  Raises
    NonConvergence, carrying the last (messages, report), if the residual
    stays above ``tol``.

    Because the first sweep already projects every kernel from its own
    final marginal, an undamped second sweep reproduces it exactly.
    ``verify=False`` skips that confirming sweep and reports one iteration
    with residual 0.
    """
    if not (0.0 <= damping < 1.0):
        raise ValueError("damping must lie in [0, 1)")
    layout = layout_for(model)
    s0 = _resolve_s0(model, s0)
    H = default_horizon(model.gamma) if horizon is None else int(horizon)
    prior = length_prior(model.gamma, layout.n, H)
    fwd = forward_pass(model, policy, H, s0, coupling=coupling)
    beta = backward_pass(model, fwd, prior, s0)
    residual = math.inf if verify else 0.0
    it = 1
    while verify and it < max_iters:
        it += 1
        new = forward_pass(model, policy, H, s0, reference=fwd.alpha, coupling=coupling)
        if damping:
            new.alpha = (1.0 - damping) * new.alpha + damping * fwd.alpha
        new_beta = backward_pass(model, new, prior, s0)
        residual = float(max(np.abs(new.alpha - fwd.alpha).max(), np.abs(new_beta - beta).max()))
        fwd, beta = new, new_beta
        if residual <= tol:
            break
    messages = MessageSet(fwd.alpha, beta, fwd.kernels, fwd.log_norm, prior, s0, coupling)
    report = ElboReport(assemble_elbo(model, messages), it, residual, _offset_value(model, layout, s0, H))
    if residual > tol:
        raise NonConvergence(f"residual {residual:.3g} after {it} sweeps", (messages, report), residual)
    return messages, report


# ---------------------------------------------------------------------------
# policy improvement
# ---------------------------------------------------------------------------


def event_weights(model: DedpModel, messages: MessageSet, t: int) -> np.ndarray:
    """Cell-wise sensitivity alpha_t(x) g~_v(x) [b_{t+1}(x + delta_v) - b_{t+1}(x)], shape (n, dpad, V).

    ``g~`` is the projected rate per unit coefficient.  Summed against
    dc_v/dtheta this is the gradient contribution of step t.
    """
    layout = layout_for(model)
    own = messages.beta[t + 1] - (layout.n - 1) * messages.prior.tail[t + 1] * layout.valid
    nxt = own.ravel()[layout.dest_flat]
    k = messages.kernels[t]
    return messages.alpha[t][:, :, None] * k.unit_rates(layout) * (nxt[:, :, 1:] - nxt[:, :, :1])


def _coefficient_weights(model, w_events):
    """Fold per-event weights (..., V) onto shared coefficient slots (..., K)."""
    K = model.action_map.n_coeffs
    out = np.zeros(w_events.shape[:-1] + (K,))
    np.add.at(out, (..., model.coeff_index), w_events)
    return out


def policy_gradient(model: DedpModel, policy, messages: MessageSet) -> np.ndarray:
    """dL/dtheta of the expected complete-data log-likelihood, in log-value units.

    L(theta) = (1/Z) sum_{t,m,x,v} w_t(x, v) log p_t(v | x; theta) with
    weights w = alpha p b frozen at the evaluated policy.  Differentiating
    the event and null terms leaves, per event v,

        sum_{t,x} alpha g~ b_{t+1}(x + delta_v) - sum_{t,x} alpha g~ b_{t+1}(x)

    chained through dc_v/dtheta by vector-Jacobian products.
    """
    layout = layout_for(model)
    z = _weight_total(layout, messages)
    grad = np.zeros(policy.n_params)
    if z <= 0.0:
        return grad
    amap = model.action_map
    for t, k in enumerate(messages.kernels):
        w = event_weights(model, messages, t)
        zero = (k.coeffs == 0.0) & (w != 0.0)
        if messages.coupling == "expected":
            wk = _coefficient_weights(model, w.sum(axis=(0, 1)))[None]
            states = k.mean_state[None]
        else:
            live = np.any(w != 0.0, axis=2)
            if not live.any():
                continue
            wk = _coefficient_weights(model, w[live])
            states = layout.cell_states(k.mean_state)[live]
        acts = policy.act_batch(states)
        if np.any(zero):
            _check_zero_coefficients(model, acts, zero, k, live if messages.coupling != "expected" else None, t)
        grad += policy.vjp(states, amap.vjp(acts, wk))
    return grad / z


def _pair_exclusive(eg: np.ndarray) -> np.ndarray:
    """ex[j, v, m] = prod_{k not in {m, j}} eg[v, k], computed without division."""
    n = eg.shape[1]
    e2 = np.broadcast_to(eg, (n,) + eg.shape).copy()
    e2[np.arange(n), :, np.arange(n)] = 1.0
    return np.stack([_exclusive_product(e2[j]) for j in range(n)])


def elbo_gradient(model: DedpModel, policy, messages: MessageSet) -> np.ndarray:
    """Total derivative of the ELBO with respect to theta, by an adjoint sweep.

    The ELBO is log sum_t gamma^t sum_m E_{alpha_t}[R_t^(m)] up to constants,
    where every alpha_t depends on theta through the kernels and, through
    the projection, on all earlier marginals.  The adjoint lambda_t =
    d value / d alpha_t obeys

        lambda_t = q(t) R_t + K_t lambda_{t+1} + (projection terms)

    where the projection terms carry how alpha_t moves the cross-component
    expectations and the expected state the policy sees.  Replacing b by
    lambda in the message gradient gives the exact gradient.  With one
    component and conditional coupling the projection terms vanish and
    this equals ``policy_gradient``.
    """
    layout = layout_for(model)
    z = _weight_total(layout, messages)
    grad = np.zeros(policy.n_params)
    if z <= 0.0:
        return grad
    amap = model.action_map
    H = messages.horizon
    q = messages.prior.values
    pops = layout.pops
    gt = np.moveaxis(layout.G, 0, 2)  # (n, dpad, V)
    lam = q[H] * layout.reward[:, _clock(model, messages.s0, H), :]
    for t in range(H - 1, -1, -1):
        k = messages.kernels[t]
        alpha = messages.alpha[t]
        nxt = lam.ravel()[layout.dest_flat]
        dl = nxt[:, :, 1:] - nxt[:, :, :1]
        new = q[t] * layout.reward[:, _clock(model, messages.s0, t), :] + (k.probs * nxt).sum(axis=2)
        w = alpha[:, :, None] * k.unit_rates(layout) * dl  # d value / d c, per cell and event

        # cross-component expectations E[g_v^(m')] -> alpha_t^(m')
        a_vm = np.einsum("mxv,mxv->vm", alpha[:, :, None] * k.coeffs * gt, dl)
        eg = np.einsum("vmx,mx->vm", layout.G, alpha)
        ex = _pair_exclusive(eg)  # (n, V, n)
        mask = 1.0 - np.eye(layout.n)
        g_eg = np.einsum("vm,jvm,jm->vj", a_vm, ex, mask)
        new += np.einsum("vj,vjx->jx", g_eg, layout.G)

        # policy inputs: theta directly, and the expected state through alpha_t
        if messages.coupling == "expected":
            states = k.mean_state[None]
            acts = policy.act_batch(states)
            ua = amap.vjp(acts, _coefficient_weights(model, w.sum(axis=(0, 1)))[None])
            grad += policy.vjp(states, ua)
            us = policy.state_vjp(states, ua)[0, pops]  # (n,)
            new += us[:, None] * layout.grid[None, :]
        else:
            live = np.any(w != 0.0, axis=2)
            if live.any():
                states = layout.cell_states(k.mean_state)[live]
                acts = policy.act_batch(states)
                ua = amap.vjp(acts, _coefficient_weights(model, w[live]))
                grad += policy.vjp(states, ua)
                us = np.zeros((layout.n, layout.dpad, layout.n))
                us[live] = policy.state_vjp(states, ua)[:, pops]
                # a cell of component m sees the others at their means, itself at x
                s_other = np.einsum("mxj,mj->j", us, mask)
                new += s_other[:, None] * layout.grid[None, :]
        lam = new * layout.valid
    return grad / z


def _check_zero_coefficients(model, acts, zero, k, live, t):
    """DivisionDomain if a coefficient that is exactly 0 carries weight and could move."""
    cells = zero.any(axis=2) if live is None else zero[live].any(axis=1)
    rows = [0] if live is None else np.flatnonzero(cells)
    for r in rows:
        jac = model.action_map.jacobian(acts[r])[model.coeff_index]
        zr = zero.any(axis=(0, 1)) if live is None else zero[live][r]
        if np.any(jac[zr] != 0.0):
            raise DivisionDomain(f"zero rate coefficient with positive event mass at step {t}")


def surrogate_objective(model: DedpModel, policy, messages: MessageSet) -> float:
    """L(theta) assembled from frozen messages; ``policy_gradient`` is its gradient at the evaluated policy.

    Marginals, cross-component expectations and expected states stay at
    their evaluated values; only c = C(mu(.; theta)) moves with theta.
    """
    layout = layout_for(model)
    z = _weight_total(layout, messages)
    if z <= 0.0:
        return 0.0
    own = layout.own_messages(messages.beta, messages.prior)
    total = 0.0
    for t, k in enumerate(messages.kernels):
        w = messages.alpha[t][:, :, None] * k.probs * own[t + 1].ravel()[layout.dest_flat]
        coeffs = _policy_coefficients(model, layout, policy, k.mean_state, messages.coupling)
        p = _rates_to_probs(coeffs * k.unit_rates(layout))
        on = w != 0.0
        if np.any(p[on] <= 0.0):
            raise DivisionDomain(f"zero probability with positive weight at step {t}")
        total += float(np.sum(w[on] * np.log(p[on])))
    return total / z


@dataclass
class ImprovementResult:
    policy: object
    step: float
    elbo: float
    messages: MessageSet | None = None
    report: ElboReport | None = None


def policy_improvement(
    model: DedpModel,
    policy,
    gradient: np.ndarray,
    step: float,
    base_elbo: float | None = None,
    horizon: int | None = None,
    line_search: bool = True,
    shrink: float = 0.5,
    max_shrinks: int = 30,
    s0=None,
    coupling: str = "conditional",
    verify: bool = True,
) -> ImprovementResult:
    """theta_new = theta + step * gradient, halving the step until the ELBO does not decrease.

    With ``line_search=False`` the plain ascent step is taken unchecked.
    A zero gradient or zero step returns the policy unchanged.
    """
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != policy.theta.shape or not np.all(np.isfinite(gradient)):
        raise ValueError("gradient must be finite and match theta")
    if step == 0.0 or not np.any(gradient):
        return ImprovementResult(policy, 0.0, math.nan if base_elbo is None else base_elbo)
    if not line_search:
        return ImprovementResult(policy.with_theta(policy.theta + step * gradient), step, math.nan)
    if base_elbo is None:
        base_elbo = policy_evaluation(model, policy, horizon, s0=s0, coupling=coupling, verify=verify)[1].elbo
    eps = step
    for _ in range(max_shrinks + 1):
        cand = policy.with_theta(policy.theta + eps * gradient)
        try:
            messages, report = policy_evaluation(model, cand, horizon, s0=s0, coupling=coupling, verify=verify)
        except RateOverflow:
            eps *= shrink
            continue
        if report.elbo >= base_elbo:
            return ImprovementResult(cand, eps, report.elbo, messages, report)
        eps *= shrink
    raise LineSearchFailed(f"no non-decreasing step down to {eps / shrink:.3g}")


# ---------------------------------------------------------------------------
# the outer loop
# ---------------------------------------------------------------------------


@dataclass
class OptimizeSchedule:
    epochs: int = 150
    step: float = 1.0
    max_step: float = 1e4
    growth: float = 2.0
    tol: float = 1e-9  # relative gain in exp(ELBO) below which the loop stops
    horizon: int | None = None
    line_search: bool = True
    mc_rollouts: int = 32
    mc_seed: int = 0
    mc_horizon: int | None = None
    coupling: str = "conditional"
    gradient: str = "elbo"  # "elbo": adjoint total derivative; "messages": frozen-projection gradient


GRADIENTS = {"elbo": None, "messages": None}


@dataclass
class EpochRecord:
    epoch: int
    elbo: float
    mc_value_mean: float
    mc_value_stderr: float
    grad_norm: float
    wall_ms: float


HISTORY_COLUMNS = ("epoch", "elbo", "mc_value_mean", "mc_value_stderr", "grad_norm", "wall_ms")


def optimize(model: DedpModel, policy_init, schedule: OptimizeSchedule | None = None, s0=None, callback=None):
    """Alternate policy evaluation and gradient-based improvement.

    Epoch 0 records the initial policy.  The loop stops once an improvement
    step raises exp(ELBO) by less than ``tol`` (relative), or when the epoch
    budget is spent.  Every record carries a Monte Carlo value estimate with
    the same seed, so curves across epochs share random numbers.
    Returns (policy, list of EpochRecord).
    """
    sched = schedule or OptimizeSchedule()
    s0 = _resolve_s0(model, s0)
    H = default_horizon(model.gamma) if sched.horizon is None else sched.horizon
    mc_cfg = RolloutConfig(sched.mc_horizon or H, sched.mc_seed, sched.mc_rollouts)
    evaluate = dict(s0=s0, coupling=sched.coupling, verify=False)
    policy = policy_init
    history = []
    t_start = time.perf_counter()
    if sched.gradient not in GRADIENTS:
        raise ConfigError(f"gradient must be one of {tuple(GRADIENTS)}, got {sched.gradient!r}")
    direction = elbo_gradient if sched.gradient == "elbo" else policy_gradient
    messages, report = policy_evaluation(model, policy, H, **evaluate)
    grad = direction(model, policy, messages)

    def record(epoch):
        est = monte_carlo_value(model, policy, s0, mc_cfg)
        rec = EpochRecord(epoch, report.elbo, est.mean, est.std_error, float(np.linalg.norm(grad)),
                          1000.0 * (time.perf_counter() - t_start))
        history.append(rec)
        if callback is not None:
            callback(rec, policy)

    record(0)
    step = sched.step
    for epoch in range(1, sched.epochs + 1):
        old = report.exp_elbo
        try:
            res = policy_improvement(model, policy, grad, step, report.elbo, H, sched.line_search, **evaluate)
        except LineSearchFailed:
            res = ImprovementResult(policy, 0.0, report.elbo)
        if res.step != 0.0:
            if res.messages is None:
                res.messages, res.report = policy_evaluation(model, res.policy, H, **evaluate)
            policy, messages, report = res.policy, res.messages, res.report
            step = min(sched.max_step, res.step * sched.growth)
            grad = direction(model, policy, messages)
        record(epoch)
        if res.step == 0.0 or report.exp_elbo - old <= sched.tol * max(old, 1e-300):
            break
    return policy, history
