"""Differentiable SINR and sum-rate evaluators for the three scenarios, plus
the feasibility projections used after postprocessing.

Every evaluator accepts either a kernel Tensor holding split-complex variables
(gradients flow) or a plain numpy array of complex/real variables (a RateReport
of numpy values comes back). Rates are log2(1+SINR) computed via log1p.
"""

import numpy as np

from . import numkernel as nk
from .chansim import COOP, IBC, IC
from .hetgraph import split_complex

LN2 = float(np.log(2.0))
FEAS_TOL = 1e-9


class RateReport:
    """Per-UE SINR (linear), per-UE rate (bits/s/Hz), and their sum."""

    def __init__(self, sinr, rates, sum_rate):
        self.sinr = sinr
        self.rates = rates
        self.sum_rate = sum_rate

    def sum_rate_value(self):
        return float(self.sum_rate.data) if isinstance(self.sum_rate, nk.Tensor) \
            else float(self.sum_rate)


def _as_split_tensor(v, complex_input):
    """Normalize variables to a split-real Tensor; remember if grads flow."""
    if isinstance(v, nk.Tensor):
        return v, True
    v = np.asarray(v)
    if complex_input:
        v = split_complex(v.astype(np.complex128))
    return nk.constant(v), False


def _report(sinr_t, tensor_in):
    rates = nk.log1p(sinr_t) * (1.0 / LN2)
    total = nk.tsum(rates)
    if tensor_in:
        return RateReport(sinr_t, rates, total)
    return RateReport(sinr_t.data.copy(), rates.data.copy(), float(total.data))


def _complex_quadratic(h_re, h_im, v, n):
    """|h^H v|^2 rows for stacked constants h and split tensor v (.., 2n)."""
    v_re, v_im = v[..., :n], v[..., n:]
    re = nk.tsum(h_re * v_re + h_im * v_im, axis=-1)
    im = nk.tsum(h_re * v_im - h_im * v_re, axis=-1)
    return nk.square(re) + nk.square(im)


def sinr_ic(instance, v):
    """Rates for per-pair beamforming; v is (K, 2N) split or (K, N) complex.

    SINR_k = |h_{m1(k),k}^H v_k|^2 / (sum_{k'!=k} |h_{m1(k'),k}^H v_{k'}|^2 + noise_k).
    """
    v_t, tensor_in = _as_split_tensor(v, complex_input=True)
    k, n = instance.n_ue, instance.channels.shape[2]
    if v_t.data.shape != (k, 2 * n):
        raise ValueError(f"expected beams of split shape ({k}, {2 * n}), got {v_t.data.shape}")
    h_eff = instance.channels[instance.serving]  # (K, K, N): [j, k] = h_{m1(j), k}
    budgets = instance.budgets[instance.serving]
    norms = (v_t.data ** 2).sum(axis=1)
    if np.any(norms > budgets + FEAS_TOL):
        raise ValueError("beams violate the per-pair power budget")

    v3 = nk.reshape(v_t, (k, 1, 2 * n))
    power = _complex_quadratic(nk.constant(h_eff.real), nk.constant(h_eff.imag), v3, n)
    idx = np.arange(k)
    signal = power[idx, idx]
    interference = nk.tsum(power, axis=0) - signal
    sinr = signal / (interference + nk.constant(instance.noise))
    return _report(sinr, tensor_in)


def sinr_ibc(instance, p):
    """Rates for per-UE power allocation over the equivalent scalar gains."""
    p_t, tensor_in = _as_split_tensor(p, complex_input=False)
    k = instance.n_ue
    p_t = nk.reshape(p_t, (k,))
    if np.any(p_t.data < -FEAS_TOL):
        raise ValueError("powers must be nonnegative")
    cell_sums = np.bincount(instance.rx_cell, weights=p_t.data,
                            minlength=instance.budgets.size)
    if np.any(cell_sums > instance.budgets + FEAS_TOL):
        raise ValueError("cell power budgets violated")
    g2 = nk.constant(instance.gains[instance.serving] ** 2)  # (K, K): [j, k]
    received = nk.matmul(p_t, g2)                            # totals per UE
    idx = np.arange(k)
    signal = g2[idx, idx] * p_t
    sinr = signal / (received - signal + nk.constant(instance.noise))
    return _report(sinr, tensor_in)


def sinr_coop(instance, v):
    """Rates for cooperative beams; v is (M, K, 2N) split or (M, K, N) complex.

    Signals combine coherently across BSs before squaring:
    SINR_k = |sum_m h_{m,k}^H v_{m,k}|^2 / (sum_{k'!=k} |sum_m h_{m,k}^H v_{m,k'}|^2 + noise_k).
    """
    v_t, tensor_in = _as_split_tensor(v, complex_input=True)
    m, k, n = instance.channels.shape
    if v_t.data.shape != (m, k, 2 * n):
        raise ValueError(f"expected beams of split shape ({m}, {k}, {2 * n}), "
                         f"got {v_t.data.shape}")
    per_bs = (v_t.data ** 2).sum(axis=(1, 2))
    if np.any(per_bs > instance.budgets + FEAS_TOL):
        raise ValueError("beams violate a per-BS power budget")

    h_re = nk.constant(instance.channels.real[:, None, :, :])  # (M, 1, K, N)
    h_im = nk.constant(instance.channels.imag[:, None, :, :])
    v_re = nk.reshape(v_t, (m, k, 1, 2 * n))[..., :n]           # (M, K', 1, N)
    v_im = nk.reshape(v_t, (m, k, 1, 2 * n))[..., n:]
    re = nk.tsum(h_re * v_re + h_im * v_im, axis=(0, 3))        # (K', K)
    im = nk.tsum(h_re * v_im - h_im * v_re, axis=(0, 3))
    power = nk.square(re) + nk.square(im)
    idx = np.arange(k)
    signal = power[idx, idx]
    interference = nk.tsum(power, axis=0) - signal
    sinr = signal / (interference + nk.constant(instance.noise))
    return _report(sinr, tensor_in)


def evaluate(instance, variables):
    """Dispatch to the scenario's rate evaluator."""
    if instance.kind == IC:
        return sinr_ic(instance, variables)
    if instance.kind == IBC:
        return sinr_ibc(instance, variables)
    if instance.kind == COOP:
        return sinr_coop(instance, variables)
    raise ValueError(f"unknown scenario kind {instance.kind!r}")


# ---------------------------------------------------------------------------
# feasibility projections (scale-down only, differentiable a.e.)


def normalize_ic(raw, instance):
    """Scale each beam into its power ball: v_k <- v_k * min(1, sqrt(P_k)/||v_k||)."""
    raw = nk.as_tensor(raw)
    k = instance.n_ue
    budgets = instance.budgets[instance.serving]
    if raw.data.ndim != 2 or raw.data.shape[0] != k:
        raise ValueError(f"expected (K, 2N) raw beams, got {raw.data.shape}")
    norms2 = nk.tsum(nk.square(raw), axis=1)
    scale = nk.sqrt(nk.constant(budgets) / nk.maximum(norms2, nk.constant(budgets)))
    return raw * nk.reshape(scale, (k, 1))


def normalize_ibc(raw, instance):
    """Squash raw scores into (0, P_b) per UE, then rescale each cell to budget."""
    raw = nk.as_tensor(raw)
    k = instance.n_ue
    raw = nk.reshape(raw, (k,))
    cell_budget = instance.budgets[instance.rx_cell]
    p = nk.sigmoid(raw) * nk.constant(cell_budget)
    ind = np.zeros((instance.budgets.size, k))
    ind[instance.rx_cell, np.arange(k)] = 1.0
    cell_sums = nk.matmul(nk.constant(ind), p)
    cell_scale = nk.constant(instance.budgets) / nk.maximum(cell_sums,
                                                            nk.constant(instance.budgets))
    return p * nk.matmul(cell_scale, nk.constant(ind))


def normalize_coop(raw, instance):
    """Per-BS ball scaling: row m shrinks when sum_k ||v_{m,k}||^2 exceeds P_m."""
    raw = nk.as_tensor(raw)
    m = instance.channels.shape[0]
    if raw.data.ndim != 3 or raw.data.shape[0] != m:
        raise ValueError(f"expected (M, K, 2N) raw beams, got {raw.data.shape}")
    norms2 = nk.tsum(nk.square(raw), axis=(1, 2))
    scale = nk.sqrt(nk.constant(instance.budgets)
                    / nk.maximum(norms2, nk.constant(instance.budgets)))
    return raw * nk.reshape(scale, (m, 1, 1))


def normalize(raw, instance):
    if instance.kind == IC:
        return normalize_ic(raw, instance)
    if instance.kind == IBC:
        return normalize_ibc(raw, instance)
    if instance.kind == COOP:
        return normalize_coop(raw, instance)
    raise ValueError(f"unknown scenario kind {instance.kind!r}")


# ---------------------------------------------------------------------------
# feasibility residuals (numpy, used by eval/fuzz checks)


def _data(v):
    return v.data if isinstance(v, nk.Tensor) else np.asarray(v)


def constraint_residual(instance, variables):
    """Worst-case nonnegative violation of the scenario's power constraints.

    Variables may be split-real or complex; the squared norms agree either way.
    """
    v = _data(variables)
    if instance.kind == IC:
        norms = np.abs(v) ** 2 if np.iscomplexobj(v) else v ** 2
        used = norms.sum(axis=1)
        return float(np.maximum(used - instance.budgets[instance.serving], 0.0).max())
    if instance.kind == IBC:
        p = np.asarray(v, dtype=np.float64).reshape(-1)
        neg = np.maximum(-p, 0.0).max() if p.size else 0.0
        sums = np.bincount(instance.rx_cell, weights=p, minlength=instance.budgets.size)
        over = np.maximum(sums - instance.budgets, 0.0).max()
        return float(max(neg, over))
    if instance.kind == COOP:
        norms = np.abs(v) ** 2 if np.iscomplexobj(v) else v ** 2
        used = norms.sum(axis=tuple(range(1, norms.ndim)))
        return float(np.maximum(used - instance.budgets, 0.0).max())
    raise ValueError(f"unknown scenario kind {instance.kind!r}")
