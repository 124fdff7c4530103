"""Memory kernels: the generator ``h``, its primitive ``kappa`` and constants.

The kernel pair satisfies ``kappa(s) = kappa0 - int_0^s h``, ``h`` non-negative
and non-increasing, ``kappa <= Theta * h`` and the normalisation
``int_0^inf kappa = int_0^inf s h(s) ds = 1``.

Two representations are supported. A sum of exponentials

    h(s) = sum_j b_j a_j^2 exp(-a_j s),   kappa(s) = sum_j b_j a_j exp(-a_j s)

with ``sum_j b_j = 1`` has every property in closed form. A sampled kernel
stores ``h`` at increasing nodes and interpolates ``log h`` linearly, which
is exact for a single exponential and integrates in closed form.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

SMAX_THETAS = 40.0
N_CHECK = 1000


@dataclass(frozen=True, eq=False)
class MemoryKernel:
    """Kernel in exponential-sum or sampled form.

    Build with :func:`kernel_from_exponential_sum` or :func:`kernel_from_samples`.
    Instances are immutable; ``h`` and ``kappa`` accept scalars or arrays.
    """

    kind: str
    kappa0: float
    Theta: float
    s_max: float
    b: np.ndarray = None
    a: np.ndarray = None
    s_nodes: np.ndarray = None
    h_values: np.ndarray = None
    _seg: dict = field(default=None, repr=False)

    # -- evaluation -------------------------------------------------------

    def h(self, s):
        s = _check_s(s)
        if self.kind == "exp_sum":
            return _exp_sum(self.b * self.a**2, self.a, s)
        return self._sampled_eval(s)[0]

    def h_prime(self, s):
        """Derivative of ``h`` (one-sided within interpolation segments)."""
        s = _check_s(s)
        if self.kind == "exp_sum":
            return -_exp_sum(self.b * self.a**3, self.a, s)
        h = self._sampled_eval(s)[0]
        seg = self._seg
        idx = np.clip(np.searchsorted(seg["nodes"], s, side="right") - 1, 0, len(seg["nodes"]) - 2)
        out = np.where(seg["linear"][idx], seg["slope"][idx], -seg["rate"][idx] * h)
        return np.where(s > self.s_max, 0.0, out)

    def kappa(self, s):
        s = _check_s(s)
        if self.kind == "exp_sum":
            return _exp_sum(self.b * self.a, self.a, s)
        return self._sampled_eval(s)[1]

    def kappa_integral(self, s):
        """``int_0^s kappa``."""
        s = _check_s(s)
        if self.kind == "exp_sum":
            out = np.zeros_like(s)
            for bj, aj in zip(self.b, self.a):
                out += -bj * np.expm1(-aj * s)
            return out
        return self._sampled_eval(s)[2]

    @property
    def n_modes(self):
        return 0 if self.a is None else len(self.a)

    def __call__(self, s):
        return self.kappa(s)

    def describe(self):
        out = {"kind": self.kind, "kappa0": self.kappa0, "Theta": self.Theta, "s_max": self.s_max}
        if self.kind == "exp_sum":
            out["modes"] = [[float(bj), float(aj)] for bj, aj in zip(self.b, self.a)]
        else:
            out["n_nodes"] = int(len(self.s_nodes))
        return out

    # -- sampled internals -------------------------------------------------

    def _sampled_eval(self, s):
        seg = self._seg
        nodes = seg["nodes"]
        idx = np.clip(np.searchsorted(nodes, s, side="right") - 1, 0, len(nodes) - 2)
        d = s - nodes[idx]
        c = seg["rate"][idx]
        h0 = seg["hl"][idx]
        lin = seg["linear"][idx]
        slope = seg["slope"][idx]
        h = np.where(lin, h0 + slope * d, h0 * np.exp(-c * d))
        # kappa as the mass to the right of s avoids cancellation in the tail
        rest = seg["width"][idx] - d
        kap = seg["kappa_left"][idx + 1] + np.where(
            lin, (h + h0 + slope * seg["width"][idx]) * 0.5 * rest, h * rest * _phi1(c * rest)
        )
        # int_{left}^{s} kappa = kappa_left*d - int_0^d (d - y) h(left + y) dy
        kint = seg["kint_left"][idx] + seg["kappa_left"][idx] * d - np.where(
            lin, h0 * d * d / 2 + slope * d**3 / 6, h0 * d * d * _phi2(c * d)
        )
        beyond = s > self.s_max
        h = np.where(beyond, 0.0, h)
        kap = np.where(beyond, 0.0, np.maximum(kap, 0.0))
        kint = np.where(beyond, seg["kint_total"], kint)
        return h, kap, kint


def _check_s(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("kernel evaluated at negative s")
    return s


def _exp_sum(weights, rates, s):
    out = np.zeros_like(s)
    for w, a in zip(weights, rates):
        out += w * np.exp(-a * s)
    return out


def _phi1(x):
    """``(1 - exp(-x)) / x`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x / 2, -np.expm1(-safe) / safe)


def _phi2(x):
    """``(exp(-x) - 1 + x) / x^2``, equal to ``int_0^1 (1 - t) exp(-x t) dt``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    return np.where(small, 0.5 - x / 6 + x * x / 24, (np.expm1(-safe) + safe) / (safe * safe))


def kernel_from_exponential_sum(modes, rescale=False, s_max=None):
    """Kernel ``h = sum b a^2 exp(-a s)`` from ``modes = [(b_1, a_1), ...]``.

    Parameters
    ----------
    modes : sequence of (float, float)
        Weights ``b_j > 0`` and rates ``a_j > 0``.
    rescale : bool
        Divide the weights by their sum instead of rejecting ``sum b != 1``.
    s_max : float, optional
        History truncation horizon, default ``40 * Theta``.
    """
    arr = np.asarray(modes, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ConfigError("exp_sum expects a non-empty list of [b, a] pairs", "/kernel/exp_sum")
    b, a = arr[:, 0].copy(), arr[:, 1].copy()
    if not np.all(np.isfinite(arr)):
        raise ConfigError("exp_sum entries must be finite", "/kernel/exp_sum")
    if np.any(b <= 0) or np.any(a <= 0):
        raise ConfigError("exp_sum weights and rates must be positive", "/kernel/exp_sum")
    total = float(b.sum())
    if abs(total - 1.0) > 1e-12:
        if not rescale:
            raise ConfigError(f"exp_sum weights sum to {total!r}, expected 1", "/kernel/exp_sum")
        b = b / total
    theta = float(1.0 / a.min())
    if s_max is None:
        s_max = SMAX_THETAS * theta
    b.setflags(write=False)
    a.setflags(write=False)
    return MemoryKernel(kind="exp_sum", kappa0=float(np.sum(b * a)), Theta=theta,
                        s_max=float(s_max), b=b, a=a)


def kernel_from_samples(s_nodes, h_values, rescale=False):
    """Sampled kernel from positive increasing nodes and non-negative ``h``.

    ``log h`` is interpolated linearly between nodes (linearly in ``h`` when a
    value is zero) and the first segment is extended to ``s = 0``. The
    kernel vanishes beyond the last node, so ``kappa0 = int_0^{s_max} h``.
    Monotonicity and (K2) are not enforced here; :func:`validate_kernel`
    reports them.
    """
    s = np.asarray(s_nodes, dtype=float)
    hv = np.asarray(h_values, dtype=float)
    if s.ndim != 1 or s.shape != hv.shape or len(s) < 2:
        raise ConfigError("sampled kernel needs matching 1-d arrays with at least 2 nodes")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(hv))):
        raise ConfigError("sampled kernel values must be finite")
    if s[0] <= 0 or np.any(np.diff(s) <= 0):
        raise ConfigError("sampled kernel nodes must be positive and strictly increasing")
    if np.any(hv < 0):
        raise ConfigError("sampled kernel h must be non-negative")
    seg = _build_segments(s, hv)
    if rescale:
        norm = seg["moment_total"]
        if norm <= 0:
            raise ConfigError("sampled kernel has zero mass")
        hv = hv / norm
        seg = _build_segments(s, hv)
    kappa0 = seg["kappa0"]
    theta = _sampled_theta(seg, s, hv)
    s.setflags(write=False)
    hv.setflags(write=False)
    return MemoryKernel(kind="sampled", kappa0=kappa0, Theta=theta, s_max=float(s[-1]),
                        s_nodes=s, h_values=hv, _seg=seg)


def _build_segments(s, hv):
    # segment 0 runs from 0 to s[0] using the slope of the first real segment
    nodes = np.concatenate([[0.0], s])
    n = len(s)
    rate = np.zeros(n)
    hl = np.zeros(n)
    linear = np.zeros(n, dtype=bool)
    slope = np.zeros(n)
    width = np.diff(nodes)
    for i in range(1, n):
        h0, h1 = hv[i - 1], hv[i]
        if h0 > 0 and h1 > 0:
            rate[i] = (np.log(h0) - np.log(h1)) / width[i]
        else:
            linear[i] = True
            slope[i] = (h1 - h0) / width[i]
        hl[i] = h0
    rate[0] = rate[1]
    linear[0] = linear[1]
    slope[0] = slope[1]
    if linear[0]:
        hl[0] = max(hv[0] - slope[0] * width[0], 0.0)
        slope[0] = (hv[0] - hl[0]) / width[0]
    else:
        hl[0] = hv[0] * np.exp(rate[0] * width[0])
    mass = np.where(linear, hl * width + 0.5 * slope * width**2, hl * width * _phi1(rate * width))
    # int over the segment of (y - left) h
    first = np.where(linear, hl * width**2 / 2 + slope * width**3 / 3,
                     hl * width**2 * (_phi1(rate * width) - _phi2(rate * width)))
    kappa_left = np.concatenate([np.cumsum(mass[::-1])[::-1], [0.0]])
    kappa0 = float(kappa_left[0])
    # int_seg kappa = kappa_left*w - int_0^w (w - y) h dy
    inner = np.where(linear, hl * width**2 / 2 + slope * width**3 / 6,
                     hl * width**2 * _phi2(rate * width))
    kseg = kappa_left[:-1] * width - inner
    kint_left = np.concatenate([[0.0], np.cumsum(kseg)])[:-1]
    moment_total = float(np.sum(nodes[:-1] * mass + first))
    return {
        "nodes": nodes, "width": width, "rate": rate, "hl": hl, "linear": linear, "slope": slope,
        "kappa0": kappa0, "kappa_left": kappa_left, "kint_left": kint_left,
        "kint_total": float(kseg.sum()), "moment_total": moment_total,
    }


def _sampled_theta(seg, s, hv):
    kap = seg["kappa_left"][1:]
    pos = hv > 0
    if not np.any(pos):
        return float("inf")
    return float(np.max(kap[pos] / hv[pos]))


def load_sampled_kernel(path, rescale=False):
    """Read a CSV file with columns ``s, h`` (header row optional)."""
    rows = []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    if rows:
                        raise
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read kernel file {path}: {exc}", "/kernel/sampled/file") from None
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or len(arr) < 2:
        raise ConfigError("kernel file needs at least two rows", "/kernel/sampled/file")
    return kernel_from_samples(arr[:, 0], arr[:, 1], rescale=rescale)


def kernel_from_spec(spec, base_dir=None):
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("kernel spec must have exactly one of exp_sum, sampled", "/kernel")
    (kind, arg), = spec.items()
    if kind == "exp_sum":
        return kernel_from_exponential_sum(arg)
    if kind == "sampled":
        if not isinstance(arg, dict) or "file" not in arg:
            raise ConfigError("sampled kernel needs a file", "/kernel/sampled")
        path = Path(arg["file"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_sampled_kernel(path, rescale=bool(arg.get("rescale", False)))
    raise ConfigError(f"unknown kernel kind {kind!r}", "/kernel")


def kappa_of(kernel, s):
    return kernel.kappa(s)


def h_of(kernel, s):
    return kernel.h(s)


def check_points(kernel, n=N_CHECK):
    lo = kernel.s_max * 1e-8 if kernel.kind == "exp_sum" else kernel.s_nodes[0]
    return np.geomspace(lo, kernel.s_max, n)


def validate_kernel(kernel, n_check=N_CHECK):
    """Check (K1), (K2), exponential decay and normalisation.

    Returns a dict with ``K1_ok``, ``K2_ok``, ``decay_ok``,
    ``normalization_error``, ``theta_min``, ``tail_bound`` and ``certified``.
    Exponential sums are certified analytically; sampled kernels only at
    their nodes.
    """
    pts = check_points(kernel, n_check)
    hp = kernel.h(pts)
    kp = kernel.kappa(pts)
    decay_ok = bool(np.all(kp <= kernel.kappa0 * np.exp(-pts / kernel.Theta) * (1 + 1e-12) + 1e-300))
    if kernel.kind == "exp_sum":
        # kappa/h is a weighted mean of 1/a_j with weights drifting to the
        # slowest mode, so its supremum is the limit 1/min a_j.
        theta_min = float(1.0 / kernel.a.min())
        k1 = bool(np.all(kernel.b > 0) and np.all(kernel.a > 0))
        norm_err = abs(float(np.sum(kernel.b)) - 1.0)
        certified = "analytic"
    else:
        hv = kernel.h_values
        k1 = bool(np.all(hv >= 0) and np.all(np.diff(hv) <= 0))
        kap_nodes = kernel.kappa(kernel.s_nodes[:-1])
        pos = hv[:-1] > 0
        theta_min = float(np.max(kap_nodes[pos] / hv[:-1][pos])) if np.any(pos) else float("inf")
        norm_err = abs(kernel._seg["kint_total"] - 1.0)
        certified = "certified at nodes only"
    k2 = bool(theta_min <= kernel.Theta * (1 + 1e-12))
    tail = kernel.kappa0 * kernel.Theta * np.exp(-kernel.s_max / kernel.Theta)
    return {
        "K1_ok": k1,
        "K2_ok": k2,
        "decay_ok": decay_ok,
        "normalization_error": float(norm_err),
        "theta_min": theta_min,
        "tail_bound": float(tail),
        "certified": certified,
    }
