"""Structure classification, kink-centre functionals and kink counting.

A zigzag has alternating transverse sides, so the staggered order parameter
``phi_j = (-1)**j x_j`` has one sign throughout a domain.  Kinks are the
interfaces where ``phi`` changes sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoDistortion, NotAKinkInterface
from .model import Configuration

NO_DISTORTION_EPS = 1e-18
INTERMEDIATE_BAND = 0.15
THRESH_FRACTION = 0.3
X_FLOOR = 0.02
CLUSTER_GAP = 2

KINDS = ("odd", "extended", "intermediate")


def _stagger(n):
    return np.where(np.arange(n) % 2 == 0, 1.0, -1.0)


# -- kink-centre functionals ---------------------------------------------------


def odd_centre_value(z, x, j):
    """Axis crossing of the line through ``(z_j, phi_j)`` and ``(z_{j+1}, phi_{j+1})``."""
    s = 1.0 if j % 2 == 0 else -1.0
    pj, pk = s * x[j], -s * x[j + 1]
    return (pj * z[j + 1] - pk * z[j]) / (pj - pk)


def odd_centre_grad(z, x, j):
    """Value and gradient (``(z..., x...)`` ordering) of the odd-kink centre."""
    n = z.size
    s = 1.0 if j % 2 == 0 else -1.0
    pj, pk = s * x[j], -s * x[j + 1]
    d = pj - pk
    val = (pj * z[j + 1] - pk * z[j]) / d
    g = np.zeros(2 * n)
    g[j] = -pk / d
    g[j + 1] = pj / d
    g[n + j] = s * pk * (z[j] - z[j + 1]) / d**2
    g[n + j + 1] = -s * pj * (z[j + 1] - z[j]) / d**2
    return val, g


def centre_odd(q, j):
    """Centre of an odd kink whose interface lies between axial ranks ``j`` and ``j + 1``."""
    if not 0 <= j < q.n - 1:
        raise NotAKinkInterface(f"interface index {j} out of range")
    if q.x[j] * q.x[j + 1] <= 0:
        raise NotAKinkInterface(f"ions {j} and {j + 1} are not on the same side")
    return float(odd_centre_value(q.z, q.x, j))


def extended_centre_grad(z, z_ref, bonds=None):
    """Value and axial gradient of the distortion-weighted centre.

    ``bonds`` optionally restricts the sums to a subset of bond indices.
    Raises :class:`NoDistortion` when the weight sum vanishes.
    """
    w = np.diff(z) - np.diff(z_ref)
    c = 0.5 * (z[1:] + z[:-1])
    if bonds is not None:
        mask = np.zeros(w.size, dtype=bool)
        mask[bonds] = True
        w = np.where(mask, w, 0.0)
    w2 = w * w
    den = w2.sum()
    if den <= NO_DISTORTION_EPS:
        raise NoDistortion("configuration has no axial distortion relative to the reference")
    val = float((c * w2).sum() / den)
    # d/dz_{j+1} and d/dz_j contributions of each bond j
    upper = 0.5 * w2 + 2 * c * w - 2 * val * w
    lower = 0.5 * w2 - 2 * c * w + 2 * val * w
    g = np.zeros(z.size)
    g[1:] += upper
    g[:-1] += lower
    return val, g / den


def centre_extended(q, ref, bonds=None):
    """Distortion-weighted mean axial position relative to kink-free ``ref``."""
    if ref.n != q.n:
        raise ValueError("reference configuration has a different number of ions")
    return extended_centre_grad(q.z, ref.z, bonds)[0]


class OddCentre:
    """Odd-kink centre at a fixed interface, as a functional of the flat ``q``."""

    kind = "odd"

    def __init__(self, j):
        self.j = int(j)

    def value(self, q):
        n = q.size // 2
        return float(odd_centre_value(q[:n], q[n:], self.j))

    def value_grad(self, q):
        n = q.size // 2
        return odd_centre_grad(q[:n], q[n:], self.j)

    def hess(self, q, h=1e-6):
        return _fd_hessian(self, q, h, np.r_[self.j, self.j + 1, q.size // 2 + self.j, q.size // 2 + self.j + 1])

    def __repr__(self):
        return f"OddCentre(j={self.j})"


class ExtendedCentre:
    """Distortion-weighted centre relative to reference axial positions."""

    kind = "extended"

    def __init__(self, z_ref):
        self.z_ref = np.asarray(z_ref, dtype=float)

    def value(self, q):
        return self.value_grad(q)[0]

    def value_grad(self, q):
        n = q.size // 2
        val, gz = extended_centre_grad(q[:n], self.z_ref)
        return val, np.concatenate([gz, np.zeros(n)])

    def hess(self, q, h=1e-6):
        n = q.size // 2
        return _fd_hessian(self, q, h, np.arange(n))


def _fd_hessian(func, q, h, active):
    m = q.size
    hmat = np.zeros((m, m))
    for k in active:
        qp = q.copy()
        qp[k] += h
        qm = q.copy()
        qm[k] -= h
        hmat[:, k] = (func.value_grad(qp)[1] - func.value_grad(qm)[1]) / (2 * h)
    return 0.5 * (hmat + hmat.T)


# -- detection -----------------------------------------------------------------


@dataclass
class Kink:
    """One kink; ``row_imbalance`` is +1 (-1) when the extra ion sits in the upper (lower) row."""

    kind: str
    centre: float
    interface: int | None = None
    span: tuple = (0, 0)
    row_imbalance: int = 0


@dataclass
class KinkReport:
    structure: str
    kinks: list = field(default_factory=list)
    zigzag_extent: tuple | None = None
    spacing: tuple = (0.0, 0.0)

    @property
    def n_kinks(self):
        return len(self.kinks)

    @property
    def centres(self):
        return [k.centre for k in self.kinks]

    def to_record(self, t=None, length=1.0):
        """JSON-ready dict; ``length`` converts centres and spacings (e.g. to meters)."""
        a, b = self.spacing
        return {
            "t": t,
            "structure": self.structure,
            "n_kinks": self.n_kinks,
            "kinks": [{"kind": k.kind, "X": k.centre * length} for k in self.kinks],
            "a": a * length,
            "b": b * length,
        }


def classify_kind(a, b, band=INTERMEDIATE_BAND):
    if b > 0 and abs(a - b) / b < band:
        return "intermediate"
    return "extended" if a > b else "odd"


def central_spacing(q):
    """``(a, b)``: row separation and axial spacing over the central third."""
    n = q.n
    lo, hi = n // 3, n - n // 3
    if n < 3:
        return 2 * float(np.median(np.abs(q.x))), float(np.median(np.diff(q.z))) if n > 1 else 0.0
    a = 2.0 * float(np.median(np.abs(q.x[lo:hi])))
    b = float(np.median(np.diff(q.z)[lo:hi - 1]))
    return a, b


def active_ions(q, x_thresh=None, x_floor=X_FLOOR):
    n = q.n
    lo, hi = n // 3, max(n - n // 3, n // 3 + 1)
    med = float(np.median(np.abs(q.x[lo:hi])))
    thr = x_thresh if x_thresh is not None else max(THRESH_FRACTION * med, x_floor)
    return np.abs(q.x) > thr


def detect(q, ref=None, *, x_thresh=None, x_floor=X_FLOOR, band=INTERMEDIATE_BAND,
           cluster_gap=CLUSTER_GAP, kind=None, x_offset=0.0, decoupled=None):
    """Classify ``q`` and locate its kinks.

    Parameters
    ----------
    q : Configuration
    ref : Configuration, optional
        Kink-free zigzag of the same system; enables distortion-weighted
        centres for extended and intermediate kinks.
    x_thresh : float, optional
        Transverse threshold; default ``0.3 * median|x|`` over the central
        third, floored at ``x_floor``.
    kind : str, optional
        Force the kink kind instead of classifying from ``a`` and ``b``.
    x_offset : float
        Transverse position of the crystal axis (non-zero under a dc field).
    decoupled : float, optional
        Ions farther than ``decoupled * a`` from the axis are treated as
        having left the lattice (e.g. a molecule pulled out by a field) and
        are dropped before counting.  Extended centres then fall back to the
        span midpoint.
    """
    if x_offset:
        q = Configuration(q.z, q.x - x_offset, q.ids)
        if ref is not None:
            ref = Configuration(ref.z, ref.x - x_offset, ref.ids)
    a, b = central_spacing(ref if ref is not None and ref.n == q.n else q)
    if decoupled is not None and a > 0:
        keep = np.abs(q.x) <= decoupled * a
        if not keep.all():
            q = Configuration(q.z[keep], q.x[keep], q.ids[keep])
            ref = None
    n = q.n
    active = active_ions(q, x_thresh, x_floor)
    idx = np.flatnonzero(active)
    if idx.size < 2:
        return KinkReport("linear", [], None, (a, b))
    extent = (float(q.z[idx].min()), float(q.z[idx].max()))
    phi = np.sign(_stagger(n)[idx] * q.x[idx])
    change = np.flatnonzero(phi[1:] != phi[:-1])
    if change.size == 0:
        return KinkReport("zigzag", [], extent, (a, b))
    # sign change c sits between active ions idx[c] and idx[c + 1]
    clusters = [[change[0]]]
    for c in change[1:]:
        if idx[c] - idx[clusters[-1][-1] + 1] <= cluster_gap:
            clusters[-1].append(c)
        else:
            clusters.append([c])
    if len(change) > max(4, n // 4):
        structure = "disordered"
    else:
        structure = "kinked"
    kkind = kind or classify_kind(a, b, band)
    spans = [(int(idx[cl[0]]), int(idx[cl[-1] + 1])) for cl in clusters if len(cl) % 2 == 1]
    kinks = []
    for k, (lo, hi) in enumerate(spans):
        interface = None
        if kkind == "odd":
            interface = _best_interface(q, lo, hi)
            if interface is not None:
                centre = float(odd_centre_value(q.z, q.x, interface))
            else:
                centre = float(0.5 * (q.z[lo] + q.z[hi]))
        else:
            centre = None
            if ref is not None and ref.n == n:
                bonds = _bond_window(spans, k, n)
                try:
                    centre = centre_extended(q, ref, bonds)
                except NoDistortion:
                    centre = None
            if centre is None:
                centre = float(0.5 * (q.z[lo] + q.z[hi]))
        # row holding the extra ion: side of the same-side adjacent pair
        pair = interface if interface is not None else _best_interface(q, lo, hi)
        imbalance = 0 if pair is None else int(np.sign(q.x[pair]))
        kinks.append(Kink(kkind, centre, interface, (lo, hi), imbalance))
    if not kinks and structure == "kinked":
        structure = "zigzag"
    return KinkReport(structure, kinks, extent, (a, b))


def _best_interface(q, lo, hi):
    best, score = None, -1.0
    for j in range(max(lo - 1, 0), min(hi + 1, q.n - 1)):
        if q.x[j] * q.x[j + 1] > 0:
            s = abs(q.x[j]) + abs(q.x[j + 1])
            if s > score:
                best, score = j, s
    return best


def _bond_window(spans, k, n):
    if len(spans) == 1:
        return None
    mids = [0.5 * (lo + hi) for lo, hi in spans]
    left = 0 if k == 0 else int(np.ceil(0.5 * (mids[k - 1] + mids[k])))
    right = n - 1 if k == len(spans) - 1 else int(np.floor(0.5 * (mids[k] + mids[k + 1])))
    return np.arange(left, right)
