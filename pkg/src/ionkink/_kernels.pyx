# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise-Coulomb kernels.

All quantities are dimensionless (length l, time 1/omega_z, energy m omega_z^2 l^2).
Arrays are indexed by ion identity, not by axial order.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef double _forces(Py_ssize_t n, const double* z, const double* x,
                    const double* kz, const double* kxm, double w2,
                    double efield, double cc, double* fz, double* fx) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double dz, dx, r2, r, ir, ir3, u = 0.0
    cdef double zi, xi, fzi, fxi
    for i in range(n):
        fz[i] = -kz[i] * z[i]
        fx[i] = -w2 * kxm[i] * x[i] + efield
        u += 0.5 * (kz[i] * z[i] * z[i] + w2 * kxm[i] * x[i] * x[i]) - efield * x[i]
    for i in range(n):
        zi = z[i]
        xi = x[i]
        fzi = 0.0
        fxi = 0.0
        for j in range(i + 1, n):
            dz = zi - z[j]
            dx = xi - x[j]
            r2 = dz * dz + dx * dx
            r = sqrt(r2)
            ir = cc / r
            ir3 = ir / r2
            u += ir
            fzi += dz * ir3
            fxi += dx * ir3
            fz[j] -= dz * ir3
            fx[j] -= dx * ir3
        fz[i] += fzi
        fx[i] += fxi
    return u


def forces(const double[::1] z, const double[::1] x, const double[::1] kz, const double[::1] kxm,
           double w2, double efield, double cc):
    """Return ``(energy, fz, fx)`` for one configuration."""
    cdef Py_ssize_t n = z.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fz = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fx = np.empty(n)
    cdef double u = _forces(n, &z[0], &x[0], &kz[0], &kxm[0], w2, efield, cc,
                            <double*> fz.data, <double*> fx.data)
    return u, fz, fx


def run_baoab(double[::1] z, double[::1] x, double[::1] vz, double[::1] vx,
              const double[::1] inv_m, const double[::1] kz, const double[::1] kxm, double cc,
              const double[::1] w2, const double[::1] efield, double dt, Py_ssize_t nsteps,
              const double[::1] c1, const double[::1] sig, const double[:, :, ::1] noise,
              Py_ssize_t stride, double[:, :, ::1] out):
    """Advance ``nsteps`` BAOAB steps in place.

    ``w2`` and ``efield`` hold the schedule at the ``nsteps + 1`` step
    boundaries.  With ``noise`` of zero length the O-step is skipped and the
    scheme is plain velocity Verlet.  Every ``stride`` steps (and at step 0)
    the state ``(z, x, vz, vx)`` is written to ``out``.  Returns the
    potential energy of the final state.
    """
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t k, i, rec = 0
    cdef bint thermo = noise.shape[0] > 0
    cdef bint record = stride > 0 and out.shape[0] > 0
    cdef double hdt = 0.5 * dt
    cdef double u
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fz_a = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fx_a = np.empty(n)
    cdef double* fz = <double*> fz_a.data
    cdef double* fx = <double*> fx_a.data
    with nogil:
        u = _forces(n, &z[0], &x[0], &kz[0], &kxm[0], w2[0], efield[0], cc, fz, fx)
        if record:
            for i in range(n):
                out[0, 0, i] = z[i]
                out[0, 1, i] = x[i]
                out[0, 2, i] = vz[i]
                out[0, 3, i] = vx[i]
            rec = 1
        for k in range(nsteps):
            for i in range(n):
                vz[i] += hdt * fz[i] * inv_m[i]
                vx[i] += hdt * fx[i] * inv_m[i]
                z[i] += hdt * vz[i]
                x[i] += hdt * vx[i]
                if thermo:
                    vz[i] = c1[i] * vz[i] + sig[i] * noise[k, 0, i]
                    vx[i] = c1[i] * vx[i] + sig[i] * noise[k, 1, i]
                z[i] += hdt * vz[i]
                x[i] += hdt * vx[i]
            u = _forces(n, &z[0], &x[0], &kz[0], &kxm[0], w2[k + 1], efield[k + 1],
                        cc, fz, fx)
            for i in range(n):
                vz[i] += hdt * fz[i] * inv_m[i]
                vx[i] += hdt * fx[i] * inv_m[i]
            if record and (k + 1) % stride == 0 and rec < out.shape[0]:
                for i in range(n):
                    out[rec, 0, i] = z[i]
                    out[rec, 1, i] = x[i]
                    out[rec, 2, i] = vz[i]
                    out[rec, 3, i] = vx[i]
                rec += 1
    return u
