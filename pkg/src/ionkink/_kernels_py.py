"""Pure-numpy fallback with the same signatures as the compiled kernels."""

import numpy as np


def forces(z, x, kz, kxm, w2, efield, cc):
    """Return ``(energy, fz, fx)`` for one configuration."""
    dz = z[:, None] - z[None, :]
    dx = x[:, None] - x[None, :]
    r2 = dz * dz + dx * dx
    np.fill_diagonal(r2, 1.0)
    ir = cc / np.sqrt(r2)
    np.fill_diagonal(ir, 0.0)
    ir3 = ir / r2
    fz = -kz * z + (dz * ir3).sum(axis=1)
    fx = -w2 * kxm * x + efield + (dx * ir3).sum(axis=1)
    u = 0.5 * np.sum(kz * z * z + w2 * kxm * x * x) - efield * x.sum() + 0.5 * ir.sum()
    return float(u), fz, fx


def run_baoab(z, x, vz, vx, inv_m, kz, kxm, cc, w2, efield, dt, nsteps,
              c1, sig, noise, stride, out):
    """Advance ``nsteps`` BAOAB steps in place (see the compiled version)."""
    hdt = 0.5 * dt
    thermo = noise.shape[0] > 0
    record = stride > 0 and out.shape[0] > 0
    u, fz, fx = forces(z, x, kz, kxm, w2[0], efield[0], cc)
    rec = 0
    if record:
        out[0] = (z, x, vz, vx)
        rec = 1
    for k in range(nsteps):
        vz += hdt * fz * inv_m
        vx += hdt * fx * inv_m
        z += hdt * vz
        x += hdt * vx
        if thermo:
            vz *= c1
            vz += sig * noise[k, 0]
            vx *= c1
            vx += sig * noise[k, 1]
        z += hdt * vz
        x += hdt * vx
        u, fz, fx = forces(z, x, kz, kxm, w2[k + 1], efield[k + 1], cc)
        vz += hdt * fz * inv_m
        vx += hdt * fx * inv_m
        if record and (k + 1) % stride == 0 and rec < out.shape[0]:
            out[rec] = (z, x, vz, vx)
            rec += 1
    return u
