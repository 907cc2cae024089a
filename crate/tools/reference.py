#!/usr/bin/env python3
"""Independent reference computations for the frozen constants used in unit tests.

Everything here is derived with plain numpy, separately from the Rust
implementation, so the two can be compared number-for-number. Run it to
regenerate the constants pasted into the test modules:

    python3 tools/reference.py

Sections:
  1. plane-stress quadrilateral with incompatible bending modes
     (statically condensed), unit modulus, nu = 0.3
  2. geometric (initial-stress) stiffness building blocks
  3. a tiny clamped column analyzed end to end: equilibrium solve,
     centroid stresses, stress stiffness, buckling load factors from a
     dense generalized eigensolve
  4. density-filter weights on a small grid
  5. smoothed Heaviside projection samples
"""

import numpy as np

np.set_printoptions(precision=15, linewidth=120, suppress=False)

NU = 0.3
GP = 1.0 / np.sqrt(3.0)  # 2x2 Gauss abscissa


def dmat(nu=NU):
    """Plane-stress constitutive matrix for unit Young's modulus."""
    return np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
    ) / (1.0 - nu * nu)


# Corner nodes, counterclockwise from lower-left. Dof order
# [u0 v0 u1 v1 u2 v2 u3 v3].
XI = np.array([-1.0, 1.0, 1.0, -1.0])
ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def b_mats(xi, eta, h):
    """Strain-displacement rows for the compatible (3x8) and incompatible
    (3x4) parts, on a square element with edge h."""
    j = 2.0 / h  # d(xi)/dx
    dn_dxi = 0.25 * XI * (1.0 + eta * ETA)
    dn_deta = 0.25 * ETA * (1.0 + xi * XI)
    dn_dx = j * dn_dxi
    dn_dy = j * dn_deta
    bu = np.zeros((3, 8))
    for i in range(4):
        bu[0, 2 * i] = dn_dx[i]
        bu[1, 2 * i + 1] = dn_dy[i]
        bu[2, 2 * i] = dn_dy[i]
        bu[2, 2 * i + 1] = dn_dx[i]
    # bending modes p1 = 1 - xi^2, p2 = 1 - eta^2, each on both components
    dp1_dx = j * (-2.0 * xi)
    dp2_dy = j * (-2.0 * eta)
    ba = np.zeros((3, 4))
    ba[0, 0] = dp1_dx          # u * p1 -> exx
    ba[2, 1] = dp2_dy          # u * p2 -> gxy (du/dy)
    ba[2, 2] = dp1_dx          # v * p1 -> gxy (dv/dx)
    ba[1, 3] = dp2_dy          # v * p2 -> eyy
    return bu, ba


def element_matrices(h=1.0, nu=NU):
    """Condensed 8x8 stiffness, recovery matrix, centroid stress operator."""
    d = dmat(nu)
    kuu = np.zeros((8, 8))
    kua = np.zeros((8, 4))
    kaa = np.zeros((4, 4))
    det_j = h * h / 4.0
    for xi in (-GP, GP):
        for eta in (-GP, GP):
            bu, ba = b_mats(xi, eta, h)
            kuu += bu.T @ d @ bu * det_j
            kua += bu.T @ d @ ba * det_j
            kaa += ba.T @ d @ ba * det_j
    rec = -np.linalg.solve(kaa, kua.T)          # a = rec @ u
    ke0 = kuu + kua @ rec                       # condensed stiffness
    bu0, ba0 = b_mats(0.0, 0.0, h)
    bhat = bu0 + ba0 @ rec                      # centroid strain operator
    s0 = d @ bhat                               # centroid stress operator
    return kuu, kua, kaa, ke0, rec, bhat, s0


def geometric_blocks(h=1.0):
    """Unit-stress geometric stiffness blocks g_xx, g_yy, g_xy (8x8)."""
    det_j = h * h / 4.0
    j = 2.0 / h
    blocks = [np.zeros((8, 8)) for _ in range(3)]
    s_unit = [
        np.array([[1.0, 0.0], [0.0, 0.0]]),
        np.array([[0.0, 0.0], [0.0, 1.0]]),
        np.array([[0.0, 1.0], [1.0, 0.0]]),
    ]
    for xi in (-GP, GP):
        for eta in (-GP, GP):
            dn_dx = j * 0.25 * XI * (1.0 + eta * ETA)
            dn_dy = j * 0.25 * ETA * (1.0 + xi * XI)
            gm = np.zeros((4, 8))  # [du/dx du/dy dv/dx dv/dy]
            for i in range(4):
                gm[0, 2 * i] = dn_dx[i]
                gm[1, 2 * i] = dn_dy[i]
                gm[2, 2 * i + 1] = dn_dx[i]
                gm[3, 2 * i + 1] = dn_dy[i]
            for c, su in enumerate(s_unit):
                sig = np.zeros((4, 4))
                sig[:2, :2] = su
                sig[2:, 2:] = su
                blocks[c] += gm.T @ sig @ gm * det_j
    return blocks


def assemble_column(nelx, nely, h, e_mod=1.0):
    """Stiffness, per-element dof maps for a nelx x nely grid of square
    elements. Node id = ix*(nely+1) + iy, dofs (2id, 2id+1)."""
    _, _, _, ke0, _, _, s0 = element_matrices(h)
    nn = (nelx + 1) * (nely + 1)
    ndof = 2 * nn
    k = np.zeros((ndof, ndof))
    edofs = []
    for ex in range(nelx):
        for ey in range(nely):
            nodes = [
                ex * (nely + 1) + ey,
                (ex + 1) * (nely + 1) + ey,
                (ex + 1) * (nely + 1) + ey + 1,
                ex * (nely + 1) + ey + 1,
            ]
            ed = []
            for n in nodes:
                ed += [2 * n, 2 * n + 1]
            edofs.append(ed)
            k[np.ix_(ed, ed)] += e_mod * ke0
    return k, edofs, s0


def tiny_column_chain(nelx=2, nely=8, h=1.0, total_load=0.01):
    """Full analysis chain on a clamped column under axial tip compression."""
    k, edofs, s0 = assemble_column(nelx, nely, h)
    ndof = k.shape[0]
    fixed = np.zeros(ndof, dtype=bool)
    for ix in range(nelx + 1):
        n = ix * (nely + 1)  # iy = 0
        fixed[2 * n] = fixed[2 * n + 1] = True
    f = np.zeros(ndof)
    # consistent nodal loads for a uniform downward traction on the top edge
    for ix in range(nelx + 1):
        n = ix * (nely + 1) + nely
        w = 0.5 if ix in (0, nelx) else 1.0
        f[2 * n + 1] = -total_load * w / nelx
    free = ~fixed
    kff = k[np.ix_(free, free)]
    u = np.zeros(ndof)
    u[free] = np.linalg.solve(kff, f[free])
    compliance = f @ u

    blocks = geometric_blocks(h)
    g = np.zeros((ndof, ndof))
    sigmas = []
    for ed in edofs:
        ue = u[ed]
        sig = (1.0 / h) * (s0 @ ue)
        sigmas.append(sig)
        ge = sig[0] * blocks[0] + sig[1] * blocks[1] + sig[2] * blocks[2]
        g[np.ix_(ed, ed)] += ge
    gff = g[np.ix_(free, free)]

    # pencil (K + lambda G) phi = 0  ->  M w = mu w, mu = 1/lambda
    l = np.linalg.cholesky(kff)
    li = np.linalg.inv(l)
    m = -(li @ gff @ li.T)
    m = 0.5 * (m + m.T)
    mu, w = np.linalg.eigh(m)
    pos = mu > 1e-12 * np.max(np.abs(mu))
    lam = np.sort(1.0 / mu[pos])
    # fundamental mode, checked for the sign convention phi' G phi < 0
    mu1_idx = np.argmax(mu)
    phi1 = li.T @ w[:, mu1_idx]
    g_energy = phi1 @ gff @ phi1
    k_energy = phi1 @ kff @ phi1
    return {
        "compliance": compliance,
        "tip_uy": u[2 * ((0) * (nely + 1) + nely) + 1],
        "sigma_e0": sigmas[0],
        "lam1": lam[0],
        "lam2": lam[1],
        "lam3": lam[2],
        "g_energy_sign": g_energy,
        "rq_check": -k_energy / g_energy,
    }


def filter_weights(r=1.5):
    """Cone-kernel weights on offsets within radius r (element lengths)."""
    acc = []
    rr = int(np.ceil(r))
    for dx in range(-rr, rr + 1):
        for dy in range(-rr, rr + 1):
            d = np.hypot(dx, dy)
            w = r - d
            if w > 0:
                acc.append((dx, dy, w))
    return acc


def heaviside(x, beta, eta=0.5):
    den = np.tanh(beta * eta) + np.tanh(beta * (1 - eta))
    return (np.tanh(beta * eta) + np.tanh(beta * (x - eta))) / den


def heaviside_deriv(x, beta, eta=0.5):
    den = np.tanh(beta * eta) + np.tanh(beta * (1 - eta))
    return beta * (1.0 / np.cosh(beta * (x - eta))) ** 2 / den


def fmt(a):
    return np.array2string(np.asarray(a), separator=", ")


def main():
    kuu, kua, kaa, ke0, rec, bhat, s0 = element_matrices()

    print("== bilinear stiffness, first row (nu = 0.3, unit E) ==")
    print(fmt(kuu[0]))
    # closed-form row for the same element, used as an independent check
    nu = NU
    kref = np.array(
        [
            0.5 - nu / 6,
            0.125 + nu / 8,
            -0.25 - nu / 12,
            -0.125 + 3 * nu / 8,
            -0.25 + nu / 12,
            -0.125 - nu / 8,
            nu / 6,
            0.125 - 3 * nu / 8,
        ]
    ) / (1 - nu * nu)
    assert np.allclose(kuu[0], kref, atol=1e-14), "bilinear row mismatch"
    print("   matches closed form: ok")

    print("\n== condensed stiffness ke0 (row 0 / diag / trace) ==")
    print(fmt(ke0[0]))
    print(fmt(np.diag(ke0)))
    print("trace:", np.trace(ke0))
    evals = np.linalg.eigvalsh(ke0)
    print("eigs:", fmt(evals))
    assert np.sum(np.abs(evals) < 1e-12) == 3, "expected 3 rigid modes"

    print("\n== full ke0 (row-major, 64 values) ==")
    print(fmt(ke0.ravel()))

    print("\n== kaa ==")
    print(fmt(kaa))
    print("== kua row 0 ==")
    print(fmt(kua[0]))

    print("\n== centroid stress operator s0 (3x8, h = 1) ==")
    print(fmt(s0.ravel()))
    assert np.allclose(s0, dmat() @ b_mats(0.0, 0.0, 1.0)[0], atol=1e-14), (
        "incompatible contribution at centroid should vanish"
    )
    print("   equals compatible-only operator at centroid: ok")

    print("\n== unit-stress geometric blocks (row 0 of each) ==")
    gb = geometric_blocks()
    for name, b in zip(("g_xx", "g_yy", "g_xy"), gb):
        print(name, fmt(b[0]))
    print("g_yy full:")
    print(fmt(gb[1].ravel()))

    # pure-bending softening: condensation must strictly reduce the energy
    ub = np.array([1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0])
    print("\n== bending energies (bilinear vs condensed) ==")
    print(ub @ kuu @ ub, ub @ ke0 @ ub)

    print("\n== tiny clamped column (2x8 elements, h=1, load 0.01) ==")
    r = tiny_column_chain()
    for key in (
        "compliance",
        "tip_uy",
        "lam1",
        "lam2",
        "lam3",
        "g_energy_sign",
        "rq_check",
    ):
        print(f"{key}: {r[key]:.15e}")
    print("sigma in element 0:", fmt(r["sigma_e0"]))

    print("\n== cone filter offsets, r = 1.5 ==")
    w = filter_weights(1.5)
    print(w)
    print("interior weight sum:", sum(x[2] for x in w))

    print("\n== projection samples (eta = 0.5) ==")
    for beta, x in ((6.0, 0.3), (6.0, 0.5), (6.0, 0.75), (2.0, 0.1)):
        print(
            f"beta={beta} x={x}: H={heaviside(x, beta):.15e} "
            f"dH={heaviside_deriv(x, beta):.15e}"
        )


if __name__ == "__main__":
    main()
