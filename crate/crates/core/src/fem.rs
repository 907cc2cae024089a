//! Plane-stress finite elements on square cells and operator assembly.
//!
//! The displacement element is the 4-node bilinear quadrilateral enriched
//! with two incompatible bending modes per component, statically condensed
//! to the 8 corner dofs. Element stresses are recovered at the centroid from
//! the condensed field (where the incompatible contribution vanishes for
//! undistorted cells) and drive the initial-stress stiffness, assembled so
//! that compressive states give v'Gv < 0.

use nalgebra::{DMatrix, DVector, SMatrix};
use nalgebra_sparse::CsrMatrix;

use crate::grid::Dims;

pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Mat38 = SMatrix<f64, 3, 8>;

/// Modified SIMP material: distinct interpolations for the displacement
/// stiffness (bounded below by the void modulus) and the stress stiffness
/// (vanishing in voids), plus a rigid modulus for prescribed-solid regions.
#[derive(Debug, Clone, Copy)]
pub struct Material {
    pub e_void: f64,
    pub e_solid: f64,
    pub e_passive: f64,
    pub nu: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            e_void: 1e-6,
            e_solid: 1.0,
            e_passive: 1e3,
            nu: 0.3,
        }
    }
}

impl Material {
    /// E_k(x) = E_void + x^p (E_solid - E_void)
    pub fn stiffness_modulus(&self, x: f64, p: f64) -> f64 {
        self.e_void + x.powf(p) * (self.e_solid - self.e_void)
    }

    pub fn stiffness_modulus_deriv(&self, x: f64, p: f64) -> f64 {
        p * x.powf(p - 1.0) * (self.e_solid - self.e_void)
    }

    /// E_s(x) = x^p E_solid; keeps voids stress-free in the stability term.
    pub fn stress_modulus(&self, x: f64, p: f64) -> f64 {
        x.powf(p) * self.e_solid
    }

    pub fn stress_modulus_deriv(&self, x: f64, p: f64) -> f64 {
        p * x.powf(p - 1.0) * self.e_solid
    }
}

/// Unit-modulus element matrices for a square cell of edge `h`.
///
/// `ke0` and the unit-stress geometric blocks are independent of `h`; the
/// centroid stress operator `s0` carries the 1/h strain scaling.
#[derive(Debug, Clone)]
pub struct ElementKernel {
    pub h: f64,
    pub nu: f64,
    /// Condensed 8x8 stiffness at unit modulus.
    pub ke0: Mat8,
    /// Bilinear (non-enriched) stiffness, kept for comparisons.
    pub kuu: Mat8,
    /// Geometric stiffness per unit sigma_xx, sigma_yy, sigma_xy.
    pub g0: [Mat8; 3],
    /// Centroid stresses at unit modulus: sigma = s0 * u_e.
    pub s0: Mat38,
    /// Static recovery of the four internal dofs: a = recovery * u_e.
    pub recovery: SMatrix<f64, 4, 8>,
}

const XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

fn dmat(nu: f64) -> SMatrix<f64, 3, 3> {
    SMatrix::<f64, 3, 3>::new(
        1.0,
        nu,
        0.0,
        nu,
        1.0,
        0.0,
        0.0,
        0.0,
        (1.0 - nu) / 2.0,
    ) / (1.0 - nu * nu)
}

/// Compatible and incompatible strain-displacement rows at (xi, eta).
fn b_mats(xi: f64, eta: f64, h: f64) -> (Mat38, SMatrix<f64, 3, 4>) {
    let j = 2.0 / h;
    let mut bu = Mat38::zeros();
    for i in 0..4 {
        let dn_dx = j * 0.25 * XI[i] * (1.0 + eta * ETA[i]);
        let dn_dy = j * 0.25 * ETA[i] * (1.0 + xi * XI[i]);
        bu[(0, 2 * i)] = dn_dx;
        bu[(1, 2 * i + 1)] = dn_dy;
        bu[(2, 2 * i)] = dn_dy;
        bu[(2, 2 * i + 1)] = dn_dx;
    }
    let dp1_dx = j * (-2.0 * xi);
    let dp2_dy = j * (-2.0 * eta);
    let mut ba = SMatrix::<f64, 3, 4>::zeros();
    ba[(0, 0)] = dp1_dx;
    ba[(2, 1)] = dp2_dy;
    ba[(2, 2)] = dp1_dx;
    ba[(1, 3)] = dp2_dy;
    (bu, ba)
}

const GP: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

impl ElementKernel {
    pub fn new(h: f64, nu: f64) -> Self {
        assert!(h > 0.0, "element edge must be positive");
        let d = dmat(nu);
        let det_j = h * h / 4.0;
        let mut kuu = Mat8::zeros();
        let mut kua = SMatrix::<f64, 8, 4>::zeros();
        let mut kaa = SMatrix::<f64, 4, 4>::zeros();
        for &xi in &[-GP, GP] {
            for &eta in &[-GP, GP] {
                let (bu, ba) = b_mats(xi, eta, h);
                kuu += bu.transpose() * d * bu * det_j;
                kua += bu.transpose() * d * ba * det_j;
                kaa += ba.transpose() * d * ba * det_j;
            }
        }
        let recovery = -kaa.try_inverse().expect("kaa invertible") * kua.transpose();
        let ke0 = symmetrize(kuu + kua * recovery);
        let kuu = symmetrize(kuu);

        let (bu0, ba0) = b_mats(0.0, 0.0, h);
        let s0 = d * (bu0 + ba0 * recovery);

        let s_unit = [
            SMatrix::<f64, 2, 2>::new(1.0, 0.0, 0.0, 0.0),
            SMatrix::<f64, 2, 2>::new(0.0, 0.0, 0.0, 1.0),
            SMatrix::<f64, 2, 2>::new(0.0, 1.0, 1.0, 0.0),
        ];
        let mut g0 = [Mat8::zeros(); 3];
        for &xi in &[-GP, GP] {
            for &eta in &[-GP, GP] {
                let j = 2.0 / h;
                let mut gm = SMatrix::<f64, 4, 8>::zeros();
                for i in 0..4 {
                    let dn_dx = j * 0.25 * XI[i] * (1.0 + eta * ETA[i]);
                    let dn_dy = j * 0.25 * ETA[i] * (1.0 + xi * XI[i]);
                    gm[(0, 2 * i)] = dn_dx;
                    gm[(1, 2 * i)] = dn_dy;
                    gm[(2, 2 * i + 1)] = dn_dx;
                    gm[(3, 2 * i + 1)] = dn_dy;
                }
                for (c, su) in s_unit.iter().enumerate() {
                    let mut sig = SMatrix::<f64, 4, 4>::zeros();
                    sig.fixed_view_mut::<2, 2>(0, 0).copy_from(su);
                    sig.fixed_view_mut::<2, 2>(2, 2).copy_from(su);
                    g0[c] += gm.transpose() * sig * gm * det_j;
                }
            }
        }
        for b in &mut g0 {
            *b = symmetrize(*b);
        }
        Self {
            h,
            nu,
            ke0,
            kuu,
            g0,
            s0,
            recovery,
        }
    }

    /// Centroid stresses of an element at unit modulus.
    pub fn stress(&self, ue: &[f64; 8]) -> [f64; 3] {
        let u = SMatrix::<f64, 8, 1>::from_column_slice(ue);
        let s = self.s0 * u;
        [s[0], s[1], s[2]]
    }

    /// Initial-stress stiffness at unit stress modulus for the element
    /// displacement state `ue`. Linear in `ue`.
    pub fn ge0(&self, ue: &[f64; 8]) -> Mat8 {
        let s = self.stress(ue);
        self.g0[0] * s[0] + self.g0[1] * s[1] + self.g0[2] * s[2]
    }

    /// Quadratic forms phi' g0_c phi for the three unit-stress blocks,
    /// the building block of the stress-stiffness sensitivities.
    pub fn g_quadratic(&self, phi: &[f64; 8]) -> [f64; 3] {
        self.g_bilinear(phi, phi)
    }

    /// Mixed forms a' g0_c b for the three unit-stress blocks (the blocks
    /// are symmetric, so the argument order does not matter).
    pub fn g_bilinear(&self, a: &[f64; 8], b: &[f64; 8]) -> [f64; 3] {
        let av = SMatrix::<f64, 8, 1>::from_column_slice(a);
        let bv = SMatrix::<f64, 8, 1>::from_column_slice(b);
        [
            (av.transpose() * self.g0[0] * bv)[0],
            (av.transpose() * self.g0[1] * bv)[0],
            (av.transpose() * self.g0[2] * bv)[0],
        ]
    }

    /// Adjoint of the centroid stress operator: s0' q.
    pub fn stress_transpose(&self, q: &[f64; 3]) -> [f64; 8] {
        let qv = SMatrix::<f64, 3, 1>::from_column_slice(q);
        let v = self.s0.transpose() * qv;
        std::array::from_fn(|i| v[i])
    }
}

fn symmetrize(m: Mat8) -> Mat8 {
    (m + m.transpose()) * 0.5
}

/// Assembles the stiffness and stress-stiffness operators on one grid with
/// a precomputed sparsity pattern shared by both. Homogeneous Dirichlet dofs
/// get empty rows/columns with a unit (stiffness) or absent (stress)
/// diagonal, so constrained dofs never couple and patterns stay identical
/// across design iterations.
pub struct Assembler {
    pub dims: Dims,
    pub kernel: ElementKernel,
    fixed: Vec<bool>,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    /// element*(64) + 8a + b -> value slot, usize::MAX when constrained away
    scatter: Vec<u32>,
    diag_slot: Vec<u32>,
    edofs: Vec<[u32; 8]>,
}

const SKIP: u32 = u32::MAX;

impl Assembler {
    pub fn new(dims: Dims, kernel: ElementKernel, fixed: &[bool]) -> Self {
        assert_eq!(fixed.len(), dims.n_dofs(), "fixed mask length");
        let n = dims.n_dofs();
        let nyn = dims.nely + 1;

        // column lists per row: free rows couple to the free dofs of the
        // 3x3 node neighborhood, fixed rows keep only their diagonal
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0usize);
        for d in 0..n {
            if fixed[d] {
                col_indices.push(d);
            } else {
                let node = d / 2;
                let (ix, iy) = (node / nyn, node % nyn);
                let x0 = ix.saturating_sub(1);
                let x1 = (ix + 1).min(dims.nelx);
                let y0 = iy.saturating_sub(1);
                let y1 = (iy + 1).min(dims.nely);
                for jx in x0..=x1 {
                    for jy in y0..=y1 {
                        let m = dims.node(jx, jy);
                        for c in 0..2 {
                            let col = 2 * m + c;
                            if !fixed[col] {
                                col_indices.push(col);
                            }
                        }
                    }
                }
            }
            row_offsets.push(col_indices.len());
        }

        let slot_of = |row: usize, col: usize| -> u32 {
            let lo = row_offsets[row];
            let hi = row_offsets[row + 1];
            let cols = &col_indices[lo..hi];
            match cols.binary_search(&col) {
                Ok(k) => (lo + k) as u32,
                Err(_) => unreachable!("pattern misses entry ({row},{col})"),
            }
        };

        let ne = dims.n_elems();
        let mut scatter = vec![SKIP; ne * 64];
        let mut edofs = Vec::with_capacity(ne);
        for e in 0..ne {
            let ed = dims.elem_dofs(e);
            edofs.push(ed.map(|d| d as u32));
            for a in 0..8 {
                for b in 0..8 {
                    let (ga, gb) = (ed[a], ed[b]);
                    if fixed[ga] || fixed[gb] {
                        continue;
                    }
                    scatter[e * 64 + 8 * a + b] = slot_of(ga, gb);
                }
            }
        }
        let diag_slot = (0..n).map(|d| slot_of(d, d)).collect();

        Self {
            dims,
            kernel,
            fixed: fixed.to_vec(),
            row_offsets,
            col_indices,
            scatter,
            diag_slot,
            edofs,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.dims.n_dofs()
    }

    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        self.edofs[e].map(|d| d as usize)
    }

    fn to_csr(&self, values: Vec<f64>) -> CsrMatrix<f64> {
        let n = self.n_dofs();
        CsrMatrix::try_from_csr_data(
            n,
            n,
            self.row_offsets.clone(),
            self.col_indices.clone(),
            values,
        )
        .expect("assembler pattern is valid CSR")
    }

    /// Displacement stiffness for per-element moduli `e_k`.
    pub fn stiffness(&self, e_k: &[f64]) -> CsrMatrix<f64> {
        assert_eq!(e_k.len(), self.dims.n_elems());
        let mut values = vec![0.0; self.col_indices.len()];
        let ke0 = &self.kernel.ke0;
        for (e, s) in e_k.iter().enumerate() {
            let map = &self.scatter[e * 64..(e + 1) * 64];
            for a in 0..8 {
                for b in 0..8 {
                    let slot = map[8 * a + b];
                    if slot != SKIP {
                        values[slot as usize] += s * ke0[(a, b)];
                    }
                }
            }
        }
        for (d, f) in self.fixed.iter().enumerate() {
            if *f {
                values[self.diag_slot[d] as usize] = 1.0;
            }
        }
        self.to_csr(values)
    }

    /// Stress stiffness for the displacement state `u` and per-element
    /// stress moduli `e_s`. Linear in `u`; constrained rows/columns stay
    /// zero (no diagonal regularization).
    pub fn stress_stiffness(&self, e_s: &[f64], u: &DVector<f64>) -> CsrMatrix<f64> {
        assert_eq!(e_s.len(), self.dims.n_elems());
        assert_eq!(u.len(), self.n_dofs());
        let mut values = vec![0.0; self.col_indices.len()];
        for (e, s) in e_s.iter().enumerate() {
            if *s == 0.0 {
                continue;
            }
            let ue = self.gather(e, u);
            let ge = self.kernel.ge0(&ue);
            let map = &self.scatter[e * 64..(e + 1) * 64];
            for a in 0..8 {
                for b in 0..8 {
                    let slot = map[8 * a + b];
                    if slot != SKIP {
                        values[slot as usize] += s * ge[(a, b)];
                    }
                }
            }
        }
        self.to_csr(values)
    }

    /// Element displacement gather.
    pub fn gather(&self, e: usize, u: &DVector<f64>) -> [f64; 8] {
        let ed = &self.edofs[e];
        std::array::from_fn(|i| u[ed[i] as usize])
    }

    /// Scatter-add of an element 8-vector into a global vector, skipping
    /// constrained dofs.
    pub fn scatter_add(&self, e: usize, local: &[f64; 8], out: &mut DVector<f64>) {
        let ed = &self.edofs[e];
        for i in 0..8 {
            let d = ed[i] as usize;
            if !self.fixed[d] {
                out[d] += local[i];
            }
        }
    }
}

/// Dense copy of a sparse operator, for small oracles and tests.
pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        m[(i, j)] = *v;
    }
    m
}

/// Clamped 2x8 column under axial tip compression: the shared tiny fixture
/// whose solution chain is frozen against the independent dense reference.
#[cfg(test)]
pub(crate) fn column_fixture() -> (Assembler, DVector<f64>) {
    let dims = Dims::new(2, 8);
    let mut fixed = vec![false; dims.n_dofs()];
    for ix in 0..=2 {
        let n = dims.node(ix, 0);
        fixed[2 * n] = true;
        fixed[2 * n + 1] = true;
    }
    let asm = Assembler::new(dims, ElementKernel::new(1.0, 0.3), &fixed);
    let mut f = DVector::zeros(dims.n_dofs());
    let total = 0.01;
    for ix in 0..=2 {
        let n = dims.node(ix, 8);
        let w = if ix == 0 || ix == 2 { 0.5 } else { 1.0 };
        f[2 * n + 1] = -total * w / 2.0;
    }
    (asm, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values computed independently with tools/reference.py.
    const KE0_ROW0: [f64; 8] = [
        0.454212454212454,
        0.178571428571429,
        -0.261904761904762,
        -0.013736263736264,
        -0.287545787545787,
        -0.178571428571429,
        0.095238095238095,
        0.013736263736264,
    ];
    const KE0_TRACE: f64 = 3.6336996336996332;
    const S0_ROW0: [f64; 8] = [
        -0.549450549450549,
        -0.164835164835165,
        0.549450549450549,
        -0.164835164835165,
        0.549450549450549,
        0.164835164835165,
        -0.549450549450549,
        0.164835164835165,
    ];
    const GXX_ROW0: [f64; 8] = [
        1.0 / 3.0,
        0.0,
        -1.0 / 3.0,
        0.0,
        -1.0 / 6.0,
        0.0,
        1.0 / 6.0,
        0.0,
    ];
    const BEND_ENERGY_BILINEAR: f64 = 1.9780219780219779;
    const BEND_ENERGY_CONDENSED: f64 = 4.0 / 3.0;
    const COLUMN_COMPLIANCE: f64 = 3.982132303757586e-4;
    const COLUMN_TIP_UY: f64 = -3.982132663157154e-2;
    const COLUMN_SIGMA_E0: [f64; 3] = [
        -0.000687149056272,
        -0.005,
        -0.000233080378644,
    ];

    fn kernel() -> ElementKernel {
        ElementKernel::new(1.0, 0.3)
    }

    #[test]
    fn bilinear_stiffness_matches_closed_form() {
        let k = kernel();
        let nu = 0.3;
        let row = [
            0.5 - nu / 6.0,
            0.125 + nu / 8.0,
            -0.25 - nu / 12.0,
            -0.125 + 3.0 * nu / 8.0,
            -0.25 + nu / 12.0,
            -0.125 - nu / 8.0,
            nu / 6.0,
            0.125 - 3.0 * nu / 8.0,
        ];
        for (i, want) in row.iter().enumerate() {
            assert_relative_eq!(k.kuu[(0, i)], want / (1.0 - nu * nu), epsilon = 1e-14);
        }
    }

    #[test]
    fn condensed_stiffness_matches_reference() {
        let k = kernel();
        for (i, want) in KE0_ROW0.iter().enumerate() {
            assert_relative_eq!(k.ke0[(0, i)], *want, epsilon = 1e-12);
        }
        assert_relative_eq!(k.ke0.trace(), KE0_TRACE, epsilon = 1e-12);
        for i in 0..8 {
            assert_relative_eq!(k.ke0[(i, i)], KE0_ROW0[0], epsilon = 1e-12);
        }
        // h does not enter the unit-modulus stiffness
        let k2 = ElementKernel::new(2.5, 0.3);
        assert_relative_eq!((k2.ke0 - k.ke0).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn rigid_modes_carry_no_energy() {
        let k = kernel();
        let h = 1.0;
        let tx = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let ty = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        // in-plane rotation u = -y, v = x on nodes (0,0),(h,0),(h,h),(0,h)
        let rot = [0.0, 0.0, 0.0, h, -h, h, -h, 0.0];
        for pat in [tx, ty, rot] {
            let v = SMatrix::<f64, 8, 1>::from_column_slice(&pat);
            assert!((k.ke0 * v).norm() < 1e-13, "pattern {pat:?}");
            // rigid states are stress-free
            let s = k.stress(&pat);
            assert!(s.iter().all(|x| x.abs() < 1e-13));
        }
    }

    #[test]
    fn incompatible_modes_soften_bending() {
        let k = kernel();
        let bend = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
        let v = SMatrix::<f64, 8, 1>::from_column_slice(&bend);
        let e_bilinear = (v.transpose() * k.kuu * v)[0];
        let e_condensed = (v.transpose() * k.ke0 * v)[0];
        assert_relative_eq!(e_bilinear, BEND_ENERGY_BILINEAR, epsilon = 1e-12);
        assert_relative_eq!(e_condensed, BEND_ENERGY_CONDENSED, epsilon = 1e-12);
        assert!(e_condensed < e_bilinear);
    }

    #[test]
    fn centroid_stress_operator_matches_reference_and_scales() {
        let k = kernel();
        for (i, want) in S0_ROW0.iter().enumerate() {
            assert_relative_eq!(k.s0[(0, i)], *want, epsilon = 1e-12);
        }
        let k4 = ElementKernel::new(4.0, 0.3);
        for i in 0..8 {
            for r in 0..3 {
                assert_relative_eq!(k4.s0[(r, i)], k.s0[(r, i)] / 4.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn geometric_blocks_match_reference_and_are_h_free() {
        let k = kernel();
        for (i, want) in GXX_ROW0.iter().enumerate() {
            assert_relative_eq!(k.g0[0][(0, i)], *want, epsilon = 1e-12);
        }
        assert_relative_eq!(k.g0[2][(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(k.g0[1][(0, 2)], 1.0 / 6.0, epsilon = 1e-12);
        let k3 = ElementKernel::new(3.0, 0.3);
        for c in 0..3 {
            assert_relative_eq!((k3.g0[c] - k.g0[c]).norm(), 0.0, epsilon = 1e-13);
        }
    }

    fn dense_solve(k: &CsrMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
        let kd = to_dense(k);
        kd.cholesky().expect("spd").solve(f)
    }

    #[test]
    fn column_chain_matches_reference() {
        let (asm, f) = column_fixture();
        let e_k = vec![1.0; asm.dims.n_elems()];
        let k = asm.stiffness(&e_k);
        let u = dense_solve(&k, &f);
        let compliance = f.dot(&u);
        assert_relative_eq!(compliance, COLUMN_COMPLIANCE, max_relative = 1e-10);
        let tip = asm.dims.node(0, 8);
        assert_relative_eq!(u[2 * tip + 1], COLUMN_TIP_UY, max_relative = 1e-10);

        let ue = asm.gather(0, &u);
        let sigma = asm.kernel.stress(&ue);
        for c in 0..3 {
            assert_relative_eq!(sigma[c], COLUMN_SIGMA_E0[c], max_relative = 1e-9);
        }

        // uniform axial stress equals load over width everywhere
        for e in 0..asm.dims.n_elems() {
            let s = asm.kernel.stress(&asm.gather(e, &u));
            assert_relative_eq!(s[1], -0.005, max_relative = 1e-6);
        }
    }

    #[test]
    fn operators_are_symmetric_with_constrained_rows() {
        let (asm, f) = column_fixture();
        let e_k = vec![1.0; asm.dims.n_elems()];
        let k = asm.stiffness(&e_k);
        let u = dense_solve(&k, &f);
        let g = asm.stress_stiffness(&e_k, &u);

        let kt = k.transpose();
        let gt = g.transpose();
        for ((_, _, a), (_, _, b)) in k.triplet_iter().zip(kt.triplet_iter()) {
            assert_eq!(*a, *b);
        }
        for ((_, _, a), (_, _, b)) in g.triplet_iter().zip(gt.triplet_iter()) {
            assert_eq!(*a, *b);
        }

        let fixed_dof = 2 * asm.dims.node(1, 0);
        let krow = k.row(fixed_dof);
        assert_eq!(krow.col_indices(), &[fixed_dof]);
        assert_eq!(krow.values(), &[1.0]);
        let grow = g.row(fixed_dof);
        assert_eq!(grow.values(), &[0.0]);

        // compression makes the stress stiffness negative on bow patterns
        let mut v = DVector::zeros(asm.dims.n_dofs());
        for ix in 0..=2 {
            for iy in 0..=8 {
                let y = iy as f64 / 8.0;
                v[2 * asm.dims.node(ix, iy)] = (std::f64::consts::PI * y / 2.0).sin();
            }
        }
        let gv = &g * &v;
        assert!(v.dot(&gv) < 0.0);
    }

    #[test]
    fn stiffness_energy_decomposes_into_elements() {
        let (asm, f) = column_fixture();
        let mut e_k = vec![1.0; asm.dims.n_elems()];
        for (e, v) in e_k.iter_mut().enumerate() {
            *v = 0.3 + 0.1 * (e % 5) as f64;
        }
        let k = asm.stiffness(&e_k);
        let u = dense_solve(&k, &f);
        let total = u.dot(&(&k * &u));
        let mut by_elems = 0.0;
        for e in 0..asm.dims.n_elems() {
            let ue = asm.gather(e, &u);
            let uv = SMatrix::<f64, 8, 1>::from_column_slice(&ue);
            by_elems += e_k[e] * (uv.transpose() * asm.kernel.ke0 * uv)[0];
        }
        assert_relative_eq!(total, by_elems, max_relative = 1e-11);
    }

    #[test]
    fn stress_stiffness_is_linear_in_displacement() {
        let (asm, f) = column_fixture();
        let e_k = vec![1.0; asm.dims.n_elems()];
        let k = asm.stiffness(&e_k);
        let u = dense_solve(&k, &f);
        let g1 = asm.stress_stiffness(&e_k, &u);
        let u2 = &u * 2.0;
        let g2 = asm.stress_stiffness(&e_k, &u2);
        for ((_, _, a), (_, _, b)) in g1.triplet_iter().zip(g2.triplet_iter()) {
            assert_relative_eq!(2.0 * *a, *b, epsilon = 1e-14);
        }
    }
}
