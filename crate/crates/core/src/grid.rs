//! Structured-grid numbering and the nested grid hierarchy.
//!
//! Nodes are numbered column-major (y fastest), an element carries the id of
//! its lower-left node column, and each node owns the dof pair (2n, 2n+1) for
//! the x/y displacement components. Coarsening halves both element counts;
//! transfers between consecutive levels use bilinear interpolation with the
//! restriction fixed to the interpolation transpose, so Galerkin-projected
//! operators satisfy the energy identity v'(P'AP)v = (Pv)'A(Pv) exactly.

use nalgebra_sparse::{CooMatrix, CsrMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("hierarchy needs at least one level")]
    NoLevels,
    #[error("level {level}: {nelx}x{nely} elements cannot be halved")]
    NotCoarsenable { level: usize, nelx: usize, nely: usize },
    #[error("fixed-dof mask has length {got}, expected {expected}")]
    FixedMaskLength { got: usize, expected: usize },
}

/// Element counts of one structured grid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub nelx: usize,
    pub nely: usize,
}

impl Dims {
    pub fn new(nelx: usize, nely: usize) -> Self {
        Self { nelx, nely }
    }

    pub fn n_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn n_elems(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn node(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nelx && iy <= self.nely);
        ix * (self.nely + 1) + iy
    }

    /// Inverse of [`Dims::node`].
    pub fn node_coords(&self, n: usize) -> (usize, usize) {
        (n / (self.nely + 1), n % (self.nely + 1))
    }

    pub fn elem(&self, ex: usize, ey: usize) -> usize {
        debug_assert!(ex < self.nelx && ey < self.nely);
        ex * self.nely + ey
    }

    pub fn elem_coords(&self, e: usize) -> (usize, usize) {
        (e / self.nely, e % self.nely)
    }

    /// Corner nodes counterclockwise from the lower-left.
    pub fn elem_nodes(&self, e: usize) -> [usize; 4] {
        let (ex, ey) = self.elem_coords(e);
        [
            self.node(ex, ey),
            self.node(ex + 1, ey),
            self.node(ex + 1, ey + 1),
            self.node(ex, ey + 1),
        ]
    }

    pub fn elem_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.elem_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn can_coarsen(&self) -> bool {
        self.nelx >= 2 && self.nely >= 2 && self.nelx % 2 == 0 && self.nely % 2 == 0
    }

    pub fn coarsen(&self) -> Dims {
        Dims::new(self.nelx / 2, self.nely / 2)
    }
}

/// One level of the hierarchy: grid dims, element edge length and the
/// per-dof homogeneous Dirichlet mask.
#[derive(Debug, Clone)]
pub struct Level {
    pub dims: Dims,
    pub h: f64,
    pub fixed: Vec<bool>,
}

impl Level {
    pub fn n_free(&self) -> usize {
        self.fixed.iter().filter(|f| !**f).count()
    }
}

/// Nested grids, finest first. `prolong[j]` interpolates level j+1 onto
/// level j; restriction is its transpose with unit scaling.
pub struct Hierarchy {
    pub levels: Vec<Level>,
    pub prolong: Vec<CsrMatrix<f64>>,
}

impl Hierarchy {
    /// Builds `num_levels` nested levels under the fine grid. Fixed dofs
    /// propagate to coarse levels by geometric coincidence: coarse node
    /// (ix, iy) inherits the constraints of fine node (2ix, 2iy).
    pub fn build(
        dims: Dims,
        h: f64,
        num_levels: usize,
        fixed: &[bool],
    ) -> Result<Self, GridError> {
        if num_levels == 0 {
            return Err(GridError::NoLevels);
        }
        if fixed.len() != dims.n_dofs() {
            return Err(GridError::FixedMaskLength {
                got: fixed.len(),
                expected: dims.n_dofs(),
            });
        }
        let mut levels = vec![Level {
            dims,
            h,
            fixed: fixed.to_vec(),
        }];
        let mut prolong = Vec::new();
        for l in 1..num_levels {
            let fine = &levels[l - 1];
            if !fine.dims.can_coarsen() {
                return Err(GridError::NotCoarsenable {
                    level: l - 1,
                    nelx: fine.dims.nelx,
                    nely: fine.dims.nely,
                });
            }
            let cdims = fine.dims.coarsen();
            let mut cfixed = vec![false; cdims.n_dofs()];
            for ix in 0..=cdims.nelx {
                for iy in 0..=cdims.nely {
                    let cn = cdims.node(ix, iy);
                    let fn_ = fine.dims.node(2 * ix, 2 * iy);
                    cfixed[2 * cn] = fine.fixed[2 * fn_];
                    cfixed[2 * cn + 1] = fine.fixed[2 * fn_ + 1];
                }
            }
            let coarse = Level {
                dims: cdims,
                h: 2.0 * fine.h,
                fixed: cfixed,
            };
            prolong.push(build_prolongation(fine, &coarse));
            levels.push(coarse);
        }
        Ok(Self { levels, prolong })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &Level {
        &self.levels[0]
    }

    pub fn coarsest(&self) -> &Level {
        self.levels.last().unwrap()
    }
}

/// Bilinear interpolation matrix from `coarse` onto `fine`. Rows of fixed
/// fine dofs and columns of fixed coarse dofs are left structurally empty so
/// corrections never touch constrained dofs.
fn build_prolongation(fine: &Level, coarse: &Level) -> CsrMatrix<f64> {
    let fd = fine.dims;
    let cd = coarse.dims;
    let mut coo = CooMatrix::new(fd.n_dofs(), cd.n_dofs());
    for ix in 0..=fd.nelx {
        for iy in 0..=fd.nely {
            let fnode = fd.node(ix, iy);
            // parent coarse nodes along each axis with weights
            let axis = |i: usize| -> Vec<(usize, f64)> {
                if i % 2 == 0 {
                    vec![(i / 2, 1.0)]
                } else {
                    vec![(i / 2, 0.5), (i / 2 + 1, 0.5)]
                }
            };
            for &(cx, wx) in &axis(ix) {
                for &(cy, wy) in &axis(iy) {
                    let cnode = cd.node(cx, cy);
                    for comp in 0..2 {
                        let r = 2 * fnode + comp;
                        let c = 2 * cnode + comp;
                        if fine.fixed[r] || coarse.fixed[c] {
                            continue;
                        }
                        coo.push(r, c, wx * wy);
                    }
                }
            }
        }
    }
    CsrMatrix::from(&coo)
}

/// Galerkin triple product P'AP. With zeroed transfer rows/columns the
/// result has structurally empty rows at fixed coarse dofs; `unit_diag`
/// re-inserts an identity diagonal there (stiffness operators want it, the
/// stress stiffness does not).
pub fn galerkin_project(
    a_fine: &CsrMatrix<f64>,
    p: &CsrMatrix<f64>,
    coarse_fixed: &[bool],
    unit_diag: bool,
) -> CsrMatrix<f64> {
    let pt = p.transpose();
    let ap = a_fine * p;
    let coarse = &pt * &ap;
    if !unit_diag {
        return coarse;
    }
    let n = coarse.nrows();
    let mut coo = CooMatrix::new(n, n);
    for (i, j, v) in coarse.triplet_iter() {
        if !(coarse_fixed[i] || coarse_fixed[j]) {
            coo.push(i, j, *v);
        }
    }
    for (d, is_fixed) in coarse_fixed.iter().enumerate() {
        if *is_fixed {
            coo.push(d, d, 1.0);
        }
    }
    CsrMatrix::from(&coo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    #[test]
    fn numbering_round_trips() {
        let d = Dims::new(4, 3);
        assert_eq!(d.n_nodes(), 20);
        assert_eq!(d.n_dofs(), 40);
        assert_eq!(d.n_elems(), 12);
        assert_eq!(d.node(0, 0), 0);
        assert_eq!(d.node(1, 0), 4);
        assert_eq!(d.node_coords(d.node(3, 2)), (3, 2));
        assert_eq!(d.elem_coords(d.elem(2, 1)), (2, 1));
        let nodes = d.elem_nodes(d.elem(1, 1));
        assert_eq!(nodes, [d.node(1, 1), d.node(2, 1), d.node(2, 2), d.node(1, 2)]);
    }

    #[test]
    fn hierarchy_dims_and_spacing() {
        let dims = Dims::new(8, 4);
        let hier = Hierarchy::build(dims, 0.5, 3, &vec![false; dims.n_dofs()]).unwrap();
        assert_eq!(hier.num_levels(), 3);
        assert_eq!(hier.levels[1].dims, Dims::new(4, 2));
        assert_eq!(hier.levels[2].dims, Dims::new(2, 1));
        assert_eq!(hier.levels[2].h, 2.0);
        assert_eq!(hier.prolong.len(), 2);
    }

    #[test]
    fn rejects_bad_level_requests() {
        let dims = Dims::new(6, 3);
        let fixed = vec![false; dims.n_dofs()];
        assert!(matches!(
            Hierarchy::build(dims, 1.0, 2, &fixed),
            Err(GridError::NotCoarsenable { level: 0, .. })
        ));
        assert!(matches!(
            Hierarchy::build(dims, 1.0, 0, &fixed),
            Err(GridError::NoLevels)
        ));
        assert!(matches!(
            Hierarchy::build(dims, 1.0, 1, &[false; 3]),
            Err(GridError::FixedMaskLength { got: 3, .. })
        ));
    }

    #[test]
    fn prolongation_reproduces_bilinear_fields() {
        let dims = Dims::new(4, 4);
        let hier = Hierarchy::build(dims, 1.0, 2, &vec![false; dims.n_dofs()]).unwrap();
        let p = &hier.prolong[0];
        let cd = hier.levels[1].dims;
        // nodal samples of 2x - 3y + 1 on both components
        let f = |x: f64, y: f64| 2.0 * x - 3.0 * y + 1.0;
        let mut vc = DVector::zeros(cd.n_dofs());
        for ix in 0..=cd.nelx {
            for iy in 0..=cd.nely {
                let n = cd.node(ix, iy);
                let v = f(2.0 * ix as f64, 2.0 * iy as f64);
                vc[2 * n] = v;
                vc[2 * n + 1] = -v;
            }
        }
        let vf = p * &vc;
        for ix in 0..=dims.nelx {
            for iy in 0..=dims.nely {
                let n = dims.node(ix, iy);
                let want = f(ix as f64, iy as f64);
                assert!((vf[2 * n] - want).abs() < 1e-14);
                assert!((vf[2 * n + 1] + want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fixed_dofs_propagate_and_zero_transfer_rows() {
        let dims = Dims::new(4, 4);
        let mut fixed = vec![false; dims.n_dofs()];
        let corner = dims.node(0, 0);
        fixed[2 * corner] = true;
        fixed[2 * corner + 1] = true;
        // odd-coordinate constraint has no coarse counterpart
        let odd = dims.node(1, 0);
        fixed[2 * odd + 1] = true;
        let hier = Hierarchy::build(dims, 1.0, 2, &fixed).unwrap();
        let cl = &hier.levels[1];
        let ccorner = cl.dims.node(0, 0);
        assert!(cl.fixed[2 * ccorner] && cl.fixed[2 * ccorner + 1]);
        assert_eq!(cl.fixed.iter().filter(|f| **f).count(), 2);

        let p = &hier.prolong[0];
        let ones = DVector::from_element(cl.dims.n_dofs(), 1.0);
        let vf = p * &ones;
        assert_eq!(vf[2 * corner], 0.0);
        assert_eq!(vf[2 * odd + 1], 0.0);
        // partition of unity away from constraints
        let far = dims.node(3, 3);
        assert!((vf[2 * far] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn galerkin_energy_identity_and_unit_diag() {
        let dims = Dims::new(4, 2);
        let mut fixed = vec![false; dims.n_dofs()];
        fixed[0] = true;
        fixed[1] = true;
        let hier = Hierarchy::build(dims, 1.0, 2, &fixed).unwrap();
        let p = &hier.prolong[0];
        let n = dims.n_dofs();
        // synthetic SPD operator: diagonally dominant band
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 4.0 + (i % 3) as f64);
            if i + 1 < n {
                coo.push(i, i + 1, -1.0);
                coo.push(i + 1, i, -1.0);
            }
        }
        let a = CsrMatrix::from(&coo);
        let cfixed = &hier.levels[1].fixed;
        let ac = galerkin_project(&a, p, cfixed, true);
        let cd = hier.levels[1].dims;
        let v = DVector::from_fn(cd.n_dofs(), |i, _| ((i * 7 + 3) % 5) as f64 - 2.0);
        let pv = p * &v;
        let lhs = v.dot(&(&ac * &v));
        // identity diagonal at fixed coarse dofs contributes v_d^2 extra
        let extra: f64 = cfixed
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(d, _)| v[d] * v[d])
            .sum();
        let rhs = pv.dot(&(&a * &pv)) + extra;
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        // fixed coarse row is exactly the identity row
        let row = ac.row(0);
        assert_eq!(row.col_indices(), &[0]);
        assert_eq!(row.values(), &[1.0]);
    }

    proptest! {
        #[test]
        fn restriction_is_adjoint_of_interpolation(seed in 0u64..256) {
            let dims = Dims::new(6, 4);
            let mut fixed = vec![false; dims.n_dofs()];
            fixed[5] = true;
            let hier = Hierarchy::build(dims, 1.0, 2, &fixed).unwrap();
            let p = &hier.prolong[0];
            let r = p.transpose();
            let nf = dims.n_dofs();
            let nc = hier.levels[1].dims.n_dofs();
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            let vc = DVector::from_fn(nc, |_, _| next());
            let wf = DVector::from_fn(nf, |_, _| next());
            let lhs = (p * &vc).dot(&wf);
            let rhs = vc.dot(&(&r * &wf));
            prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()));
        }
    }
}
