//! Design derivatives: compliance, volume and buckling load factors.
//!
//! Load-factor gradients combine the direct stiffness/stress terms with an
//! adjoint contribution that tracks how the equilibrium state feeds the
//! stress stiffness; all adjoint states of one analysis are solved in a
//! single block system. A residual-consistent correction is available
//! behind a flag: its indefinite shifted systems are attacked with capped
//! Kaczmarz iterations and fall back to the plain gradients on stall.

use nalgebra::DMatrix;
use nalgebra::DVector;
use nalgebra::SMatrix;
use nalgebra_sparse::CsrMatrix;
use thiserror::Error;

use crate::design::DesignField;
use crate::eigen::MAX_DENSE_DOFS;
use crate::fem::{to_dense, Assembler, Material};
use crate::grid::{galerkin_project, Hierarchy};
use crate::lba::{eig_residual, BucklingAnalysis, LinearState};
use crate::solver::{
    kaczmarz_sweep, mg_block_pcg, row_norms_inv, BlockSolveReport, PcgOptions, SolveError,
};

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("adjoint block solve did not converge")]
    AdjointNotConverged(#[source] SolveError),
    #[error("gradient inputs disagree in size")]
    ShapeMismatch,
    #[error("mode {index} is not destabilized by the stress state; its quotient has no derivative here")]
    NonDestabilizing { index: usize },
}

/// Knobs for the load-factor gradient evaluation.
#[derive(Debug, Clone)]
pub struct GradientOptions {
    /// Apply the residual-consistent correction (extra indefinite solves).
    pub consistent: bool,
    /// Block-solver settings for the adjoint systems.
    pub pcg: PcgOptions,
    /// Symmetric Kaczmarz sweep cap for each indefinite consistent solve.
    pub kaczmarz_cap: usize,
    /// Relative residual target for the consistent solves.
    pub kaczmarz_tol: f64,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self {
            consistent: false,
            pcg: PcgOptions::default(),
            kaczmarz_cap: 300,
            kaczmarz_tol: 1e-6,
        }
    }
}

/// All design derivatives of one analysis, restricted to the free design
/// variables (passive elements excluded).
pub struct GradientBundle {
    /// Compliance gradient.
    pub d_compliance: Vec<f64>,
    /// One gradient per constrained load factor, ascending order.
    pub d_lambda: Vec<Vec<f64>>,
    /// Volume-fraction gradient.
    pub d_volume: Vec<f64>,
    /// Report of the adjoint block solve (absent when no modes were given).
    pub adjoint_report: Option<BlockSolveReport>,
    /// True when the consistent correction was requested and every
    /// indefinite solve converged within its cap.
    pub consistent_applied: bool,
}

fn sv8(a: &[f64; 8]) -> SMatrix<f64, 8, 1> {
    SMatrix::<f64, 8, 1>::from_column_slice(a)
}

/// Gradient of the compliance u'K[x]u with respect to the free design
/// variables (self-adjoint problem: no extra solve needed).
pub fn compliance_gradient(
    asm: &Assembler,
    field: &DesignField,
    mat: &Material,
    p: f64,
    u: &DVector<f64>,
) -> Vec<f64> {
    let (dk, _) = field.moduli_derivs(mat, p);
    let mut d_phys = vec![0.0; asm.dims.n_elems()];
    for e in 0..asm.dims.n_elems() {
        if dk[e] == 0.0 {
            continue;
        }
        let ue = sv8(&asm.gather(e, u));
        let quad = (ue.transpose() * asm.kernel.ke0 * ue)[0];
        d_phys[e] = -dk[e] * quad;
    }
    restrict_to_free(field, &field.chain_rule(&d_phys))
}

/// Gradient of the mean physical density over the free design variables.
pub fn volume_gradient(field: &DesignField) -> Vec<f64> {
    let m = field.dims.n_elems();
    let d_phys = vec![1.0 / m as f64; m];
    restrict_to_free(field, &field.chain_rule(&d_phys))
}

/// The vector whose k-th entry is a'(dG/du_k)b at the current moduli; G is
/// linear in u, so the result does not depend on u itself. Constrained
/// dofs stay zero.
pub fn dg_du_action(
    asm: &Assembler,
    e_s: &[f64],
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> DVector<f64> {
    let mut out = DVector::zeros(asm.n_dofs());
    for e in 0..asm.dims.n_elems() {
        if e_s[e] == 0.0 {
            continue;
        }
        let ae = asm.gather(e, a);
        let be = asm.gather(e, b);
        let mut q = asm.kernel.g_bilinear(&ae, &be);
        for c in &mut q {
            *c *= e_s[e];
        }
        let local = asm.kernel.stress_transpose(&q);
        asm.scatter_add(e, &local, &mut out);
    }
    out
}

/// Load-factor gradients for the constrained modes plus compliance and
/// volume gradients, bundled. Modes may carry any normalization and sign;
/// they are rescaled internally so the eigenvalue perturbation identity
/// applies directly.
#[allow(clippy::too_many_arguments)]
pub fn gradient_bundle(
    ba: &BucklingAnalysis,
    field: &DesignField,
    mat: &Material,
    p: f64,
    state: &LinearState,
    lambdas: &[f64],
    modes: &DMatrix<f64>,
    opts: &GradientOptions,
) -> Result<GradientBundle, SensitivityError> {
    let d_compliance = compliance_gradient(&ba.asm, field, mat, p, &state.u);
    let d_volume = volume_gradient(field);
    let (d_lambda, adjoint_report, consistent_applied) =
        blf_gradients(ba, field, mat, p, state, lambdas, modes, opts)?;
    Ok(GradientBundle {
        d_compliance,
        d_lambda,
        d_volume,
        adjoint_report,
        consistent_applied,
    })
}

/// Per-mode load-factor gradients with respect to the free design
/// variables. Returns one gradient per entry of `lambdas` together with
/// the adjoint block-solve report and whether the consistent correction
/// was fully applied.
#[allow(clippy::too_many_arguments)]
pub fn blf_gradients(
    ba: &BucklingAnalysis,
    field: &DesignField,
    mat: &Material,
    p: f64,
    state: &LinearState,
    lambdas: &[f64],
    modes: &DMatrix<f64>,
    opts: &GradientOptions,
) -> Result<(Vec<Vec<f64>>, Option<BlockSolveReport>, bool), SensitivityError> {
    let b = lambdas.len();
    if modes.ncols() != b || modes.nrows() != state.u.len() {
        return Err(SensitivityError::ShapeMismatch);
    }
    if b == 0 {
        return Ok((Vec::new(), None, !opts.consistent || true));
    }
    let n_elems = ba.asm.dims.n_elems();
    let (_, e_s) = field.moduli(mat, p);
    let (dk, ds) = field.moduli_derivs(mat, p);

    // rescale each mode so that phi'G phi = -1: under that normalization
    // the eigenvalue perturbation is the bare bracket of direct terms
    let mut phi = modes.clone_owned();
    for i in 0..b {
        let col = phi.column(i).clone_owned();
        let gq = col.dot(&(&state.g * &col));
        if gq >= 0.0 {
            return Err(SensitivityError::NonDestabilizing { index: i });
        }
        let s = 1.0 / (-gq).sqrt();
        phi.column_mut(i).scale_mut(s);
    }

    // adjoint right-hand sides: how each quotient's stress energy moves
    // with the equilibrium state
    let mut rhs = DMatrix::zeros(state.u.len(), b);
    for i in 0..b {
        let col = phi.column(i).clone_owned();
        rhs.set_column(i, &dg_du_action(&ba.asm, &e_s, &col, &col));
    }
    let (z, report) = mg_block_pcg(&state.k, &rhs, |r| state.precond.apply_block(r), &opts.pcg)
        .map_err(SensitivityError::AdjointNotConverged)?;

    // optional residual-consistent correction: indefinite shifted solves
    // for the residual adjoints, then one more SPD block for the mixed
    // state dependence
    let mut denom = vec![1.0; b];
    let mut w = DMatrix::zeros(state.u.len(), b);
    let mut consistent_applied = opts.consistent;
    if opts.consistent {
        let mut mixed = DMatrix::zeros(state.u.len(), b);
        let mut any_mixed = false;
        for i in 0..b {
            let col = phi.column(i).clone_owned();
            let y = eig_residual(&state.k, &state.g, lambdas[i], &col);
            let scale = (&state.k * &col).norm();
            if y.norm() <= 1e-10 * scale {
                // converged eigenpair: the correction vanishes identically
                continue;
            }
            let shifted = &state.k + &(&state.g * lambdas[i]);
            let solved = ShiftedChain::new(shifted, &ba.hier, 2).and_then(|chain| {
                chain.solve(&(-2.0 * &y), opts.kaczmarz_cap, opts.kaczmarz_tol)
            });
            match solved {
                Some(p_i) => {
                    denom[i] = 1.0 - p_i.dot(&(&state.g * &col));
                    mixed.set_column(i, &dg_du_action(&ba.asm, &e_s, &p_i, &col));
                    any_mixed = true;
                }
                None => {
                    log::warn!(
                        "consistent correction for mode {i} stalled after {} sweeps; using plain gradient",
                        opts.kaczmarz_cap
                    );
                    consistent_applied = false;
                }
            }
        }
        if any_mixed {
            let (wsol, _) =
                mg_block_pcg(&state.k, &mixed, |r| state.precond.apply_block(r), &opts.pcg)
                    .map_err(SensitivityError::AdjointNotConverged)?;
            w = wsol;
        }
    }

    // per-element accumulation of all terms, then pull back through
    // projection and filter
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let col = phi.column(i).clone_owned();
        let zc = z.column(i).clone_owned();
        let wc = w.column(i).clone_owned();
        let mut d_phys = vec![0.0; n_elems];
        for e in 0..n_elems {
            if dk[e] == 0.0 && ds[e] == 0.0 {
                continue;
            }
            let ue = ba.asm.gather(e, &state.u);
            let pe = ba.asm.gather(e, &col);
            let pev = sv8(&pe);
            let uev = sv8(&ue);
            let kq = (pev.transpose() * ba.asm.kernel.ke0 * pev)[0];
            let sig = ba.asm.kernel.stress(&ue);
            let q3 = ba.asm.kernel.g_quadratic(&pe);
            let gq = sig[0] * q3[0] + sig[1] * q3[1] + sig[2] * q3[2];
            let ze = sv8(&ba.asm.gather(e, &zc));
            let zku = (ze.transpose() * ba.asm.kernel.ke0 * uev)[0];
            let mut v = dk[e] * kq + lambdas[i] * ds[e] * gq - lambdas[i] * dk[e] * zku;
            if denom[i] != 1.0 {
                let we = sv8(&ba.asm.gather(e, &wc));
                let wku = (we.transpose() * ba.asm.kernel.ke0 * uev)[0];
                v = (v + lambdas[i] * dk[e] * wku) / denom[i];
            }
            d_phys[e] = v;
        }
        out.push(restrict_to_free(field, &field.chain_rule(&d_phys)));
    }
    Ok((out, Some(report), consistent_applied))
}

fn restrict_to_free(field: &DesignField, full: &[f64]) -> Vec<f64> {
    field.free_indices().iter().map(|&e| full[e]).collect()
}

/// Multigrid solver for one indefinite shifted operator: the operator is
/// Galerkin-projected through the grid hierarchy, every level is smoothed
/// with symmetric Kaczmarz sweep pairs (stable where sign-based smoothers
/// are not) and the coarsest level is factorized densely. With a single
/// level this degenerates to a direct solve.
struct ShiftedChain {
    ops: Vec<CsrMatrix<f64>>,
    inv_norms: Vec<Vec<f64>>,
    prolong: Vec<CsrMatrix<f64>>,
    restrict: Vec<CsrMatrix<f64>>,
    coarse: nalgebra::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    sweeps: usize,
}

impl ShiftedChain {
    /// None when the coarsest level is too large to factorize densely or
    /// the shift lands on a singular operator.
    fn new(a: CsrMatrix<f64>, hier: &Hierarchy, sweeps: usize) -> Option<Self> {
        let mut ops = vec![a];
        for l in 1..hier.num_levels() {
            ops.push(galerkin_project(
                &ops[l - 1],
                &hier.prolong[l - 1],
                &hier.levels[l].fixed,
                true,
            ));
        }
        let tail = ops.last().unwrap();
        if tail.nrows() > MAX_DENSE_DOFS {
            return None;
        }
        let coarse = to_dense(tail).full_piv_lu();
        if !coarse.is_invertible() {
            return None;
        }
        let inv_norms = ops.iter().map(row_norms_inv).collect();
        let prolong = hier.prolong.clone();
        let restrict = hier.prolong.iter().map(|p| p.transpose()).collect();
        Some(Self {
            ops,
            inv_norms,
            prolong,
            restrict,
            coarse,
            sweeps,
        })
    }

    fn smooth(&self, level: usize, rhs: &DVector<f64>, x: &mut DVector<f64>) {
        for _ in 0..self.sweeps {
            kaczmarz_sweep(&self.ops[level], Some(rhs), x, &self.inv_norms[level], false);
            kaczmarz_sweep(&self.ops[level], Some(rhs), x, &self.inv_norms[level], true);
        }
    }

    fn vcycle(&self, level: usize, rhs: &DVector<f64>) -> DVector<f64> {
        if level + 1 == self.ops.len() {
            return self.coarse.solve(rhs).expect("factor verified invertible");
        }
        let mut x = DVector::zeros(rhs.len());
        self.smooth(level, rhs, &mut x);
        let r = rhs - &self.ops[level] * &x;
        let xc = self.vcycle(level + 1, &(&self.restrict[level] * &r));
        x += &self.prolong[level] * &xc;
        self.smooth(level, rhs, &mut x);
        x
    }

    /// Capped cycle iteration; None when the relative residual misses
    /// `tol` within `cap` cycles.
    fn solve(&self, b: &DVector<f64>, cap: usize, tol: f64) -> Option<DVector<f64>> {
        let bn = b.norm();
        let mut x = DVector::zeros(b.len());
        if bn == 0.0 {
            return Some(x);
        }
        for _ in 0..cap {
            let r = b - &self.ops[0] * &x;
            if r.norm() <= tol * bn {
                return Some(x);
            }
            x += self.vcycle(0, &r);
        }
        let r = b - &self.ops[0] * &x;
        if r.norm() <= tol * bn {
            Some(x)
        } else {
            None
        }
    }
}
