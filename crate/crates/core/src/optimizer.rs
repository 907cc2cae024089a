//! Outer optimization loop: compliance minimization under volume and
//! buckling-load-factor bounds (P1) or volume minimization under buckling
//! and compliance bounds (P2), driven by the method of moving asymptotes
//! with (p, β) continuation and checkpoint/resume support.

use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use crate::design::DesignField;
use crate::fem::Material;
use crate::lba::{BucklingAnalysis, LbaError};
use crate::mma::{MmaOptions, MmaState};
use crate::sensitivity::{
    compliance_gradient, gradient_bundle, volume_gradient, GradientOptions, SensitivityError,
};

#[derive(Debug, thiserror::Error)]
pub enum OptError {
    #[error("invalid problem spec: {0}")]
    Spec(String),
    #[error("buckling load factor {0} in the constrained window is not positive")]
    NonPositiveBlf(f64),
    #[error("analysis failed at iteration {iteration}: {source}")]
    AnalysisAborted {
        iteration: usize,
        #[source]
        source: LbaError,
        checkpoint: Box<Checkpoint>,
    },
    #[error("gradient evaluation failed at iteration {iteration}: {source}")]
    GradientAborted {
        iteration: usize,
        #[source]
        source: SensitivityError,
        checkpoint: Box<Checkpoint>,
    },
    #[error("artifact callback failed: {0}")]
    Artifact(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    /// Minimize compliance subject to a volume bound and BLF lower bounds.
    P1,
    /// Minimize volume subject to BLF lower bounds and a compliance bound.
    P2,
}

/// Penalization and projection continuation: p climbs by `dp` every
/// `p_every` iterations until `p_max`; once there, β doubles every
/// `beta_every` iterations until `beta_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Continuation {
    pub p0: f64,
    pub p_max: f64,
    pub dp: f64,
    pub p_every: usize,
    pub beta0: f64,
    pub beta_max: f64,
    pub beta_every: usize,
}

impl Continuation {
    pub fn standard(p0: f64) -> Self {
        Self {
            p0,
            p_max: 6.0,
            dp: 0.25,
            p_every: 25,
            beta0: 1.0,
            beta_max: 32.0,
            beta_every: 50,
        }
    }

    /// Apply the schedule after iteration `iter` (1-based) has completed.
    /// `pmax_at` records when p reached its cap; returns whether a bump
    /// happened.
    pub fn advance(
        &self,
        iter: usize,
        p: &mut f64,
        beta: &mut f64,
        pmax_at: &mut Option<usize>,
    ) -> bool {
        if *p < self.p_max {
            if self.p_every > 0 && iter % self.p_every == 0 {
                *p = (*p + self.dp).min(self.p_max);
                if *p >= self.p_max {
                    *pmax_at = Some(iter);
                }
                return true;
            }
            return false;
        }
        let base = *pmax_at.get_or_insert(0);
        if *beta < self.beta_max
            && self.beta_every > 0
            && iter > base
            && (iter - base) % self.beta_every == 0
        {
            *beta = (*beta * 2.0).min(self.beta_max);
            return true;
        }
        false
    }

    pub fn is_final(&self, p: f64, beta: f64) -> bool {
        p >= self.p_max && beta >= self.beta_max
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Volume-fraction bound f̄ (constraint for P1, start value context for P2).
    pub vol_bound: f64,
    /// BLF lower bound λ̄; zero disables the buckling constraints entirely.
    pub blf_bound: f64,
    /// P2 only: compliance must stay below `compliance_factor` times the
    /// compliance of the fully solid design.
    pub compliance_factor: f64,
    /// Number of constrained modes |B|.
    pub n_constrained: usize,
    /// Number of computed modes q ≥ |B|.
    pub n_modes: usize,
    /// Bound-spacing factor α ∈ (0, 1].
    pub alpha: f64,
    pub max_iters: usize,
    pub continuation: Continuation,
    /// Stagnation threshold on ‖Δx̂‖∞ …
    pub stagnation_tol: f64,
    /// … held for this many consecutive steps at final continuation.
    pub stagnation_steps: usize,
    pub move_limit: f64,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, vol_bound: f64, blf_bound: f64) -> Self {
        let p0 = match kind {
            ProblemKind::P1 => 1.0,
            ProblemKind::P2 => 3.0,
        };
        Self {
            kind,
            vol_bound,
            blf_bound,
            compliance_factor: 6.0,
            n_constrained: 12,
            n_modes: 24,
            alpha: 0.99,
            max_iters: 700,
            continuation: Continuation::standard(p0),
            stagnation_tol: 1e-4,
            stagnation_steps: 20,
            move_limit: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), OptError> {
        if !(self.vol_bound > 0.0 && self.vol_bound < 1.0) {
            return Err(OptError::Spec(format!(
                "volume bound must lie in (0,1), got {}",
                self.vol_bound
            )));
        }
        if self.blf_bound < 0.0 {
            return Err(OptError::Spec(format!(
                "BLF bound must be nonnegative, got {}",
                self.blf_bound
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(OptError::Spec(format!(
                "bound spacing factor must lie in (0,1], got {}",
                self.alpha
            )));
        }
        if self.n_constrained > self.n_modes {
            return Err(OptError::Spec(format!(
                "constrained mode count {} exceeds computed mode count {}",
                self.n_constrained, self.n_modes
            )));
        }
        if self.max_iters == 0 {
            return Err(OptError::Spec("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Lower-bound constraints in reciprocal form: gᵢ = λ̄ / (α^(i−1)·λᵢ) − 1 ≤ 0
/// for the i-th smallest factor. Input order does not matter; factors are
/// sorted ascending internally.
pub fn bound_constraints(
    lambdas: &[f64],
    lambda_bar: f64,
    alpha: f64,
) -> Result<Vec<f64>, OptError> {
    let sorted = sorted_ascending(lambdas)?;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, l)| lambda_bar / (alpha.powi(i as i32) * l) - 1.0)
        .collect())
}

/// ∂gᵢ/∂λᵢ for the reciprocal bound form, in the same sorted order.
pub fn bound_constraint_dg(
    lambdas: &[f64],
    lambda_bar: f64,
    alpha: f64,
) -> Result<Vec<f64>, OptError> {
    let sorted = sorted_ascending(lambdas)?;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, l)| -lambda_bar / (alpha.powi(i as i32) * l * l))
        .collect())
}

/// Coalescence measures δᵢ = λᵢ/λ₁ − α^(i−1) for i = 2… (empty for < 2
/// factors). The sequence is taken as indexed; the first entry is the
/// fundamental factor.
pub fn coalescence_measure(lambdas: &[f64], alpha: f64) -> Vec<f64> {
    if lambdas.is_empty() || lambdas[0] <= 0.0 {
        return Vec::new();
    }
    lambdas
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, l)| l / lambdas[0] - alpha.powi(i as i32))
        .collect()
}

fn sorted_ascending(lambdas: &[f64]) -> Result<Vec<f64>, OptError> {
    let mut sorted = lambdas.to_vec();
    for &l in &sorted {
        if l <= 0.0 {
            return Err(OptError::NonPositiveBlf(l));
        }
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite factors"));
    Ok(sorted)
}

/// One row of the convergence history; everything needed to reproduce the
/// logged curves plus per-phase wall-clock times.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iteration: usize,
    pub p: f64,
    pub beta: f64,
    /// Scaled objective as seen by the optimizer (10·J/J₀ or 10·f).
    pub objective: f64,
    pub compliance: f64,
    pub volume: f64,
    pub m_nd: f64,
    /// BLF estimates of the constrained window, ascending.
    pub lambdas: Vec<f64>,
    /// δ₂ … δ_|B| coalescence measures.
    pub coalescence: Vec<f64>,
    /// Constraint values handed to the optimizer this step.
    pub constraints: Vec<f64>,
    /// ‖Δx̂‖∞ of the accepted step.
    pub dx_inf: f64,
    /// Whether the subproblem needed elastic relaxation.
    pub relaxed: bool,
    /// Whether a continuation bump followed this iteration.
    pub bumped: bool,
    pub t_analysis: f64,
    pub t_gradients: f64,
    pub t_update: f64,
}

#[derive(Debug)]
pub struct OptState {
    pub iteration: usize,
    pub p: f64,
    pub beta: f64,
    pub history: Vec<IterRecord>,
    pub mma: MmaState,
    pub stagnant: usize,
    pub stagnated: bool,
}

/// Everything needed to re-enter the loop mid-schedule and reproduce the
/// exact continuation of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: usize,
    pub p: f64,
    pub beta: f64,
    pub pmax_at: Option<usize>,
    pub stagnant: usize,
    /// Frozen objective scale (first-iteration compliance for P1).
    pub j0: Option<f64>,
    /// Absolute P2 compliance bound, frozen at run start.
    pub jbar: Option<f64>,
    pub x_hat: Vec<f64>,
    pub mma_iter: usize,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    fn capture(
        iteration: usize,
        p: f64,
        beta: f64,
        pmax_at: Option<usize>,
        stagnant: usize,
        j0: Option<f64>,
        jbar: Option<f64>,
        x: &DVector<f64>,
        mma: &MmaState,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            iteration,
            p,
            beta,
            pmax_at,
            stagnant,
            j0,
            jbar,
            x_hat: x.as_slice().to_vec(),
            mma_iter: mma.iter,
            xold1: mma.xold1.as_slice().to_vec(),
            xold2: mma.xold2.as_slice().to_vec(),
            low: mma.low.as_slice().to_vec(),
            upp: mma.upp.as_slice().to_vec(),
        }
    }

    fn restore_mma(&self) -> MmaState {
        MmaState {
            iter: self.mma_iter,
            xold1: DVector::from_row_slice(&self.xold1),
            xold2: DVector::from_row_slice(&self.xold2),
            low: DVector::from_row_slice(&self.low),
            upp: DVector::from_row_slice(&self.upp),
        }
    }
}

pub struct Optimizer<'a> {
    pub spec: &'a ProblemSpec,
    pub ba: &'a BucklingAnalysis,
    pub mat: &'a Material,
    pub grad: GradientOptions,
    pub mma: MmaOptions,
}

impl<'a> Optimizer<'a> {
    pub fn new(spec: &'a ProblemSpec, ba: &'a BucklingAnalysis, mat: &'a Material) -> Self {
        let mma = MmaOptions {
            move_limit: spec.move_limit,
            ..MmaOptions::default()
        };
        Self {
            spec,
            ba,
            mat,
            grad: GradientOptions::default(),
            mma,
        }
    }

    /// Standard starting design: uniform x̂ = f̄ for P1 (volume bound active
    /// from the start), uniform x̂ = 1 for P2 (feasible start).
    pub fn initial_field(&self, radius: f64, boundary: crate::design::FilterBoundary) -> DesignField {
        let mut field = self.ba.model.design_field(radius, boundary);
        let v = match self.spec.kind {
            ProblemKind::P1 => self.spec.vol_bound,
            ProblemKind::P2 => 1.0,
        };
        field.set_uniform(v);
        field
    }

    /// Compliance of the fully solid design (passive voids stay void),
    /// evaluated at the current projection parameters; P2's absolute bound
    /// is `compliance_factor` times this.
    fn solid_compliance(&self, field: &DesignField, beta: f64) -> Result<f64, LbaError> {
        let mut solid = field.clone();
        solid.set_uniform(1.0);
        solid.regularize(beta);
        let (e_k, e_s) = solid.moduli(self.mat, self.spec.continuation.p_max);
        let state = self.ba.linear_state(&e_k, &e_s)?;
        Ok(state.compliance)
    }

    /// Run the loop from `field` (or from `resume`), invoking `on_iter`
    /// after every accepted step with the record, the current design and a
    /// restart checkpoint. Terminates on max_iters or on stagnation at
    /// final continuation; the final design is left in `field`.
    pub fn run<F>(
        &self,
        field: &mut DesignField,
        resume: Option<Checkpoint>,
        mut on_iter: F,
    ) -> Result<OptState, OptError>
    where
        F: FnMut(&IterRecord, &DesignField, &Checkpoint) -> std::io::Result<()>,
    {
        self.spec.validate()?;
        let spec = self.spec;
        let sched = &spec.continuation;
        let n = field.n_free();

        let (mut iter, mut p, mut beta, mut pmax_at, mut stagnant);
        let (mut j0, mut jbar): (Option<f64>, Option<f64>);
        let mut mma;
        match resume {
            Some(cp) => {
                iter = cp.iteration;
                p = cp.p;
                beta = cp.beta;
                pmax_at = cp.pmax_at;
                stagnant = cp.stagnant;
                j0 = cp.j0;
                jbar = cp.jbar;
                mma = cp.restore_mma();
                field.set_free(&cp.x_hat);
            }
            None => {
                iter = 0;
                p = sched.p0;
                beta = sched.beta0;
                pmax_at = if sched.p0 >= sched.p_max { Some(0) } else { None };
                stagnant = 0;
                j0 = None;
                jbar = None;
                mma = MmaState::new(n);
            }
        }
        if spec.kind == ProblemKind::P2 && jbar.is_none() {
            let solid = self
                .solid_compliance(field, beta)
                .map_err(|source| OptError::AnalysisAborted {
                    iteration: iter,
                    source,
                    checkpoint: Box::new(Checkpoint::capture(
                        iter,
                        p,
                        beta,
                        pmax_at,
                        stagnant,
                        j0,
                        None,
                        &free_vector(field),
                        &mma,
                    )),
                })?;
            jbar = Some(spec.compliance_factor * solid);
            log::info!(
                "fully solid compliance {solid:.6e}; compliance bound {:.6e}",
                jbar.unwrap()
            );
        }

        let xmin = DVector::zeros(n);
        let xmax = DVector::from_element(n, 1.0);
        let mut history = Vec::new();
        let mut stagnated = false;

        while iter < spec.max_iters {
            iter += 1;
            let checkpoint_before = Checkpoint::capture(
                iter - 1,
                p,
                beta,
                pmax_at,
                stagnant,
                j0,
                jbar,
                &free_vector(field),
                &mma,
            );

            // one analysis of the current design at the current continuation
            let t0 = std::time::Instant::now();
            field.regularize(beta);
            let (e_k, e_s) = field.moduli(self.mat, p);
            let res = self
                .ba
                .analyze(&e_k, &e_s)
                .map_err(|source| OptError::AnalysisAborted {
                    iteration: iter,
                    source,
                    checkpoint: Box::new(checkpoint_before.clone()),
                })?;
            let t_analysis = t0.elapsed().as_secs_f64();

            let j = res.state.compliance;
            let f = field.volume_fraction();
            let m_nd = field.non_discreteness();
            let scale = *j0.get_or_insert(j);
            let b_eff = if spec.blf_bound > 0.0 {
                let avail = res.lambdas.len();
                if avail < spec.n_constrained {
                    log::warn!(
                        "only {avail} BLFs available for {} constraints at iteration {iter}",
                        spec.n_constrained
                    );
                }
                spec.n_constrained.min(avail)
            } else {
                0
            };
            let window: Vec<f64> =
                res.lambdas[..spec.n_constrained.min(res.lambdas.len())].to_vec();

            // gradients
            let t1 = std::time::Instant::now();
            let (d_obj_raw, d_vol, d_lam) = if b_eff > 0 {
                let modes = res.modes.columns(0, b_eff).clone_owned();
                let bundle = gradient_bundle(
                    self.ba,
                    field,
                    self.mat,
                    p,
                    &res.state,
                    &res.lambdas[..b_eff],
                    &modes,
                    &self.grad,
                )
                .map_err(|source| OptError::GradientAborted {
                    iteration: iter,
                    source,
                    checkpoint: Box::new(checkpoint_before.clone()),
                })?;
                (bundle.d_compliance, bundle.d_volume, bundle.d_lambda)
            } else {
                (
                    compliance_gradient(&self.ba.asm, field, self.mat, p, &res.state.u),
                    volume_gradient(field),
                    Vec::new(),
                )
            };
            let t_gradients = t1.elapsed().as_secs_f64();

            // assemble the subproblem: scaled objective plus constraint rows
            let t2 = std::time::Instant::now();
            let mut g_rows: Vec<(f64, Vec<f64>)> = Vec::new();
            if b_eff > 0 {
                let g_buck = bound_constraints(&res.lambdas[..b_eff], spec.blf_bound, spec.alpha)?;
                let dg_dl = bound_constraint_dg(&res.lambdas[..b_eff], spec.blf_bound, spec.alpha)?;
                for i in 0..b_eff {
                    let row = d_lam[i].iter().map(|v| dg_dl[i] * v).collect();
                    g_rows.push((g_buck[i], row));
                }
            }
            let df0: Vec<f64>;
            let objective;
            match spec.kind {
                ProblemKind::P1 => {
                    objective = 10.0 * j / scale;
                    df0 = d_obj_raw.iter().map(|v| 10.0 * v / scale).collect();
                    let dvf = 1.0 / spec.vol_bound;
                    g_rows.push((
                        f / spec.vol_bound - 1.0,
                        d_vol.iter().map(|v| dvf * v).collect(),
                    ));
                }
                ProblemKind::P2 => {
                    objective = 10.0 * f;
                    df0 = d_vol.iter().map(|v| 10.0 * v).collect();
                    let bound = jbar.expect("P2 bound computed before the loop");
                    g_rows.push((
                        j / bound - 1.0,
                        d_obj_raw.iter().map(|v| v / bound).collect(),
                    ));
                }
            }
            let m = g_rows.len();
            let fval = DVector::from_fn(m, |i, _| g_rows[i].0);
            let dfdx = DMatrix::from_fn(m, n, |i, jx| g_rows[i].1[jx]);
            let df0 = DVector::from_row_slice(&df0);

            let x = free_vector(field);
            let out = mma.update(&x, &xmin, &xmax, &df0, &fval, &dfdx, &self.mma);
            if out.relaxed {
                log::warn!("iteration {iter}: subproblem relaxed (max elastic {:.3e})", out.y.amax());
            }
            let dx_inf = (&out.x - &x).amax();
            field.set_free(out.x.as_slice());
            let t_update = t2.elapsed().as_secs_f64();

            // continuation + stagnation bookkeeping
            let at_final = sched.is_final(p, beta);
            let bumped = sched.advance(iter, &mut p, &mut beta, &mut pmax_at);
            if at_final && dx_inf < spec.stagnation_tol {
                stagnant += 1;
            } else {
                stagnant = 0;
            }

            let record = IterRecord {
                iteration: iter,
                // report the continuation under which the step was analyzed
                p: checkpoint_before.p,
                beta: checkpoint_before.beta,
                objective,
                compliance: j,
                volume: f,
                m_nd,
                coalescence: coalescence_measure(&window, spec.alpha),
                lambdas: window,
                constraints: fval.as_slice().to_vec(),
                dx_inf,
                relaxed: out.relaxed,
                bumped,
                t_analysis,
                t_gradients,
                t_update,
            };
            let checkpoint_after = Checkpoint::capture(
                iter,
                p,
                beta,
                pmax_at,
                stagnant,
                j0,
                jbar,
                &free_vector(field),
                &mma,
            );
            on_iter(&record, field, &checkpoint_after)?;
            history.push(record);

            if stagnant >= spec.stagnation_steps {
                stagnated = true;
                log::info!("stagnation reached at iteration {iter}");
                break;
            }
        }

        field.regularize(beta);
        Ok(OptState {
            iteration: iter,
            p,
            beta,
            history,
            mma,
            stagnant,
            stagnated,
        })
    }
}

fn free_vector(field: &DesignField) -> DVector<f64> {
    DVector::from_iterator(
        field.n_free(),
        field.free_indices().iter().map(|&e| field.x_hat[e]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::FilterBoundary;
    use crate::geometry::Model;
    use crate::lba::LbaOptions;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bound_constraints_follow_the_reciprocal_form() {
        // active at the bound with no spacing
        let g = bound_constraints(&[1.0], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);
        // far factors are deeply inactive
        let g = bound_constraints(&[1e9], 1.0, 0.99).unwrap();
        assert!(g[0] > -1.0 && g[0] < -0.999_999);
        // spacing raises the effective bound on higher modes
        let g = bound_constraints(&[2.0, 2.0], 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(g[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);
        assert!(matches!(
            bound_constraints(&[1.0, -0.5], 1.0, 0.99),
            Err(OptError::NonPositiveBlf(_))
        ));
    }

    #[test]
    fn constraint_set_ignores_input_ordering() {
        let a = bound_constraints(&[1.2, 0.8, 2.0], 1.0, 0.99).unwrap();
        let b = bound_constraints(&[2.0, 1.2, 0.8], 1.0, 0.99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        let da = bound_constraint_dg(&[1.2, 0.8, 2.0], 1.0, 0.99).unwrap();
        let db = bound_constraint_dg(&[0.8, 1.2, 2.0], 1.0, 0.99).unwrap();
        for (x, y) in da.iter().zip(&db) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn coalescence_vanishes_on_perfectly_spaced_factors() {
        let alpha = 0.99f64;
        // λᵢ = λ₁·α^(i−1) is exactly the admitted spacing: δ ≡ 0
        let spaced: Vec<f64> = (0..5).map(|i| 2.0 * alpha.powi(i)).collect();
        let d = coalescence_measure(&spaced, alpha);
        assert_eq!(d.len(), 4);
        for v in &d {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-14);
        }
        // the worked example: λ₂/λ₁ − α = 1.015 − 0.99
        let d = coalescence_measure(&[1.0, 1.015], 0.99);
        assert_abs_diff_eq!(d[0], 0.025, epsilon = 1e-12);
    }

    #[test]
    fn continuation_schedule_bumps_p_then_doubles_beta() {
        let sched = Continuation {
            p0: 1.0,
            p_max: 2.0,
            dp: 0.5,
            p_every: 10,
            beta0: 1.0,
            beta_max: 4.0,
            beta_every: 20,
        };
        let mut p = sched.p0;
        let mut beta = sched.beta0;
        let mut pmax_at = None;
        let mut bumps = Vec::new();
        for iter in 1..=100 {
            if sched.advance(iter, &mut p, &mut beta, &mut pmax_at) {
                bumps.push((iter, p, beta));
            }
        }
        // p: 1.0 → 1.5 at 10 → 2.0 at 20; β: ×2 at 40 and 60, capped at 4
        assert_eq!(bumps, vec![(10, 1.5, 1.0), (20, 2.0, 1.0), (40, 2.0, 2.0), (60, 2.0, 4.0)]);
        assert!(sched.is_final(p, beta));
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let mut spec = ProblemSpec::new(ProblemKind::P1, 0.5, 1.0);
        assert!(spec.validate().is_ok());
        spec.vol_bound = 1.5;
        assert!(matches!(spec.validate(), Err(OptError::Spec(_))));
        spec.vol_bound = 0.5;
        spec.n_constrained = spec.n_modes + 1;
        assert!(matches!(spec.validate(), Err(OptError::Spec(_))));
    }

    fn tiny_spec(max_iters: usize) -> ProblemSpec {
        let mut spec = ProblemSpec::new(ProblemKind::P1, 0.5, 0.5);
        spec.n_constrained = 1;
        spec.n_modes = 2;
        spec.max_iters = max_iters;
        spec.continuation = Continuation {
            p0: 1.0,
            p_max: 2.0,
            dp: 0.5,
            p_every: 2,
            beta0: 1.0,
            beta_max: 2.0,
            beta_every: 3,
        };
        spec
    }

    fn tiny_setup(spec: &ProblemSpec) -> (BucklingAnalysis, Material) {
        let model = Model::two_bar_frame(14, 6).unwrap();
        let ba = BucklingAnalysis::new(
            model,
            0.3,
            LbaOptions::new(1, spec.n_modes),
        )
        .unwrap();
        (ba, Material::default())
    }

    #[test]
    fn short_run_logs_every_iteration_and_respects_the_box() {
        let spec = tiny_spec(6);
        let (ba, mat) = tiny_setup(&spec);
        let opt = Optimizer::new(&spec, &ba, &mat);
        let mut field = opt.initial_field(1.6, FilterBoundary::Renormalize);
        assert_abs_diff_eq!(field.volume_fraction(), expected_start(&field), epsilon = 1e-12);
        let state = opt.run(&mut field, None, |_, _, _| Ok(())).unwrap();
        assert_eq!(state.history.len(), 6);
        for rec in &state.history {
            assert!(rec.compliance.is_finite() && rec.compliance > 0.0);
            assert!(!rec.lambdas.is_empty());
            assert!(rec.constraints.len() == 2); // one BLF + volume
            assert!(rec.t_analysis >= 0.0);
        }
        for &e in &field.free_indices() {
            assert!(field.x_hat[e] >= 0.0 && field.x_hat[e] <= 1.0);
        }
        // p must have climbed per the compressed schedule: bumps at 2 and 4
        assert_abs_diff_eq!(state.p, 2.0, epsilon = 1e-12);
    }

    // volume fraction of the uniform start (passive elements shift the mean)
    fn expected_start(field: &DesignField) -> f64 {
        field.x_phys.iter().sum::<f64>() / field.x_phys.len() as f64
    }

    #[test]
    fn resume_reproduces_the_tail_of_an_uninterrupted_run() {
        let spec = tiny_spec(6);
        let (ba, mat) = tiny_setup(&spec);
        let opt = Optimizer::new(&spec, &ba, &mat);

        let mut field_full = opt.initial_field(1.6, FilterBoundary::Renormalize);
        let full = opt.run(&mut field_full, None, |_, _, _| Ok(())).unwrap();

        let mut cp_at_3 = None;
        let mut field_a = opt.initial_field(1.6, FilterBoundary::Renormalize);
        let short_spec = {
            let mut s = spec.clone();
            s.max_iters = 3;
            s
        };
        let opt_a = Optimizer::new(&short_spec, &ba, &mat);
        opt_a
            .run(&mut field_a, None, |rec, _, cp| {
                if rec.iteration == 3 {
                    cp_at_3 = Some(cp.clone());
                }
                Ok(())
            })
            .unwrap();

        let mut field_b = opt.initial_field(1.6, FilterBoundary::Renormalize);
        let tail = opt
            .run(&mut field_b, Some(cp_at_3.expect("checkpoint captured")), |_, _, _| Ok(()))
            .unwrap();
        assert_eq!(tail.history.len(), 3);
        for (a, b) in full.history[3..].iter().zip(&tail.history) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.compliance.to_bits(), b.compliance.to_bits());
            assert_eq!(a.volume.to_bits(), b.volume.to_bits());
            assert_eq!(a.objective.to_bits(), b.objective.to_bits());
            for (x, y) in a.lambdas.iter().zip(&b.lambdas) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.dx_inf.to_bits(), b.dx_inf.to_bits());
        }
        // final designs agree bitwise as well
        for (x, y) in field_full.x_hat.iter().zip(&field_b.x_hat) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn disabled_buckling_bound_runs_pure_compliance_minimization() {
        let mut spec = tiny_spec(4);
        spec.blf_bound = 0.0;
        let (ba, mat) = tiny_setup(&spec);
        let opt = Optimizer::new(&spec, &ba, &mat);
        let mut field = opt.initial_field(1.6, FilterBoundary::Renormalize);
        let state = opt.run(&mut field, None, |_, _, _| Ok(())).unwrap();
        for rec in &state.history {
            assert_eq!(rec.constraints.len(), 1); // volume only
            assert!(!rec.lambdas.is_empty(), "BLFs still logged");
        }
        // once the volume bound is met it stays met (within the
        // optimizer's working tolerance)
        for rec in state.history.iter().skip(1) {
            assert!(rec.constraints[0] < 0.02, "volume bound drifted: {}", rec.constraints[0]);
        }
    }

    #[test]
    fn p2_runs_and_bounds_compliance() {
        let mut spec = tiny_spec(5);
        spec.kind = ProblemKind::P2;
        spec.blf_bound = 0.25;
        spec.compliance_factor = 6.0;
        spec.continuation.p0 = 2.0;
        let (ba, mat) = tiny_setup(&spec);
        let opt = Optimizer::new(&spec, &ba, &mat);
        let mut field = opt.initial_field(1.6, FilterBoundary::Renormalize);
        let state = opt.run(&mut field, None, |_, _, _| Ok(())).unwrap();
        assert_eq!(state.history.len(), 5);
        for rec in &state.history {
            // compliance constraint value is the last row and must be met
            // within the optimizer's working tolerance on this easy fixture
            let g_j = *rec.constraints.last().unwrap();
            assert!(g_j < 0.05, "compliance bound badly violated: {g_j}");
        }
        // volume must drop from the solid start
        let first = &state.history[0];
        let last = state.history.last().unwrap();
        assert!(last.volume < first.volume);
    }
}
