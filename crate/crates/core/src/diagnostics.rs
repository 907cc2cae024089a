//! Post-processing analytics for multilevel buckling runs: modal assurance
//! pairing between mode sets, paired BLF error measures, scalar
//! stress-stiffness summaries per grid level, strain-energy locality
//! scoring for detecting localized modes, and the thickening-based
//! reinforcement workflow built on top of it.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::design::{dilate_local, DesignField};
use crate::fem::{Assembler, Material};
use crate::grid::{galerkin_project, Dims, Hierarchy};
use crate::lba::{BucklingAnalysis, LbaError};

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("mode column {index} is not stiffness-normalized (vᵀKv = {value:.6e})")]
    NotNormalized { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Lba(#[from] LbaError),
}

/// Pairing confidence tiers: strong matches (≥ 0.95) are trusted for error
/// reporting; moderate matches ([0.85, 0.95)) are listed but not used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchConfidence {
    Strong,
    Moderate,
}

#[derive(Debug, Clone)]
pub struct MacPair {
    /// Index into the first (approximate) set.
    pub approx: usize,
    /// Index into the second (reference) set.
    pub reference: usize,
    pub value: f64,
    pub confidence: MatchConfidence,
    /// Next-best reference coefficient of the same approximate mode, for
    /// spotting ambiguous double matches.
    pub second_best: Option<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct MacMatrix {
    /// |φ̃ⱼᵀ K φ_r| for every combination, rows = approximate modes.
    pub coeffs: DMatrix<f64>,
    /// Injective greedy pairing by descending coefficient.
    pub pairs: Vec<MacPair>,
}

fn quad(k: &CsrMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(k * v))
}

/// Scale every column to unit stiffness norm (φᵀKφ = 1).
pub fn k_normalize(
    modes: &DMatrix<f64>,
    k: &CsrMatrix<f64>,
) -> Result<DMatrix<f64>, DiagnosticsError> {
    let mut out = modes.clone_owned();
    for j in 0..out.ncols() {
        let col = out.column(j).clone_owned();
        let e = quad(k, &col);
        if !(e.is_finite() && e > 0.0) {
            return Err(DiagnosticsError::NotNormalized { index: j, value: e });
        }
        out.column_mut(j).scale_mut(1.0 / e.sqrt());
    }
    Ok(out)
}

const NORMALIZATION_TOL: f64 = 1e-6;

/// Modal assurance coefficients c_jr = |φ̃ⱼᵀ K φ_r| between two
/// stiffness-normalized mode sets, with a greedy injective pairing. Both
/// sets must satisfy φᵀKφ = 1 beforehand.
pub fn mac(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &CsrMatrix<f64>,
) -> Result<MacMatrix, DiagnosticsError> {
    if a.nrows() != k.nrows() || b.nrows() != k.nrows() {
        return Err(DiagnosticsError::Shape(format!(
            "mode rows {}/{} vs operator {}",
            a.nrows(),
            b.nrows(),
            k.nrows()
        )));
    }
    for (set, name) in [(a, 0usize), (b, 1usize)] {
        for j in 0..set.ncols() {
            let col = set.column(j).clone_owned();
            let e = quad(k, &col);
            if (e - 1.0).abs() > NORMALIZATION_TOL {
                return Err(DiagnosticsError::NotNormalized {
                    index: name * set.ncols() + j,
                    value: e,
                });
            }
        }
    }
    // coeffs = |Aᵀ K B| column by column
    let mut coeffs = DMatrix::zeros(a.ncols(), b.ncols());
    for r in 0..b.ncols() {
        let kb = k * &b.column(r).clone_owned();
        for j in 0..a.ncols() {
            coeffs[(j, r)] = a.column(j).dot(&kb).abs();
        }
    }

    // greedy descending pairing; ties broken by lower reference index,
    // then lower approximate index
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(a.ncols() * b.ncols());
    for j in 0..a.ncols() {
        for r in 0..b.ncols() {
            entries.push((j, r, coeffs[(j, r)]));
        }
    }
    entries.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .expect("finite coefficients")
            .then(x.1.cmp(&y.1))
            .then(x.0.cmp(&y.0))
    });
    let mut used_a = vec![false; a.ncols()];
    let mut used_b = vec![false; b.ncols()];
    let mut pairs = Vec::new();
    for (j, r, v) in entries {
        if used_a[j] || used_b[r] || v < 0.85 {
            continue;
        }
        used_a[j] = true;
        used_b[r] = true;
        let confidence = if v >= 0.95 {
            MatchConfidence::Strong
        } else {
            MatchConfidence::Moderate
        };
        let mut second_best: Option<(usize, f64)> = None;
        for r2 in 0..b.ncols() {
            if r2 == r {
                continue;
            }
            let c = coeffs[(j, r2)];
            if second_best.map_or(true, |(_, sv)| c > sv) {
                second_best = Some((r2, c));
            }
        }
        pairs.push(MacPair {
            approx: j,
            reference: r,
            value: v,
            confidence,
            second_best,
        });
    }
    pairs.sort_by_key(|p| p.approx);
    Ok(MacMatrix { coeffs, pairs })
}

/// Relative BLF errors ε = 1 − λ̃/λ in two orderings: positionally by
/// index, and along strong MAC pairs only.
#[derive(Debug, Clone)]
pub struct BlfErrorReport {
    /// εᵢ = 1 − λ̃ᵢ/λᵢ for i up to the shorter set.
    pub raw: Vec<f64>,
    /// (approx index, reference index, ε) for each strong pair.
    pub paired: Vec<(usize, usize, f64)>,
}

pub fn blf_errors(approx: &[f64], reference: &[f64], pairing: &MacMatrix) -> BlfErrorReport {
    let raw = approx
        .iter()
        .zip(reference)
        .map(|(t, e)| 1.0 - t / e)
        .collect();
    let paired = pairing
        .pairs
        .iter()
        .filter(|p| p.confidence == MatchConfidence::Strong)
        .filter(|p| p.approx < approx.len() && p.reference < reference.len())
        .map(|p| (p.approx, p.reference, 1.0 - approx[p.approx] / reference[p.reference]))
        .collect();
    BlfErrorReport { raw, paired }
}

fn diagonal(m: &CsrMatrix<f64>) -> Vec<f64> {
    let mut d = vec![0.0; m.nrows()];
    for (i, row) in m.row_iter().enumerate() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if c == i {
                d[i] = v;
            }
        }
    }
    d
}

/// Per-node magnitude of an operator's diagonal: at node i the x- and
/// y-dof diagonal entries are combined as sqrt(d²_x + d²_y).
pub fn nodal_magnitudes(m: &CsrMatrix<f64>) -> Vec<f64> {
    let d = diagonal(m);
    (0..m.nrows() / 2)
        .map(|i| (d[2 * i] * d[2 * i] + d[2 * i + 1] * d[2 * i + 1]).sqrt())
        .collect()
}

/// Scalar comparison of stress stiffness against elastic stiffness:
/// the nodal field 𝒢 and ζ = maxᵢ 𝒢ᵢ/𝒦ᵢ over nodes with 𝒦ᵢ > 0.
pub fn stress_stiffness_ratio(g: &CsrMatrix<f64>, k: &CsrMatrix<f64>) -> (Vec<f64>, f64) {
    let gm = nodal_magnitudes(g);
    let km = nodal_magnitudes(k);
    let zeta = gm
        .iter()
        .zip(&km)
        .filter(|(_, &kv)| kv > 0.0)
        .map(|(&gv, &kv)| gv / kv)
        .fold(0.0f64, f64::max);
    (gm, zeta)
}

/// ζ on every level of the hierarchy, restricting both operators by
/// Galerkin projection (stiffness keeps unit diagonals on fixed rows, the
/// stress stiffness keeps zero rows).
pub fn zeta_per_level(hier: &Hierarchy, k: &CsrMatrix<f64>, g: &CsrMatrix<f64>) -> Vec<f64> {
    let mut ks = vec![k.clone()];
    let mut gs = vec![g.clone()];
    for l in 1..hier.num_levels() {
        let fixed = &hier.levels[l].fixed;
        ks.push(galerkin_project(&ks[l - 1], &hier.prolong[l - 1], fixed, true));
        gs.push(galerkin_project(&gs[l - 1], &hier.prolong[l - 1], fixed, false));
    }
    ks.iter()
        .zip(&gs)
        .map(|(kl, gl)| stress_stiffness_ratio(gl, kl).1)
        .collect()
}

#[derive(Debug, Clone)]
pub struct LocalityOptions {
    /// Density threshold defining the evaluation domain Ω_≥.
    pub x_bar: f64,
    /// Flag modes whose normalized score exceeds this multiple of mode 1's.
    pub flag_multiple: f64,
    /// Fraction of the per-mode maximum |∇π| that admits an element into
    /// the reinforcement neighborhood.
    pub neighborhood_frac: f64,
}

impl Default for LocalityOptions {
    fn default() -> Self {
        Self {
            x_bar: 0.9,
            flag_multiple: 10.0,
            neighborhood_frac: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalityReport {
    /// Per mode, per element strain-energy density π.
    pub energies: Vec<Vec<f64>>,
    /// Per mode, per element |∇π| (central differences on the element grid).
    pub grad_mags: Vec<Vec<f64>>,
    /// Raw total-variation sums over Ω_≥.
    pub tv: Vec<f64>,
    /// TV normalized by mode 1 (score of mode 1 is exactly 1).
    pub scores: Vec<f64>,
    /// Modes whose score exceeds the flag multiple.
    pub flagged: Vec<usize>,
    /// Union of the flagged modes' high-gradient neighborhoods N_e.
    pub neighborhood: Vec<bool>,
    /// The evaluation domain Ω_≥ = {x_e ≥ x̄}.
    pub domain: Vec<bool>,
    pub threshold: f64,
}

/// Gradient-magnitude field of a per-element scalar: central differences in
/// the interior, one-sided at the boundary.
fn grad_magnitude(dims: Dims, f: &[f64]) -> Vec<f64> {
    let (nx, ny) = (dims.nelx, dims.nely);
    let mut out = vec![0.0; f.len()];
    for ex in 0..nx {
        for ey in 0..ny {
            let gx = if nx == 1 {
                0.0
            } else if ex == 0 {
                f[dims.elem(1, ey)] - f[dims.elem(0, ey)]
            } else if ex == nx - 1 {
                f[dims.elem(nx - 1, ey)] - f[dims.elem(nx - 2, ey)]
            } else {
                0.5 * (f[dims.elem(ex + 1, ey)] - f[dims.elem(ex - 1, ey)])
            };
            let gy = if ny == 1 {
                0.0
            } else if ey == 0 {
                f[dims.elem(ex, 1)] - f[dims.elem(ex, 0)]
            } else if ey == ny - 1 {
                f[dims.elem(ex, ny - 1)] - f[dims.elem(ex, ny - 2)]
            } else {
                0.5 * (f[dims.elem(ex, ey + 1)] - f[dims.elem(ex, ey - 1)])
            };
            out[dims.elem(ex, ey)] = gx.hypot(gy);
        }
    }
    out
}

/// Total variation of a per-element field over a masked domain.
#[cfg(test)]
pub(crate) fn tv_of_field(dims: Dims, f: &[f64], domain: &[bool]) -> f64 {
    grad_magnitude(dims, f)
        .iter()
        .zip(domain)
        .filter(|(_, &d)| d)
        .map(|(g, _)| g)
        .sum()
}

/// Locality scoring of a mode set: element strain-energy densities
/// π_e = E(x_e)·φ_eᵀk₀φ_e, their total variation over the solid domain,
/// scores normalized by the fundamental mode, and the flagged localized
/// modes with their reinforcement neighborhoods.
pub fn locality_scores(
    asm: &Assembler,
    e_k: &[f64],
    modes: &DMatrix<f64>,
    x_phys: &[f64],
    opts: &LocalityOptions,
) -> LocalityReport {
    let dims = asm.dims;
    let m = dims.n_elems();
    assert_eq!(e_k.len(), m, "modulus field length");
    assert_eq!(x_phys.len(), m, "density field length");
    let domain: Vec<bool> = x_phys.iter().map(|&x| x >= opts.x_bar).collect();
    let q = modes.ncols();

    let mut energies = Vec::with_capacity(q);
    let mut grad_mags = Vec::with_capacity(q);
    let mut tv = Vec::with_capacity(q);
    for j in 0..q {
        let col = modes.column(j).clone_owned();
        let phi: Vec<f64> = col.as_slice().to_vec();
        let mut pi = vec![0.0; m];
        for e in 0..m {
            let pe = asm.gather(e, &DVector::from_row_slice(&phi));
            let v = nalgebra::SVector::<f64, 8>::from_row_slice(&pe);
            pi[e] = e_k[e] * (v.transpose() * asm.kernel.ke0 * v)[(0, 0)];
        }
        let gm = grad_magnitude(dims, &pi);
        let sum: f64 = gm.iter().zip(&domain).filter(|(_, &d)| d).map(|(g, _)| g).sum();
        energies.push(pi);
        grad_mags.push(gm);
        tv.push(sum);
    }

    let base = tv.first().copied().unwrap_or(0.0);
    let scores: Vec<f64> = if base > 0.0 {
        tv.iter().map(|t| t / base).collect()
    } else {
        vec![0.0; q]
    };
    let flagged: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > opts.flag_multiple)
        .map(|(j, _)| j)
        .collect();

    let mut neighborhood = vec![false; m];
    for &j in &flagged {
        let max = grad_mags[j].iter().fold(0.0f64, |a, &b| a.max(b));
        if max <= 0.0 {
            continue;
        }
        for e in 0..m {
            if grad_mags[j][e] >= opts.neighborhood_frac * max {
                neighborhood[e] = true;
            }
        }
    }

    LocalityReport {
        energies,
        grad_mags,
        tv,
        scores,
        flagged,
        neighborhood,
        domain,
        threshold: opts.flag_multiple,
    }
}

#[derive(Debug, Clone)]
pub struct ReinforceOutcome {
    /// Thickened physical density field.
    pub x_phys: Vec<f64>,
    pub volume_before: f64,
    pub volume_after: f64,
    pub lambdas_before: Vec<f64>,
    pub lambdas_after: Vec<f64>,
    /// Δλᵢ/λᵢ positionally over the common window.
    pub rel_delta: Vec<f64>,
}

/// Thicken the reinforcement neighborhoods of the flagged localized modes
/// by morphological dilation of radius `r_th` and re-analyze. With no
/// flagged modes this is the identity (no re-analysis, zero deltas).
pub fn reinforce(
    ba: &BucklingAnalysis,
    mat: &Material,
    p: f64,
    field: &DesignField,
    report: &LocalityReport,
    r_th: f64,
) -> Result<ReinforceOutcome, DiagnosticsError> {
    let (e_k, e_s) = field.moduli(mat, p);
    let before = ba.analyze(&e_k, &e_s)?;
    let volume_before = field.volume_fraction();
    if report.flagged.is_empty() {
        return Ok(ReinforceOutcome {
            x_phys: field.x_phys.clone(),
            volume_before,
            volume_after: volume_before,
            lambdas_before: before.lambdas.clone(),
            lambdas_after: before.lambdas,
            rel_delta: Vec::new(),
        });
    }

    let dilated = dilate_local(field.dims, &field.x_phys, &report.neighborhood, r_th);
    let mut thick = field.clone();
    thick.x_phys = dilated;
    let (e_k, e_s) = thick.moduli(mat, p);
    let after = ba.analyze(&e_k, &e_s)?;
    let volume_after = thick.volume_fraction();

    let n = before.lambdas.len().min(after.lambdas.len());
    let rel_delta = (0..n)
        .map(|i| (after.lambdas[i] - before.lambdas[i]) / before.lambdas[i])
        .collect();
    Ok(ReinforceOutcome {
        x_phys: thick.x_phys,
        volume_before,
        volume_after,
        lambdas_before: before.lambdas,
        lambdas_after: after.lambdas,
        rel_delta,
    })
}
