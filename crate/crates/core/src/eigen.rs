//! Buckling eigensolvers for the pencil (K + lambda G) phi = 0.
//!
//! Both solvers work on the reciprocal form M = -K^{-1} G, whose largest
//! positive eigenvalues mu correspond to the smallest positive load
//! factors lambda = 1/mu. M is self-adjoint in the K-inner product, so a
//! Lanczos process run in that inner product (with full
//! reorthogonalization and thick restarts) is the iterative path; a dense
//! Cholesky reduction serves as the small-problem oracle.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CscMatrix, CsrMatrix};
use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::to_dense;

/// Hard cap for the dense reduction path.
pub const MAX_DENSE_DOFS: usize = 5000;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("dense eigensolver limited to {max} dofs, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("stiffness matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("pencil has only {found} positive load factors, {requested} requested")]
    FewerPositiveModes { found: usize, requested: usize },
    #[error("only {converged} of {requested} modes converged to {tol:.1e} after {iterations} iterations (best residual set retained)")]
    NotConverged {
        pairs: EigenPairs,
        converged: usize,
        requested: usize,
        tol: f64,
        iterations: usize,
    },
}

/// Load factors (ascending, positive) with K-orthonormal mode shapes and
/// explicit pencil residuals ||(K + lambda G) phi|| / ||K phi||.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Relative pencil-residual tolerance.
    pub tol: f64,
    /// Maximum Krylov basis size before a thick restart.
    pub max_basis: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_basis: 0, // 0 = chosen from q at solve time
            max_restarts: 60,
            seed: 8271,
        }
    }
}

/// Fix the sign of each column so its largest-magnitude entry is positive.
pub fn fix_signs(vectors: &mut DMatrix<f64>) {
    for c in 0..vectors.ncols() {
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for i in 0..vectors.nrows() {
            let a = vectors[(i, c)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if vectors[(best, c)] < 0.0 {
            for i in 0..vectors.nrows() {
                vectors[(i, c)] = -vectors[(i, c)];
            }
        }
    }
}

fn pencil_residual(
    k: &CsrMatrix<f64>,
    g: &CsrMatrix<f64>,
    lambda: f64,
    phi: &DVector<f64>,
) -> f64 {
    let kp = k * phi;
    let gp = g * phi;
    let num = (&kp + lambda * &gp).norm();
    num / kp.norm().max(f64::MIN_POSITIVE)
}

/// Dense oracle: reduce the pencil with the Cholesky factor of K and solve
/// the resulting symmetric eigenproblem. Returns the `q` smallest positive
/// load factors.
pub fn dense_oracle(
    k: &CsrMatrix<f64>,
    g: &CsrMatrix<f64>,
    q: usize,
) -> Result<EigenPairs, EigenError> {
    let n = k.nrows();
    if n > MAX_DENSE_DOFS {
        return Err(EigenError::TooLarge {
            n,
            max: MAX_DENSE_DOFS,
        });
    }
    let kd = to_dense(k);
    let gd = to_dense(g);
    let chol = kd.cholesky().ok_or(EigenError::NotPositiveDefinite)?;
    let l = chol.l();
    // C = -L^{-1} G L^{-T}: mu-form of the pencil, symmetric
    let mut c = -gd;
    l.solve_lower_triangular_mut(&mut c);
    c.transpose_mut();
    l.solve_lower_triangular_mut(&mut c);
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let positive: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > 0.0)
        .take(q)
        .collect();
    if positive.len() < q {
        return Err(EigenError::FewerPositiveModes {
            found: positive.len(),
            requested: q,
        });
    }

    let mut values = Vec::with_capacity(q);
    let mut vectors = DMatrix::zeros(n, q);
    for (col, &i) in positive.iter().enumerate() {
        values.push(1.0 / eig.eigenvalues[i]);
        // back-substitute: phi = L^{-T} y, K-orthonormal by construction
        let mut phi = eig.eigenvectors.column(i).clone_owned();
        l.transpose().solve_upper_triangular_mut(&mut phi);
        vectors.set_column(col, &phi);
    }
    fix_signs(&mut vectors);
    let residuals = (0..q)
        .map(|c| pencil_residual(k, g, values[c], &vectors.column(c).clone_owned()))
        .collect();
    Ok(EigenPairs {
        values,
        vectors,
        residuals,
    })
}

/// Shift-invert Lanczos on M = -K^{-1} G in the K-inner product with full
/// reorthogonalization and thick restarts; K is factorized once. Returns
/// the `q` smallest positive load factors to the requested pencil-residual
/// tolerance.
pub fn solve_coarse(
    k: &CsrMatrix<f64>,
    g: &CsrMatrix<f64>,
    q: usize,
    opts: &LanczosOptions,
) -> Result<EigenPairs, EigenError> {
    let n = k.nrows();
    let factor = CscCholesky::factor(&CscMatrix::from(k))
        .map_err(|_| EigenError::NotPositiveDefinite)?;
    // one pass of iterative refinement: at the stiffness contrasts seen in
    // production pencils a bare factored solve cannot certify the pencil
    // residual down to the requested tolerance
    let solve = |r: &DVector<f64>| -> DVector<f64> {
        let b = DMatrix::from_column_slice(n, 1, r.as_slice());
        let mut x = DVector::from_column_slice(factor.solve(&b).column(0).as_slice());
        let res = r - k * &x;
        let rb = DMatrix::from_column_slice(n, 1, res.as_slice());
        x += DVector::from_column_slice(factor.solve(&rb).column(0).as_slice());
        x
    };
    let apply_m = |v: &DVector<f64>| -> DVector<f64> { -solve(&(g * v)) };

    // dofs G actually touches; everything else is invariant under M
    let active: Vec<bool> = {
        let mut a = vec![false; n];
        for (i, j, v) in g.triplet_iter() {
            if *v != 0.0 {
                a[i] = true;
                a[j] = true;
            }
        }
        a
    };
    let n_active = active.iter().filter(|&&b| b).count();
    if n_active == 0 {
        return Err(EigenError::FewerPositiveModes {
            found: 0,
            requested: q,
        });
    }

    // buffer modes protect cluster boundaries: aim the subspace at a few
    // more directions than requested
    let q_buf = q + (q / 4).max(4);
    let max_basis = if opts.max_basis > 0 {
        opts.max_basis
    } else {
        (2 * q_buf + 12).max(24)
    }
    .min(n_active);
    let keep = (q_buf + 3).min(max_basis.saturating_sub(2)).max(q.min(max_basis));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let v0 = DVector::from_fn(n, |i, _| {
        if active[i] {
            rng.random::<f64>() - 0.5
        } else {
            0.0
        }
    });

    // basis in V, its K-image in KV, projected operator H (symmetric)
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_basis + 1);
    let mut k_basis: Vec<DVector<f64>> = Vec::with_capacity(max_basis + 1);
    let mut h = DMatrix::<f64>::zeros(max_basis + 1, max_basis + 1);
    let mut hdim = 0usize;

    let push_normalized = |v: DVector<f64>,
                               basis: &mut Vec<DVector<f64>>,
                               k_basis: &mut Vec<DVector<f64>>|
     -> Option<f64> {
        let kv = k * &v;
        let norm = v.dot(&kv).max(0.0).sqrt();
        if norm <= 1e-150 {
            return None;
        }
        basis.push(&v / norm);
        k_basis.push(&kv / norm);
        Some(norm)
    };
    push_normalized(v0.clone(), &mut basis, &mut k_basis)
        .expect("nonzero start vector");

    let mut iterations = 0usize;
    let mut best: Option<(Vec<f64>, DMatrix<f64>, Vec<f64>)> = None;

    for _restart in 0..opts.max_restarts {
        // expand until the basis is full
        while hdim < max_basis.min(basis.len() + max_basis) && basis.len() <= max_basis {
            let j = basis.len() - 1;
            if j < hdim {
                break;
            }
            iterations += 1;
            let mut w = apply_m(&basis[j]);
            // classical Gram-Schmidt in the K-inner product, twice
            let mut coeffs = vec![0.0; basis.len()];
            for pass in 0..2 {
                for (i, kv) in k_basis.iter().enumerate() {
                    let c = w.dot(kv);
                    if pass == 0 {
                        coeffs[i] = c;
                    } else {
                        coeffs[i] += c;
                    }
                    w.axpy(-c, &basis[i], 1.0);
                }
            }
            for (i, &c) in coeffs.iter().enumerate() {
                h[(i, j)] = c;
                h[(j, i)] = c;
            }
            hdim = basis.len();
            match push_normalized(w, &mut basis, &mut k_basis) {
                Some(beta) => {
                    h[(hdim, hdim - 1)] = beta;
                    h[(hdim - 1, hdim)] = beta;
                }
                None => break, // invariant subspace reached
            }
            if basis.len() > max_basis {
                break;
            }
        }

        // Ritz extraction from the projected symmetric matrix
        let hs = h.view((0, 0), (hdim, hdim)).clone_owned();
        let eig = hs.symmetric_eigen();
        let mut order: Vec<usize> = (0..hdim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let beta_next = if basis.len() > hdim {
            h[(hdim, hdim - 1)]
        } else {
            0.0
        };
        let positive: Vec<usize> = order
            .iter()
            .cloned()
            .filter(|&i| eig.eigenvalues[i] > 0.0)
            .collect();

        let exhausted = basis.len() <= hdim || hdim >= n_active;
        if positive.len() >= q || exhausted {
            let take = positive.len().min(q);
            let mut values = Vec::with_capacity(take);
            let mut vectors = DMatrix::zeros(n, take);
            let mut residuals = Vec::with_capacity(take);
            let mut all_ok = take == q;
            for (col, &i) in positive.iter().take(take).enumerate() {
                let mu = eig.eigenvalues[i];
                let lambda = 1.0 / mu;
                let s = eig.eigenvectors.column(i);
                let mut y = DVector::zeros(n);
                for (bi, b) in basis.iter().take(hdim).enumerate() {
                    y.axpy(s[bi], b, 1.0);
                }
                let res = pencil_residual(k, g, lambda, &y);
                values.push(lambda);
                vectors.set_column(col, &y);
                residuals.push(res);
                if res > opts.tol {
                    all_ok = false;
                }
            }
            fix_signs(&mut vectors);
            if all_ok && take == q {
                return Ok(EigenPairs {
                    values,
                    vectors,
                    residuals,
                });
            }
            if exhausted {
                return if take < q {
                    Err(EigenError::FewerPositiveModes {
                        found: take,
                        requested: q,
                    })
                } else {
                    // invariant subspace: residual is roundoff-limited
                    Ok(EigenPairs {
                        values,
                        vectors,
                        residuals,
                    })
                };
            }
            best = Some((values, vectors.clone(), residuals));
        }

        // thick restart: keep the leading Ritz vectors plus the residual
        // direction; the projected operator becomes arrowhead
        let kept: Vec<usize> = order.iter().cloned().take(keep.min(hdim)).collect();
        let mut new_basis: Vec<DVector<f64>> = Vec::with_capacity(max_basis + 1);
        let mut new_k_basis: Vec<DVector<f64>> = Vec::with_capacity(max_basis + 1);
        for &i in &kept {
            let s = eig.eigenvectors.column(i);
            let mut y = DVector::zeros(n);
            let mut ky = DVector::zeros(n);
            for (bi, (b, kb)) in basis.iter().zip(k_basis.iter()).take(hdim).enumerate() {
                y.axpy(s[bi], b, 1.0);
                ky.axpy(s[bi], kb, 1.0);
            }
            new_basis.push(y);
            new_k_basis.push(ky);
        }
        let residual_vec = basis[hdim].clone();
        let residual_kvec = k_basis[hdim].clone();
        h.fill(0.0);
        for (idx, &i) in kept.iter().enumerate() {
            h[(idx, idx)] = eig.eigenvalues[i];
            let coupling = beta_next * eig.eigenvectors[(hdim - 1, i)];
            h[(idx, kept.len())] = coupling;
            h[(kept.len(), idx)] = coupling;
        }
        new_basis.push(residual_vec);
        new_k_basis.push(residual_kvec);
        basis = new_basis;
        k_basis = new_k_basis;
        // continue the expansion from the residual direction: its H column
        // gets filled here (the arrowhead couplings above stay)
        let j = basis.len() - 1;
        iterations += 1;
        let mut w = apply_m(&basis[j]);
        let mut coeffs = vec![0.0; basis.len()];
        for pass in 0..2 {
            for (i, kv) in k_basis.iter().enumerate() {
                let c = w.dot(kv);
                if pass == 0 {
                    coeffs[i] = c;
                } else {
                    coeffs[i] += c;
                }
                w.axpy(-c, &basis[i], 1.0);
            }
        }
        h[(j, j)] = coeffs[j];
        hdim = basis.len();
        if let Some(beta) = push_normalized(w, &mut basis, &mut k_basis) {
            h[(hdim, hdim - 1)] = beta;
            h[(hdim - 1, hdim)] = beta;
        }
    }

    let pairs = match best {
        Some((values, vectors, residuals)) => EigenPairs {
            values,
            vectors,
            residuals,
        },
        None => EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(k.nrows(), 0),
            residuals: Vec::new(),
        },
    };
    let converged = pairs.residuals.iter().filter(|&&r| r <= opts.tol).count();
    if converged == q && pairs.values.len() == q {
        Ok(pairs)
    } else {
        Err(EigenError::NotConverged {
            converged,
            requested: q,
            tol: opts.tol,
            iterations,
            pairs,
        })
    }
}
