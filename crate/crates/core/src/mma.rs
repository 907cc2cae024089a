//! Method of moving asymptotes (Svanberg's separable convex approximation)
//! with the standard primal-dual interior-point subproblem solve. Handles a
//! small number of constraints against many box-bounded variables; the
//! constraint relaxation variables make every subproblem feasible, and their
//! activation is reported so callers can log it.

use nalgebra::{DMatrix, DVector};

/// Fixed numerical constants of the method. The defaults are the commonly
/// published ones; none of them are tuned per problem.
#[derive(Debug, Clone)]
pub struct MmaOptions {
    /// Initial asymptote distance as a fraction of the box range.
    pub asy_init: f64,
    /// Asymptote growth factor applied on steadily moving variables.
    pub asy_incr: f64,
    /// Asymptote shrink factor applied on oscillating variables.
    pub asy_decr: f64,
    /// Per-step move limit as a fraction of the box range.
    pub move_limit: f64,
    /// Fraction of the asymptote gap kept clear of the bounds.
    pub albefa: f64,
    /// Minimum curvature regularization of the approximation.
    pub raa0: f64,
    /// Target barrier parameter of the interior-point solve.
    pub epsimin: f64,
    /// Weight of the linear objective term on the auxiliary variable z.
    pub a0: f64,
    /// Per-constraint coefficient on z (zero for plain constraints).
    pub a: f64,
    /// Per-constraint linear penalty on the relaxation variables.
    pub c: f64,
    /// Per-constraint quadratic penalty on the relaxation variables.
    pub d: f64,
}

impl Default for MmaOptions {
    fn default() -> Self {
        Self {
            asy_init: 0.5,
            asy_incr: 1.2,
            asy_decr: 0.7,
            move_limit: 0.2,
            albefa: 0.1,
            raa0: 1e-5,
            epsimin: 1e-7,
            a0: 1.0,
            a: 0.0,
            c: 1000.0,
            d: 1.0,
        }
    }
}

/// Persistent per-variable memory: the two previous iterates drive the
/// asymptote adaptation, and the asymptotes themselves carry over.
#[derive(Debug, Clone)]
pub struct MmaState {
    pub iter: usize,
    pub xold1: DVector<f64>,
    pub xold2: DVector<f64>,
    pub low: DVector<f64>,
    pub upp: DVector<f64>,
}

/// Result of one update: the new iterate plus the subproblem's relaxation
/// and dual values for diagnostics.
#[derive(Debug, Clone)]
pub struct MmaOutcome {
    pub x: DVector<f64>,
    /// Constraint relaxation variables; nonzero entries mean the convex
    /// subproblem was infeasible and got elastically relaxed.
    pub y: DVector<f64>,
    /// Constraint duals (useful for activity reporting).
    pub lam: DVector<f64>,
    pub relaxed: bool,
}

impl MmaState {
    pub fn new(n: usize) -> Self {
        Self {
            iter: 0,
            xold1: DVector::zeros(n),
            xold2: DVector::zeros(n),
            low: DVector::zeros(n),
            upp: DVector::zeros(n),
        }
    }

    /// One outer step: build the separable approximation around `x` from the
    /// objective gradient and the constraint values/gradients, solve it and
    /// return the new iterate. `dfdx` is constraints-by-variables.
    pub fn update(
        &mut self,
        x: &DVector<f64>,
        xmin: &DVector<f64>,
        xmax: &DVector<f64>,
        df0dx: &DVector<f64>,
        fval: &DVector<f64>,
        dfdx: &DMatrix<f64>,
        opts: &MmaOptions,
    ) -> MmaOutcome {
        let n = x.len();
        let m = fval.len();
        assert_eq!(df0dx.len(), n, "objective gradient length");
        assert_eq!(dfdx.nrows(), m, "constraint gradient rows");
        assert_eq!(dfdx.ncols(), n, "constraint gradient cols");
        self.iter += 1;

        let range = xmax - xmin;
        if self.iter < 3 {
            self.low = x - opts.asy_init * &range;
            self.upp = x + opts.asy_init * &range;
        } else {
            for j in 0..n {
                let trend = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if trend > 0.0 {
                    opts.asy_incr
                } else if trend < 0.0 {
                    opts.asy_decr
                } else {
                    1.0
                };
                self.low[j] = x[j] - factor * (self.xold1[j] - self.low[j]);
                self.upp[j] = x[j] + factor * (self.upp[j] - self.xold1[j]);
                self.low[j] = self.low[j]
                    .max(x[j] - 10.0 * range[j])
                    .min(x[j] - 0.01 * range[j]);
                self.upp[j] = self.upp[j]
                    .min(x[j] + 10.0 * range[j])
                    .max(x[j] + 0.01 * range[j]);
            }
        }
        self.xold2 = std::mem::replace(&mut self.xold1, x.clone());

        // feasible move box: inside the asymptotes, the move limit and [xmin, xmax]
        let mut alfa = DVector::zeros(n);
        let mut beta = DVector::zeros(n);
        for j in 0..n {
            alfa[j] = (self.low[j] + opts.albefa * (x[j] - self.low[j]))
                .max(x[j] - opts.move_limit * range[j])
                .max(xmin[j]);
            beta[j] = (self.upp[j] - opts.albefa * (self.upp[j] - x[j]))
                .min(x[j] + opts.move_limit * range[j])
                .min(xmax[j]);
        }

        // separable approximation coefficients
        let mut p0 = DVector::zeros(n);
        let mut q0 = DVector::zeros(n);
        let mut pmat = DMatrix::zeros(m, n);
        let mut qmat = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for j in 0..n {
            let ux = self.upp[j] - x[j];
            let xl = x[j] - self.low[j];
            let inv_range = 1.0 / range[j].max(1e-5);
            let gp = df0dx[j].max(0.0);
            let gm = (-df0dx[j]).max(0.0);
            let reg = 0.001 * (gp + gm) + opts.raa0 * inv_range;
            p0[j] = (gp + reg) * ux * ux;
            q0[j] = (gm + reg) * xl * xl;
            for i in 0..m {
                let gp = dfdx[(i, j)].max(0.0);
                let gm = (-dfdx[(i, j)]).max(0.0);
                let reg = 0.001 * (gp + gm) + opts.raa0 * inv_range;
                pmat[(i, j)] = (gp + reg) * ux * ux;
                qmat[(i, j)] = (gm + reg) * xl * xl;
                b[i] += pmat[(i, j)] / ux + qmat[(i, j)] / xl;
            }
        }
        b -= fval;

        let (xnew, y, lam) = solve_subproblem(
            m, &self.low, &self.upp, &alfa, &beta, &p0, &q0, &pmat, &qmat, &b, opts,
        );
        let relaxed = y.amax() > 1e-6;
        MmaOutcome {
            x: xnew,
            y,
            lam,
            relaxed,
        }
    }
}

/// Primal-dual interior-point solve of the separable subproblem
///   min Σ p0/(upp−x) + q0/(x−low) + a0·z + Σ(c·y + d/2·y²)
///   s.t. Σ P/(upp−x) + Q/(x−low) − a·z − y ≤ b,  alfa ≤ x ≤ beta, y ≥ 0, z ≥ 0.
#[allow(clippy::too_many_arguments)]
fn solve_subproblem(
    m: usize,
    low: &DVector<f64>,
    upp: &DVector<f64>,
    alfa: &DVector<f64>,
    beta: &DVector<f64>,
    p0: &DVector<f64>,
    q0: &DVector<f64>,
    pmat: &DMatrix<f64>,
    qmat: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: &MmaOptions,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = low.len();
    let avec = DVector::from_element(m, opts.a);
    let cvec = DVector::from_element(m, opts.c);
    let dvec = DVector::from_element(m, opts.d);

    let mut x = 0.5 * (alfa + beta);
    let mut y = DVector::from_element(m, 1.0);
    let mut z = 1.0f64;
    let mut lam = DVector::from_element(m, 1.0);
    let mut xsi = DVector::from_fn(n, |j, _| (1.0 / (x[j] - alfa[j])).max(1.0));
    let mut eta = DVector::from_fn(n, |j, _| (1.0 / (beta[j] - x[j])).max(1.0));
    let mut mu = DVector::from_fn(m, |i, _| (0.5 * cvec[i]).max(1.0));
    let mut zet = 1.0f64;
    let mut s = DVector::from_element(m, 1.0);

    // Full KKT residual of the barrier problem at parameter `epsi`;
    // returns (norm, max-abs).
    let residual = |x: &DVector<f64>,
                    y: &DVector<f64>,
                    z: f64,
                    lam: &DVector<f64>,
                    xsi: &DVector<f64>,
                    eta: &DVector<f64>,
                    mu: &DVector<f64>,
                    zet: f64,
                    s: &DVector<f64>,
                    epsi: f64|
     -> (f64, f64) {
        let mut sq = 0.0f64;
        let mut mx = 0.0f64;
        let mut push = |v: f64| {
            sq += v * v;
            mx = mx.max(v.abs());
        };
        let mut gvec: DVector<f64> = DVector::zeros(m);
        for j in 0..n {
            let ux = upp[j] - x[j];
            let xl = x[j] - low[j];
            let mut plam = p0[j];
            let mut qlam = q0[j];
            for i in 0..m {
                plam += pmat[(i, j)] * lam[i];
                qlam += qmat[(i, j)] * lam[i];
                gvec[i] += pmat[(i, j)] / ux + qmat[(i, j)] / xl;
            }
            push(plam / (ux * ux) - qlam / (xl * xl) - xsi[j] + eta[j]);
            push(xsi[j] * (x[j] - alfa[j]) - epsi);
            push(eta[j] * (beta[j] - x[j]) - epsi);
        }
        for i in 0..m {
            push(cvec[i] + dvec[i] * y[i] - mu[i] - lam[i]);
            push(gvec[i] - avec[i] * z - y[i] + s[i] - b[i]);
            push(mu[i] * y[i] - epsi);
            push(lam[i] * s[i] - epsi);
        }
        push(opts.a0 - zet - avec.dot(lam));
        push(zet * z - epsi);
        (sq.sqrt(), mx)
    };

    let mut epsi = 1.0f64;
    while epsi > opts.epsimin {
        let (mut resnorm, mut resmax) =
            residual(&x, &y, z, &lam, &xsi, &eta, &mu, zet, &s, epsi);
        let mut inner = 0;
        while resmax > 0.9 * epsi && inner < 200 {
            inner += 1;
            // Newton system assembly in the reduced (dlam, dz) or (dx, dz) form
            let mut delx = DVector::zeros(n);
            let mut diagx = DVector::zeros(n);
            let mut gvec: DVector<f64> = DVector::zeros(m);
            let mut gg: DMatrix<f64> = DMatrix::zeros(m, n);
            for j in 0..n {
                let ux = upp[j] - x[j];
                let xl = x[j] - low[j];
                let (ux2, xl2) = (ux * ux, xl * xl);
                let mut plam = p0[j];
                let mut qlam = q0[j];
                for i in 0..m {
                    plam += pmat[(i, j)] * lam[i];
                    qlam += qmat[(i, j)] * lam[i];
                    gvec[i] += pmat[(i, j)] / ux + qmat[(i, j)] / xl;
                    gg[(i, j)] = pmat[(i, j)] / ux2 - qmat[(i, j)] / xl2;
                }
                delx[j] = plam / ux2 - qlam / xl2 - epsi / (x[j] - alfa[j])
                    + epsi / (beta[j] - x[j]);
                diagx[j] = 2.0 * (plam / (ux2 * ux) + qlam / (xl2 * xl))
                    + xsi[j] / (x[j] - alfa[j])
                    + eta[j] / (beta[j] - x[j]);
            }
            let dely = DVector::from_fn(m, |i, _| {
                cvec[i] + dvec[i] * y[i] - lam[i] - epsi / y[i]
            });
            let delz = opts.a0 - avec.dot(&lam) - epsi / z;
            let dellam = DVector::from_fn(m, |i, _| {
                gvec[i] - avec[i] * z - y[i] - b[i] + epsi / lam[i]
            });
            let diagy = DVector::from_fn(m, |i, _| dvec[i] + mu[i] / y[i]);
            let diaglamyi = DVector::from_fn(m, |i, _| s[i] / lam[i] + 1.0 / diagy[i]);

            let (dx, dlam, dz);
            if m < n {
                let mut blam = dellam.clone();
                for i in 0..m {
                    blam[i] += dely[i] / diagy[i];
                    for j in 0..n {
                        blam[i] -= gg[(i, j)] * delx[j] / diagx[j];
                    }
                }
                let mut aa = DMatrix::zeros(m + 1, m + 1);
                for i in 0..m {
                    for k in 0..m {
                        let mut v = 0.0;
                        for j in 0..n {
                            v += gg[(i, j)] * gg[(k, j)] / diagx[j];
                        }
                        aa[(i, k)] = v;
                    }
                    aa[(i, i)] += diaglamyi[i];
                    aa[(i, m)] = avec[i];
                    aa[(m, i)] = avec[i];
                }
                aa[(m, m)] = -zet / z;
                let mut bb = DVector::zeros(m + 1);
                bb.rows_mut(0, m).copy_from(&blam);
                bb[m] = delz;
                let sol = aa.lu().solve(&bb).expect("reduced Newton system");
                dlam = sol.rows(0, m).clone_owned();
                dz = sol[m];
                dx = DVector::from_fn(n, |j, _| {
                    let mut v = -delx[j];
                    for i in 0..m {
                        v -= gg[(i, j)] * dlam[i];
                    }
                    v / diagx[j]
                });
            } else {
                let dellamyi = DVector::from_fn(m, |i, _| dellam[i] + dely[i] / diagy[i]);
                let mut aa = DMatrix::zeros(n + 1, n + 1);
                for j in 0..n {
                    for k in 0..n {
                        let mut v = 0.0;
                        for i in 0..m {
                            v += gg[(i, j)] * gg[(i, k)] / diaglamyi[i];
                        }
                        aa[(j, k)] = v;
                    }
                    aa[(j, j)] += diagx[j];
                    let mut axz = 0.0;
                    for i in 0..m {
                        axz -= gg[(i, j)] * avec[i] / diaglamyi[i];
                    }
                    aa[(j, n)] = axz;
                    aa[(n, j)] = axz;
                }
                let mut azz = zet / z;
                for i in 0..m {
                    azz += avec[i] * avec[i] / diaglamyi[i];
                }
                aa[(n, n)] = azz;
                let mut bb = DVector::zeros(n + 1);
                for j in 0..n {
                    let mut v = delx[j];
                    for i in 0..m {
                        v += gg[(i, j)] * dellamyi[i] / diaglamyi[i];
                    }
                    bb[j] = -v;
                }
                let mut bz = delz;
                for i in 0..m {
                    bz -= avec[i] * dellamyi[i] / diaglamyi[i];
                }
                bb[n] = -bz;
                let sol = aa.lu().solve(&bb).expect("reduced Newton system");
                dx = sol.rows(0, n).clone_owned();
                dz = sol[n];
                dlam = DVector::from_fn(m, |i, _| {
                    let mut v = dellamyi[i] - dz * avec[i];
                    for j in 0..n {
                        v += gg[(i, j)] * dx[j];
                    }
                    v / diaglamyi[i]
                });
            }
            let dy = DVector::from_fn(m, |i, _| (dlam[i] - dely[i]) / diagy[i]);
            let dxsi = DVector::from_fn(n, |j, _| {
                -xsi[j] + epsi / (x[j] - alfa[j]) - xsi[j] * dx[j] / (x[j] - alfa[j])
            });
            let deta = DVector::from_fn(n, |j, _| {
                -eta[j] + epsi / (beta[j] - x[j]) + eta[j] * dx[j] / (beta[j] - x[j])
            });
            let dmu = DVector::from_fn(m, |i, _| -mu[i] + epsi / y[i] - mu[i] * dy[i] / y[i]);
            let dzet = -zet + epsi / z - zet * dz / z;
            let ds = DVector::from_fn(m, |i, _| -s[i] + epsi / lam[i] - s[i] * dlam[i] / lam[i]);

            // largest step keeping all strictly positive quantities at ≥ 1/1.01
            // of the boundary distance
            let mut stminv = 1.0f64;
            let mut track = |dv: f64, v: f64| {
                stminv = stminv.max(-1.01 * dv / v);
            };
            for i in 0..m {
                track(dy[i], y[i]);
                track(dlam[i], lam[i]);
                track(dmu[i], mu[i]);
                track(ds[i], s[i]);
            }
            track(dz, z);
            track(dzet, zet);
            for j in 0..n {
                track(dxsi[j], xsi[j]);
                track(deta[j], eta[j]);
                track(dx[j], x[j] - alfa[j]);
                track(-dx[j], beta[j] - x[j]);
            }
            let mut steg = 1.0 / stminv;

            let (xo, yo, zo) = (x.clone(), y.clone(), z);
            let (lamo, xsio, etao) = (lam.clone(), xsi.clone(), eta.clone());
            let (muo, zeto, so) = (mu.clone(), zet, s.clone());
            let mut resnew = 2.0 * resnorm;
            let mut backtrack = 0;
            while resnew > resnorm && backtrack < 50 {
                backtrack += 1;
                x = &xo + steg * &dx;
                y = &yo + steg * &dy;
                z = zo + steg * dz;
                lam = &lamo + steg * &dlam;
                xsi = &xsio + steg * &dxsi;
                eta = &etao + steg * &deta;
                mu = &muo + steg * &dmu;
                zet = zeto + steg * dzet;
                s = &so + steg * &ds;
                let (rn, rm) = residual(&x, &y, z, &lam, &xsi, &eta, &mu, zet, &s, epsi);
                resnew = rn;
                resmax = rm;
                steg *= 0.5;
            }
            resnorm = resnew;
        }
        if inner >= 200 {
            log::warn!("subproblem interior solve hit the inner cap at epsi {epsi:.1e}");
        }
        epsi *= 0.1;
    }
    (x, y, lam)
}
