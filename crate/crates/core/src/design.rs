//! Three-field density regularization: raw design variables are smoothed by
//! a cone-kernel density filter, sharpened by a smoothed Heaviside
//! projection, and finally overridden on prescribed solid/void elements.
//! Gradients travel the same chain in reverse.

use crate::fem::Material;
use crate::grid::Dims;

/// Boundary handling of the density filter. `Renormalize` rescales weights
/// over the in-domain support (mass preserving for uniform fields);
/// `ZeroPad` keeps the full-kernel denominator and treats the outside as
/// void, which pulls boundary densities down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterBoundary {
    Renormalize,
    ZeroPad,
}

/// Linear cone-kernel density filter on the element grid. The radius is in
/// element lengths; weights are w(d) = r - d on centers with d < r.
#[derive(Clone)]
pub struct DensityFilter {
    dims: Dims,
    radius: f64,
    boundary: FilterBoundary,
    offsets: Vec<(i64, i64, f64)>,
    inv_denom: Vec<f64>,
}

impl DensityFilter {
    pub fn new(dims: Dims, radius: f64, boundary: FilterBoundary) -> Self {
        assert!(radius > 0.0, "filter radius must be positive");
        let reach = radius.ceil() as i64;
        let mut offsets = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                let d = ((dx * dx + dy * dy) as f64).sqrt();
                let w = radius - d;
                if w > 0.0 {
                    offsets.push((dx, dy, w));
                }
            }
        }
        let full: f64 = offsets.iter().map(|o| o.2).sum();
        let mut inv_denom = vec![0.0; dims.n_elems()];
        for e in 0..dims.n_elems() {
            let (ex, ey) = dims.elem_coords(e);
            let denom = match boundary {
                FilterBoundary::ZeroPad => full,
                FilterBoundary::Renormalize => {
                    let mut s = 0.0;
                    for &(dx, dy, w) in &offsets {
                        let jx = ex as i64 + dx;
                        let jy = ey as i64 + dy;
                        if jx >= 0
                            && jy >= 0
                            && (jx as usize) < dims.nelx
                            && (jy as usize) < dims.nely
                        {
                            s += w;
                        }
                    }
                    s
                }
            };
            inv_denom[e] = 1.0 / denom;
        }
        Self {
            dims,
            radius,
            boundary,
            offsets,
            inv_denom,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn boundary(&self) -> FilterBoundary {
        self.boundary
    }

    /// Filtered field W x with W = D^-1 C, C the symmetric cone weights.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dims.n_elems());
        let mut out = vec![0.0; x.len()];
        for e in 0..x.len() {
            let (ex, ey) = self.dims.elem_coords(e);
            let mut acc = 0.0;
            for &(dx, dy, w) in &self.offsets {
                let jx = ex as i64 + dx;
                let jy = ey as i64 + dy;
                if jx >= 0
                    && jy >= 0
                    && (jx as usize) < self.dims.nelx
                    && (jy as usize) < self.dims.nely
                {
                    acc += w * x[self.dims.elem(jx as usize, jy as usize)];
                }
            }
            out[e] = acc * self.inv_denom[e];
        }
        out
    }

    /// Adjoint map W' d = C D^-1 d, the filter leg of the gradient chain.
    pub fn apply_transpose(&self, d: &[f64]) -> Vec<f64> {
        assert_eq!(d.len(), self.dims.n_elems());
        let mut out = vec![0.0; d.len()];
        for e in 0..d.len() {
            let (ex, ey) = self.dims.elem_coords(e);
            let scaled = d[e] * self.inv_denom[e];
            for &(dx, dy, w) in &self.offsets {
                let jx = ex as i64 + dx;
                let jy = ey as i64 + dy;
                if jx >= 0
                    && jy >= 0
                    && (jx as usize) < self.dims.nelx
                    && (jy as usize) < self.dims.nely
                {
                    out[self.dims.elem(jx as usize, jy as usize)] += w * scaled;
                }
            }
        }
        out
    }
}

/// Smoothed Heaviside projection with threshold `eta`. `beta = 0` is the
/// identity limit.
pub fn project(x: f64, beta: f64, eta: f64) -> f64 {
    if beta == 0.0 {
        return x;
    }
    let den = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    ((beta * eta).tanh() + (beta * (x - eta)).tanh()) / den
}

pub fn project_deriv(x: f64, beta: f64, eta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    let den = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    let c = (beta * (x - eta)).cosh();
    beta / (c * c * den)
}

/// Element roles: designable, or pinned solid/void outside the
/// optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementClass {
    Design,
    PassiveSolid,
    PassiveVoid,
}

/// The design state: raw variables, their regularized fields, and the
/// element classes. Raw values of passive elements stay pinned at 1/0 and
/// the physical field is overridden there after projection.
#[derive(Clone)]
pub struct DesignField {
    pub dims: Dims,
    pub class: Vec<ElementClass>,
    pub x_hat: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub x_phys: Vec<f64>,
    pub eta: f64,
    pub beta: f64,
    filter: DensityFilter,
}

impl DesignField {
    pub fn new(dims: Dims, class: Vec<ElementClass>, filter: DensityFilter, eta: f64) -> Self {
        assert_eq!(class.len(), dims.n_elems());
        let m = dims.n_elems();
        let mut field = Self {
            dims,
            class,
            x_hat: vec![0.0; m],
            x_tilde: vec![0.0; m],
            x_phys: vec![0.0; m],
            eta,
            beta: 0.0,
            filter,
        };
        field.pin_passive();
        field
    }

    fn pin_passive(&mut self) {
        for e in 0..self.x_hat.len() {
            match self.class[e] {
                ElementClass::PassiveSolid => self.x_hat[e] = 1.0,
                ElementClass::PassiveVoid => self.x_hat[e] = 0.0,
                ElementClass::Design => {}
            }
        }
    }

    /// Sets all designable elements to `v` (clamped to [0, 1]).
    pub fn set_uniform(&mut self, v: f64) {
        let v = v.clamp(0.0, 1.0);
        for e in 0..self.x_hat.len() {
            if self.class[e] == ElementClass::Design {
                self.x_hat[e] = v;
            }
        }
    }

    /// Overwrites designable raw values from a reduced vector ordered like
    /// [`DesignField::free_indices`].
    pub fn set_free(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for e in 0..self.x_hat.len() {
            if self.class[e] == ElementClass::Design {
                self.x_hat[e] = *it.next().expect("free value count");
            }
        }
        assert!(it.next().is_none(), "free value count");
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.class.len())
            .filter(|&e| self.class[e] == ElementClass::Design)
            .collect()
    }

    pub fn n_free(&self) -> usize {
        self.class
            .iter()
            .filter(|c| **c == ElementClass::Design)
            .count()
    }

    /// Runs the filter and projection at sharpness `beta`, then overrides
    /// passive elements exactly.
    pub fn regularize(&mut self, beta: f64) {
        self.beta = beta;
        self.pin_passive();
        self.x_tilde = self.filter.apply(&self.x_hat);
        self.x_phys = self
            .x_tilde
            .iter()
            .map(|&x| project(x, beta, self.eta))
            .collect();
        for e in 0..self.x_phys.len() {
            match self.class[e] {
                ElementClass::PassiveSolid => self.x_phys[e] = 1.0,
                ElementClass::PassiveVoid => self.x_phys[e] = 0.0,
                ElementClass::Design => {}
            }
        }
    }

    /// Pulls a physical-space gradient back to the raw variables. Passive
    /// entries are zeroed; the caller is responsible for having called
    /// [`DesignField::regularize`] first.
    pub fn chain_rule(&self, d_phys: &[f64]) -> Vec<f64> {
        assert_eq!(d_phys.len(), self.x_tilde.len());
        let d_tilde: Vec<f64> = d_phys
            .iter()
            .zip(&self.x_tilde)
            .zip(&self.class)
            .map(|((d, &xt), class)| match class {
                ElementClass::Design => d * project_deriv(xt, self.beta, self.eta),
                _ => 0.0,
            })
            .collect();
        let mut d_hat = self.filter.apply_transpose(&d_tilde);
        for e in 0..d_hat.len() {
            if self.class[e] != ElementClass::Design {
                d_hat[e] = 0.0;
            }
        }
        d_hat
    }

    /// Per-element stiffness and stress moduli at penalization `p`.
    pub fn moduli(&self, mat: &Material, p: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.x_phys.len();
        let mut e_k = vec![0.0; m];
        let mut e_s = vec![0.0; m];
        for e in 0..m {
            match self.class[e] {
                ElementClass::Design => {
                    e_k[e] = mat.stiffness_modulus(self.x_phys[e], p);
                    e_s[e] = mat.stress_modulus(self.x_phys[e], p);
                }
                ElementClass::PassiveSolid => {
                    e_k[e] = mat.e_passive;
                    e_s[e] = mat.e_passive;
                }
                ElementClass::PassiveVoid => {
                    e_k[e] = mat.e_void;
                    e_s[e] = 0.0;
                }
            }
        }
        (e_k, e_s)
    }

    /// Derivatives of the moduli with respect to the physical density;
    /// zero on passive elements.
    pub fn moduli_derivs(&self, mat: &Material, p: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.x_phys.len();
        let mut dk = vec![0.0; m];
        let mut ds = vec![0.0; m];
        for e in 0..m {
            if self.class[e] == ElementClass::Design {
                dk[e] = mat.stiffness_modulus_deriv(self.x_phys[e], p);
                ds[e] = mat.stress_modulus_deriv(self.x_phys[e], p);
            }
        }
        (dk, ds)
    }

    /// Mean physical density over the whole domain.
    pub fn volume_fraction(&self) -> f64 {
        self.x_phys.iter().sum::<f64>() / self.x_phys.len() as f64
    }

    /// Measure of gray content, 4/m sum x(1-x); 0 for crisp designs, 1 for
    /// uniform 0.5.
    pub fn non_discreteness(&self) -> f64 {
        let m = self.x_phys.len() as f64;
        4.0 * self.x_phys.iter().map(|&x| x * (1.0 - x)).sum::<f64>() / m
    }
}

/// Morphological dilation restricted to `mask`: each masked element takes
/// the maximum of `values` over centers within `r_th` element lengths.
/// Unmasked elements pass through.
pub fn dilate_local(dims: Dims, values: &[f64], mask: &[bool], r_th: f64) -> Vec<f64> {
    assert_eq!(values.len(), dims.n_elems());
    assert_eq!(mask.len(), dims.n_elems());
    let reach = r_th.floor() as i64;
    let mut out = values.to_vec();
    for e in 0..values.len() {
        if !mask[e] {
            continue;
        }
        let (ex, ey) = dims.elem_coords(e);
        let mut best = values[e];
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                if ((dx * dx + dy * dy) as f64).sqrt() > r_th {
                    continue;
                }
                let jx = ex as i64 + dx;
                let jy = ey as i64 + dy;
                if jx >= 0 && jy >= 0 && (jx as usize) < dims.nelx && (jy as usize) < dims.nely
                {
                    best = best.max(values[dims.elem(jx as usize, jy as usize)]);
                }
            }
        }
        out[e] = best;
    }
    out
}
