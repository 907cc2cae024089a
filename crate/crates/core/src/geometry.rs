//! Benchmark geometries: domain, supports, loads and passive regions on
//! the structured grid.
//!
//! Physical dimensions are fixed per preset and the element size h scales
//! with the grid, so load factors and compliance are comparable across
//! resolutions of the same problem.

use nalgebra::DVector;
use thiserror::Error;

use crate::design::{DensityFilter, DesignField, ElementClass, FilterBoundary};
use crate::grid::Dims;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("grid {nelx}x{nely} does not match the preset aspect ratio {wx}:{wy}")]
    BadAspect {
        nelx: usize,
        nely: usize,
        wx: usize,
        wy: usize,
    },
    #[error("grid {nelx}x{nely} too small for the preset features")]
    TooSmall { nelx: usize, nely: usize },
}

/// A fully specified analysis problem on the structured grid.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub dims: Dims,
    /// Physical element edge length.
    pub h: f64,
    /// Constrained-dof mask, length 2 x nodes.
    pub fixed: Vec<bool>,
    pub force: DVector<f64>,
    pub class: Vec<ElementClass>,
}

impl Model {
    /// Frame domain of 840 x 360 physical units (7:3). The two bottom
    /// corners are pinned, a downward load of total magnitude 2e-2 is
    /// spread over a length Lx/10 at the top centre, and squares of side
    /// Lx/10 at the two supports and under the load are kept solid.
    pub fn two_bar_frame(nelx: usize, nely: usize) -> Result<Model, GeometryError> {
        if nelx * 3 != nely * 7 {
            return Err(GeometryError::BadAspect {
                nelx,
                nely,
                wx: 7,
                wy: 3,
            });
        }
        let band = 2 * ((nelx as f64 / 20.0).round() as usize).max(1);
        if nelx < 4 * band || nely < 2 * band {
            return Err(GeometryError::TooSmall { nelx, nely });
        }
        let dims = Dims::new(nelx, nely);
        let h = 840.0 / nelx as f64;

        let mut fixed = vec![false; dims.n_dofs()];
        for node in [dims.node(0, 0), dims.node(nelx, 0)] {
            fixed[2 * node] = true;
            fixed[2 * node + 1] = true;
        }

        let mut force = DVector::zeros(dims.n_dofs());
        let total = -2e-2;
        let ix0 = (nelx - band) / 2;
        for i in 0..=band {
            let w = if i == 0 || i == band { 0.5 } else { 1.0 };
            let node = dims.node(ix0 + i, nely);
            force[2 * node + 1] = total * w / band as f64;
        }

        let mut class = vec![ElementClass::Design; dims.n_elems()];
        let mut solid = |ex0: usize, ex1: usize, ey0: usize, ey1: usize| {
            for ex in ex0..ex1 {
                for ey in ey0..ey1 {
                    class[dims.elem(ex, ey)] = ElementClass::PassiveSolid;
                }
            }
        };
        solid(0, band, 0, band);
        solid(nelx - band, nelx, 0, band);
        solid((nelx - band) / 2, (nelx + band) / 2, nely - band, nely);

        Ok(Model {
            name: format!("two_bar_frame_{nelx}x{nely}"),
            dims,
            h,
            fixed,
            force,
            class,
        })
    }

    /// Slender column of 30 x 300 physical units (1:10), clamped at the
    /// bottom, compressed by a distributed axial load of total magnitude
    /// `load` across the full top edge. No passive regions.
    pub fn clamped_column(nelx: usize, nely: usize, load: f64) -> Result<Model, GeometryError> {
        if nelx * 10 != nely {
            return Err(GeometryError::BadAspect {
                nelx,
                nely,
                wx: 1,
                wy: 10,
            });
        }
        if nelx < 2 {
            return Err(GeometryError::TooSmall { nelx, nely });
        }
        let dims = Dims::new(nelx, nely);
        let h = 30.0 / nelx as f64;

        let mut fixed = vec![false; dims.n_dofs()];
        for ix in 0..=nelx {
            let n = dims.node(ix, 0);
            fixed[2 * n] = true;
            fixed[2 * n + 1] = true;
        }
        let mut force = DVector::zeros(dims.n_dofs());
        for ix in 0..=nelx {
            let w = if ix == 0 || ix == nelx { 0.5 } else { 1.0 };
            let n = dims.node(ix, nely);
            force[2 * n + 1] = -load * w / nelx as f64;
        }
        Ok(Model {
            name: format!("clamped_column_{nelx}x{nely}"),
            dims,
            h,
            fixed,
            force,
            class: vec![ElementClass::Design; dims.n_elems()],
        })
    }

    /// Axially compressed cantilever on a 2:1 grid with unit element
    /// edge: the left edge is clamped and a compressive load of total
    /// magnitude `load` is spread over the right edge. No passive
    /// elements, so the stiffness contrast stays moderate — the fixture of
    /// choice for tight-tolerance derivative checks.
    pub fn compressed_cantilever(
        nelx: usize,
        nely: usize,
        load: f64,
    ) -> Result<Model, GeometryError> {
        if nelx != 2 * nely {
            return Err(GeometryError::BadAspect {
                nelx,
                nely,
                wx: 2,
                wy: 1,
            });
        }
        if nely < 2 {
            return Err(GeometryError::TooSmall { nelx, nely });
        }
        let dims = Dims::new(nelx, nely);
        let mut fixed = vec![false; dims.n_dofs()];
        for iy in 0..=nely {
            let n = dims.node(0, iy);
            fixed[2 * n] = true;
            fixed[2 * n + 1] = true;
        }
        let mut force = DVector::zeros(dims.n_dofs());
        for iy in 0..=nely {
            let w = if iy == 0 || iy == nely { 0.5 } else { 1.0 };
            let n = dims.node(nelx, iy);
            force[2 * n] = -load * w / nely as f64;
        }
        Ok(Model {
            name: format!("compressed_cantilever_{nelx}x{nely}"),
            dims,
            h: 1.0,
            fixed,
            force,
            class: vec![ElementClass::Design; dims.n_elems()],
        })
    }

    /// Design field with the preset's passive classes, a cone filter of
    /// `radius_h` element lengths and projection threshold 0.5.
    pub fn design_field(&self, radius_h: f64, boundary: FilterBoundary) -> DesignField {
        let filter = DensityFilter::new(self.dims, radius_h, boundary);
        DesignField::new(self.dims, self.class.clone(), filter, 0.5)
    }

    pub fn n_dofs(&self) -> usize {
        self.dims.n_dofs()
    }
}

/// Paint a solid bar of the given width (in element lengths) along the
/// segment between two element-coordinate points into a density vector.
/// Coordinates are in element units; the centre of element (ex, ey) is at
/// (ex + 0.5, ey + 0.5).
pub fn paint_bar(dims: Dims, x: &mut [f64], from: (f64, f64), to: (f64, f64), width: f64) {
    assert_eq!(x.len(), dims.n_elems());
    let (ax, ay) = from;
    let (bx, by) = to;
    let dx = bx - ax;
    let dy = by - ay;
    let len2 = (dx * dx + dy * dy).max(f64::MIN_POSITIVE);
    let half = width / 2.0;
    for ex in 0..dims.nelx {
        for ey in 0..dims.nely {
            let cx = ex as f64 + 0.5;
            let cy = ey as f64 + 0.5;
            let t = ((cx - ax) * dx + (cy - ay) * dy) / len2;
            let t = t.clamp(0.0, 1.0);
            let px = ax + t * dx;
            let py = ay + t * dy;
            let d = ((cx - px).powi(2) + (cy - py).powi(2)).sqrt();
            if d <= half {
                x[dims.elem(ex, ey)] = 1.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_load_sums_to_total_and_is_centred() {
        let m = Model::two_bar_frame(168, 72).unwrap();
        let total: f64 = m.force.iter().sum();
        approx::assert_relative_eq!(total, -2e-2, max_relative = 1e-12);
        // symmetric about the vertical midline
        for ix in 0..=168 {
            let n = m.dims.node(ix, 72);
            let mirror = m.dims.node(168 - ix, 72);
            assert_eq!(m.force[2 * n + 1], m.force[2 * mirror + 1]);
        }
        assert_eq!(m.h, 5.0);
    }

    #[test]
    fn frame_supports_and_passive_patches() {
        let m = Model::two_bar_frame(84, 36).unwrap();
        let nfixed = m.fixed.iter().filter(|&&b| b).count();
        assert_eq!(nfixed, 4, "two pinned corner nodes");
        assert!(m.fixed[2 * m.dims.node(0, 0)]);
        assert!(m.fixed[2 * m.dims.node(84, 0) + 1]);

        let band = 2 * ((84.0_f64 / 20.0).round() as usize); // 8
        let solid = m
            .class
            .iter()
            .filter(|c| matches!(c, ElementClass::PassiveSolid))
            .count();
        assert_eq!(solid, 3 * band * band);
        assert!(matches!(
            m.class[m.dims.elem(0, 0)],
            ElementClass::PassiveSolid
        ));
        assert!(matches!(
            m.class[m.dims.elem(42, 35)],
            ElementClass::PassiveSolid
        ));
        assert!(matches!(m.class[m.dims.elem(42, 10)], ElementClass::Design));
    }

    #[test]
    fn frame_rejects_wrong_aspect() {
        assert!(matches!(
            Model::two_bar_frame(100, 50),
            Err(GeometryError::BadAspect { .. })
        ));
    }

    #[test]
    fn column_load_and_clamp() {
        let m = Model::clamped_column(4, 40, 0.06).unwrap();
        let total: f64 = m.force.iter().sum();
        approx::assert_relative_eq!(total, -0.06, max_relative = 1e-12);
        let nfixed = m.fixed.iter().filter(|&&b| b).count();
        assert_eq!(nfixed, 2 * 5);
        approx::assert_relative_eq!(m.h, 7.5);
    }

    #[test]
    fn cantilever_loads_and_clamps_the_short_edges() {
        let m = Model::compressed_cantilever(12, 6, 0.1).unwrap();
        let fx: f64 = (0..m.dims.n_dofs()).step_by(2).map(|d| m.force[d]).sum();
        approx::assert_relative_eq!(fx, -0.1, max_relative = 1e-12);
        let fy: f64 = (1..m.dims.n_dofs()).step_by(2).map(|d| m.force[d]).sum();
        assert_eq!(fy, 0.0);
        let nfixed = m.fixed.iter().filter(|&&b| b).count();
        assert_eq!(nfixed, 2 * 7);
        assert!(m.class.iter().all(|c| *c == ElementClass::Design));
        assert!(Model::compressed_cantilever(12, 5, 0.1).is_err());
    }

    #[test]
    fn painted_bar_covers_the_segment() {
        let dims = Dims::new(20, 10);
        let mut x = vec![0.0; dims.n_elems()];
        paint_bar(dims, &mut x, (0.0, 0.0), (20.0, 10.0), 2.0);
        // the diagonal elements are solid
        assert_eq!(x[dims.elem(0, 0)], 1.0);
        assert_eq!(x[dims.elem(10, 5)], 1.0);
        assert_eq!(x[dims.elem(19, 9)], 1.0);
        // far off-diagonal stays empty
        assert_eq!(x[dims.elem(0, 9)], 0.0);
        assert_eq!(x[dims.elem(19, 0)], 0.0);
        let solid = x.iter().filter(|&&v| v == 1.0).count();
        assert!(solid > 20 && solid < 100, "bar covers {solid} elements");
    }
}
