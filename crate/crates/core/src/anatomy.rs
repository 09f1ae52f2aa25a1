//! Co-registered anatomy masks on a voxel grid.
//!
//! Volumes are indexed `(z, y, x)`. Voxel `(z, y, x)` has its centre at
//! `(x·dx, y·dy, z·dz)` mm. The template origin is the mm position of grid
//! point `(row 0, col 0, plane 0)`; columns run along +x, rows along +y
//! (anterior to posterior) and planes along +z.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::grid::{GridPoint, TemplateGrid};

/// A point in voxel space, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MmPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MmPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &MmPoint) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Which structure a mask belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    Ptv,
    Ctv,
    Urethra,
    Rectum,
}

impl Structure {
    pub const ALL: [Structure; 4] = [Structure::Ptv, Structure::Ctv, Structure::Urethra, Structure::Rectum];

    pub fn name(self) -> &'static str {
        match self {
            Structure::Ptv => "ptv",
            Structure::Ctv => "ctv",
            Structure::Urethra => "urethra",
            Structure::Rectum => "rectum",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnatomyCase {
    pub case_id: String,
    /// `[dz, dy, dx]` in mm.
    pub spacing: [f64; 3],
    pub template_origin: MmPoint,
    ptv: Array3<u8>,
    ctv: Array3<u8>,
    urethra: Array3<u8>,
    rectum: Array3<u8>,
}

impl AnatomyCase {
    /// Assemble a case, checking every mask and containment invariant.
    pub fn new(
        case_id: impl Into<String>,
        spacing: [f64; 3],
        template_origin: MmPoint,
        ptv: Array3<u8>,
        ctv: Array3<u8>,
        urethra: Array3<u8>,
        rectum: Array3<u8>,
    ) -> Result<Self> {
        let case = Self {
            case_id: case_id.into(),
            spacing,
            template_origin,
            ptv,
            ctv,
            urethra,
            rectum,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return validation("voxel spacing must be positive");
        }
        let dims = self.ptv.dim();
        for s in Structure::ALL {
            let m = self.mask(s);
            if m.dim() != dims {
                return validation(format!("{} mask dims {:?} differ from {:?}", s.name(), m.dim(), dims));
            }
            if m.iter().any(|&v| v > 1) {
                return validation(format!("{} mask is not binary", s.name()));
            }
        }
        let pairs = ndarray::Zip::from(&self.ptv)
            .and(&self.ctv)
            .and(&self.urethra)
            .and(&self.rectum);
        let mut bad = None;
        pairs.for_each(|&p, &c, &u, &r| {
            if bad.is_some() {
                return;
            }
            if c == 1 && p == 0 {
                bad = Some("ctv is not contained in ptv");
            } else if u == 1 && c == 0 {
                bad = Some("urethra is not contained in ctv");
            } else if r == 1 && p == 1 {
                bad = Some("rectum overlaps ptv");
            }
        });
        match bad {
            Some(msg) => validation(msg),
            None => Ok(()),
        }
    }

    /// `(nz, ny, nx)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.ptv.dim()
    }

    pub fn mask(&self, s: Structure) -> &Array3<u8> {
        match s {
            Structure::Ptv => &self.ptv,
            Structure::Ctv => &self.ctv,
            Structure::Urethra => &self.urethra,
            Structure::Rectum => &self.rectum,
        }
    }

    pub fn ptv(&self) -> ArrayView3<'_, u8> {
        self.ptv.view()
    }

    pub fn ctv(&self) -> ArrayView3<'_, u8> {
        self.ctv.view()
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn volume_cc(&self, s: Structure) -> f64 {
        let n = self.mask(s).iter().filter(|&&v| v == 1).count();
        n as f64 * self.voxel_volume_mm3() / 1000.0
    }

    /// Centre of voxel `(z, y, x)` in mm.
    pub fn voxel_center(&self, z: usize, y: usize, x: usize) -> MmPoint {
        MmPoint::new(
            x as f64 * self.spacing[2],
            y as f64 * self.spacing[1],
            z as f64 * self.spacing[0],
        )
    }

    /// mm position of a template grid point.
    pub fn grid_point_mm(&self, grid: &TemplateGrid, p: GridPoint) -> MmPoint {
        let [ox, oy, oz] = grid.offset_mm(p);
        MmPoint::new(
            self.template_origin.x + ox,
            self.template_origin.y + oy,
            self.template_origin.z + oz,
        )
    }

    /// Index of the voxel whose centre is nearest to `pt`, if inside the volume.
    pub fn nearest_voxel(&self, pt: MmPoint) -> Option<(usize, usize, usize)> {
        let (nz, ny, nx) = self.dims();
        let idx = |v: f64, s: f64, n: usize| {
            let i = (v / s).round();
            (i >= 0.0 && i < n as f64).then_some(i as usize)
        };
        Some((
            idx(pt.z, self.spacing[0], nz)?,
            idx(pt.y, self.spacing[1], ny)?,
            idx(pt.x, self.spacing[2], nx)?,
        ))
    }

    /// Whether the voxel nearest to grid point `p` belongs to structure `s`.
    pub fn grid_point_in(&self, grid: &TemplateGrid, p: GridPoint, s: Structure) -> bool {
        self.nearest_voxel(self.grid_point_mm(grid, p))
            .is_some_and(|(z, y, x)| self.mask(s)[[z, y, x]] == 1)
    }

    /// Axial slice index nearest to template plane `plane`.
    pub fn plane_slice(&self, grid: &TemplateGrid, plane: usize) -> Option<usize> {
        let z = self.template_origin.z + plane as f64 * grid.plane_spacing;
        let i = (z / self.spacing[0]).round();
        let (nz, _, _) = self.dims();
        (i >= 0.0 && i < nz as f64).then_some(i as usize)
    }
}
