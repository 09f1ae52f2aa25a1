//! Network input encoding: distance-transformed PTV, CTV and needle maps
//! resampled onto the template footprint and stacked as channels.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3, Array4, ArrayView2};

use crate::anatomy::AnatomyCase;
use crate::distance::distance_transform;
use crate::error::{validation, Error, Result};
use crate::plan::NeedlePlan;

/// In-plane sample count of the encoded input along each axis.
pub const ENCODED_SIZE: usize = 64;

/// Channel order of [`InputTensor`].
pub const CHANNEL_PTV: usize = 0;
pub const CHANNEL_CTV: usize = 1;
pub const CHANNEL_NEEDLES: usize = 2;

/// Encoded input of shape `(64 rows, width, planes, 3)`; width is 64, or 32
/// for an augmented half.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    values: Array4<f64>,
}

impl InputTensor {
    pub fn new(values: Array4<f64>) -> Result<Self> {
        if values.dim().3 != 3 {
            return validation(format!("input tensor needs 3 channels, got {}", values.dim().3));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return validation("input tensor contains non-finite values");
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.values.dim()
    }
}

/// Planes whose sampled axial slice contains PTV, after checking that the
/// PTV fits inside the template's plane range.
pub fn occupied_planes(case: &AnatomyCase, needles: &NeedlePlan) -> Result<BTreeSet<usize>> {
    let grid = needles.grid();
    let ptv = case.ptv();
    let (nz, _, _) = case.dims();
    let mut outside = BTreeSet::new();
    for z in 0..nz {
        if !ptv.index_axis(ndarray::Axis(0), z).iter().any(|&v| v == 1) {
            continue;
        }
        let rel = (z as f64 * case.spacing[0] - case.template_origin.z) / grid.plane_spacing;
        let p = rel.round();
        if p < 0.0 || p >= grid.num_planes as f64 {
            outside.insert(p as i64);
        }
    }
    if !outside.is_empty() {
        return Err(Error::Capacity(format!(
            "anatomy extends to planes {:?} beyond the {} available",
            outside, grid.num_planes
        )));
    }
    Ok((0..grid.num_planes)
        .filter(|&p| {
            case.plane_slice(grid, p).is_some_and(|z| {
                ptv.index_axis(ndarray::Axis(0), z).iter().any(|&v| v == 1)
            })
        })
        .collect())
}

/// Encode a case and needle plan as the 64×64×planes×3 network input.
pub fn encode_input(case: &AnatomyCase, needles: &NeedlePlan, inside_weight: f64) -> Result<InputTensor> {
    let grid = needles.grid();
    let planes = occupied_planes(case, needles)?;
    let ptv_dt = distance_transform(case.ptv(), case.spacing, inside_weight)?;
    let ctv_dt = distance_transform(case.ctv(), case.spacing, inside_weight)?;

    let needle_mask = needles.occupancy().mapv(u8::from).insert_axis(ndarray::Axis(0));
    let spacing = [1.0, grid.in_plane_spacing, grid.in_plane_spacing];
    let needle_dt = distance_transform(needle_mask.view(), spacing, inside_weight)?;
    let needle_map = resample_grid_map(needle_dt.index_axis(ndarray::Axis(0), 0), grid.rows, grid.cols);

    let n = ENCODED_SIZE;
    let mut out = Array4::<f64>::zeros((n, n, grid.num_planes, 3));
    let step_row = (grid.rows - 1) as f64 / (n - 1) as f64;
    let step_col = (grid.cols - 1) as f64 / (n - 1) as f64;
    for &p in &planes {
        let z = case.plane_slice(grid, p).expect("occupied planes map to slices");
        for i in 0..n {
            let y_mm = case.template_origin.y + i as f64 * step_row * grid.in_plane_spacing;
            for j in 0..n {
                let x_mm = case.template_origin.x + j as f64 * step_col * grid.in_plane_spacing;
                let fy = y_mm / case.spacing[1];
                let fx = x_mm / case.spacing[2];
                out[[i, j, p, CHANNEL_PTV]] = bilinear(&ptv_dt, z, fy, fx);
                out[[i, j, p, CHANNEL_CTV]] = bilinear(&ctv_dt, z, fy, fx);
                out[[i, j, p, CHANNEL_NEEDLES]] = needle_map[[i, j]];
            }
        }
    }
    InputTensor::new(out)
}

/// Bilinear resize of a `rows × cols` template map onto 64×64, corners aligned.
fn resample_grid_map(map: ArrayView2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let n = ENCODED_SIZE;
    Array2::from_shape_fn((n, n), |(i, j)| {
        let fr = i as f64 * (rows - 1) as f64 / (n - 1) as f64;
        let fc = j as f64 * (cols - 1) as f64 / (n - 1) as f64;
        let (r0, c0) = (fr.floor() as usize, fc.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
        let (tr, tc) = (fr - r0 as f64, fc - c0 as f64);
        let top = map[[r0, c0]] * (1.0 - tc) + map[[r0, c1]] * tc;
        let bottom = map[[r1, c0]] * (1.0 - tc) + map[[r1, c1]] * tc;
        top * (1.0 - tr) + bottom * tr
    })
}

/// Bilinear sample of slice `z` at fractional voxel coordinates; zero outside.
fn bilinear(vol: &Array3<f64>, z: usize, fy: f64, fx: f64) -> f64 {
    let (_, ny, nx) = vol.dim();
    if fy < 0.0 || fx < 0.0 || fy > (ny - 1) as f64 || fx > (nx - 1) as f64 {
        return 0.0;
    }
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(ny - 1), (x0 + 1).min(nx - 1));
    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
    let top = vol[[z, y0, x0]] * (1.0 - tx) + vol[[z, y0, x1]] * tx;
    let bottom = vol[[z, y1, x0]] * (1.0 - tx) + vol[[z, y1, x1]] * tx;
    top * (1.0 - ty) + bottom * ty
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::MmPoint;
    use crate::grid::TemplateGrid;

    fn blob_case(z_range: std::ops::Range<usize>) -> AnatomyCase {
        let dims = (80, 70, 80);
        let mut ptv = Array3::<u8>::zeros(dims);
        let mut ctv = Array3::<u8>::zeros(dims);
        for z in z_range {
            for y in 15..45 {
                for x in 15..55 {
                    ptv[[z, y, x]] = 1;
                    if (18..42).contains(&y) && (18..52).contains(&x) {
                        ctv[[z, y, x]] = 1;
                    }
                }
            }
        }
        AnatomyCase::new(
            "blob",
            [1.0; 3],
            MmPoint::new(5.0, 5.0, 5.0),
            ptv,
            ctv,
            Array3::zeros(dims),
            Array3::zeros(dims),
        )
        .unwrap()
    }

    #[test]
    fn empty_case_encodes_to_zeros() {
        let dims = (20, 20, 20);
        let case = AnatomyCase::new(
            "empty",
            [1.0; 3],
            MmPoint::default(),
            Array3::zeros(dims),
            Array3::zeros(dims),
            Array3::zeros(dims),
            Array3::zeros(dims),
        )
        .unwrap();
        let t = encode_input(&case, &NeedlePlan::new(TemplateGrid::default()), 1.0).unwrap();
        assert_eq!(t.dim(), (64, 64, 14, 3));
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_anatomy_is_zero_padded() {
        // plane p sits at z = 5 + 5p; slices 3..53 cover planes 0..=9
        let case = blob_case(3..53);
        let needles = NeedlePlan::from_positions(TemplateGrid::default(), [(3, 3), (5, 6)]).unwrap();
        let planes = occupied_planes(&case, &needles).unwrap();
        assert_eq!(planes, (0..10).collect());
        let t = encode_input(&case, &needles, 1.0).unwrap();
        assert_eq!(t.dim(), (64, 64, 14, 3));
        for p in 10..14 {
            for c in 0..3 {
                assert!(t.values().slice(ndarray::s![.., .., p, c]).iter().all(|&v| v == 0.0));
            }
        }
        for c in 0..3 {
            assert!(t.values().slice(ndarray::s![.., .., 5, c]).iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn long_anatomy_exceeds_capacity() {
        let case = blob_case(0..78);
        let needles = NeedlePlan::new(TemplateGrid::default());
        assert!(matches!(encode_input(&case, &needles, 1.0), Err(Error::Capacity(_))));
    }

    #[test]
    fn encoding_is_deterministic() {
        let case = blob_case(10..40);
        let needles = NeedlePlan::from_positions(TemplateGrid::default(), [(2, 2), (4, 8)]).unwrap();
        let a = encode_input(&case, &needles, 1.0).unwrap();
        let b = encode_input(&case, &needles, 1.0).unwrap();
        assert!(a.values().iter().zip(b.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn needle_channel_corners_match_grid() {
        let case = blob_case(10..40);
        let g = TemplateGrid::default();
        let needles = NeedlePlan::from_positions(g.clone(), [(10, 12)]).unwrap();
        let t = encode_input(&case, &needles, 1.0).unwrap();
        let p = *occupied_planes(&case, &needles).unwrap().iter().next().unwrap();
        assert_eq!(t.values()[[63, 63, p, CHANNEL_NEEDLES]], 1.0);
        assert_eq!(t.values()[[0, 0, p, CHANNEL_NEEDLES]], 0.0);
    }
}
