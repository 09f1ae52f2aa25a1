//! Left/right split augmentation around the template centre column, and the
//! inverse merge used to assemble half-plan predictions.

use ndarray::{s, Array2, Array3, ArrayView3, Axis};

use crate::encode::InputTensor;
use crate::error::{validation, Error, Result};

/// One augmented sample: a half-width input and the matching half plan.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSample {
    pub input: InputTensor,
    pub plan: Array3<f64>,
}

/// Split an input tensor and plan tensor into left and right samples.
///
/// The right half is mirrored so both samples share the left orientation.
/// The centre plan column is dropped from both halves.
pub fn augment_split(tensor: &InputTensor, plan: ArrayView3<f64>) -> Result<[HalfSample; 2]> {
    let (_, width, _, _) = tensor.dim();
    let (_, cols, _) = plan.dim();
    if cols % 2 == 0 {
        return Err(Error::UnsupportedGeometry(format!(
            "plan needs an odd column count to split around a centre column, got {cols}"
        )));
    }
    if width % 2 != 0 {
        return Err(Error::UnsupportedGeometry(format!("input width {width} is odd")));
    }
    let tw = width / 2;
    let pw = cols / 2;

    let t = tensor.values();
    let left_input = t.slice(s![.., 0..tw, .., ..]).to_owned();
    let mut right_input = t.slice(s![.., tw..width, .., ..]).to_owned();
    right_input.invert_axis(Axis(1));

    let left_plan = plan.slice(s![.., 0..pw, ..]).to_owned();
    let mut right_plan = plan.slice(s![.., pw + 1..cols, ..]).to_owned();
    right_plan.invert_axis(Axis(1));

    Ok([
        HalfSample {
            input: InputTensor::new(left_input)?,
            plan: left_plan,
        },
        HalfSample {
            input: InputTensor::new(right_input.as_standard_layout().to_owned())?,
            plan: right_plan.as_standard_layout().to_owned(),
        },
    ])
}

/// What to place in the centre column when merging halves.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CenterPolicy {
    #[default]
    Empty,
    /// Explicit `(rows, planes)` centre column.
    Explicit(Array2<f64>),
}

/// Reassemble a full plan tensor from a left half and a mirrored right half.
pub fn merge_halves(left: ArrayView3<f64>, right: ArrayView3<f64>, center: &CenterPolicy) -> Result<Array3<f64>> {
    if left.dim() != right.dim() {
        return validation(format!("half shapes differ: {:?} vs {:?}", left.dim(), right.dim()));
    }
    let (rows, half, planes) = left.dim();
    let cols = 2 * half + 1;
    let mut out = Array3::zeros((rows, cols, planes));
    out.slice_mut(s![.., 0..half, ..]).assign(&left);
    let mut mirrored = right.to_owned();
    mirrored.invert_axis(Axis(1));
    out.slice_mut(s![.., half + 1..cols, ..]).assign(&mirrored);
    if let CenterPolicy::Explicit(col) = center {
        if col.dim() != (rows, planes) {
            return validation(format!(
                "centre column shape {:?} does not match ({rows}, {planes})",
                col.dim()
            ));
        }
        out.slice_mut(s![.., half, ..]).assign(col);
    }
    Ok(out)
}

/// The centre column of a plan tensor, for [`CenterPolicy::Explicit`].
pub fn center_column(plan: ArrayView3<f64>) -> Array2<f64> {
    let (_, cols, _) = plan.dim();
    plan.index_axis(Axis(1), cols / 2).to_owned()
}
