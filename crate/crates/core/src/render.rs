//! SVG renders of one axial plane: template, seeds, contours and isodoses.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};

use crate::anatomy::{AnatomyCase, Structure};
use crate::dose::{dose_at_voxels, SourceModel};
use crate::error::{validation, Result};
use crate::grid::GridPoint;
use crate::plan::SeedPlan;

/// Isodose levels drawn, in percent of the prescription.
pub const ISODOSE_LEVELS: [(f64, &str); 3] = [(100.0, "#00c000"), (150.0, "#ffffff"), (200.0, "#ff2020")];

const SCALE: f64 = 4.0;
const TEMPLATE_COLOR: &str = "#ff8c00";
const SEED_COLOR: &str = "#ff69b4";

fn structure_color(s: Structure) -> &'static str {
    match s {
        Structure::Ptv => "#00e5ff",
        Structure::Ctv => "#a040ff",
        Structure::Urethra => "#ffe000",
        Structure::Rectum => "#3070ff",
    }
}

/// Voxel-boundary outline of a 2-D mask as an SVG path.
fn outline(mask: ArrayView2<bool>, dx: f64, dy: f64) -> String {
    let (ny, nx) = mask.dim();
    let at = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < ny && (x as usize) < nx && mask[[y as usize, x as usize]];
    let px = |v: f64| v * SCALE;
    let mut d = String::new();
    for y in 0..ny as isize {
        for x in 0..nx as isize {
            if !at(y, x) {
                continue;
            }
            let (x0, x1) = ((x as f64 - 0.5) * dx, (x as f64 + 0.5) * dx);
            let (y0, y1) = ((y as f64 - 0.5) * dy, (y as f64 + 0.5) * dy);
            let edges = [
                (!at(y - 1, x), (x0, y0, x1, y0)),
                (!at(y + 1, x), (x0, y1, x1, y1)),
                (!at(y, x - 1), (x0, y0, x0, y1)),
                (!at(y, x + 1), (x1, y0, x1, y1)),
            ];
            for (open, (a, b, c, e)) in edges {
                if open {
                    write!(d, "M{:.2} {:.2}L{:.2} {:.2}", px(a), px(b), px(c), px(e)).unwrap();
                }
            }
        }
    }
    d
}

/// Render template plane `plane` of `plan` on `case` as an SVG document.
pub fn render_plane_svg(plan: &SeedPlan, case: &AnatomyCase, model: &SourceModel, plane: usize, prescribed: f64) -> Result<String> {
    let grid = plan.grid();
    if plane >= grid.num_planes {
        return validation(format!("plane {plane} outside 0..{}", grid.num_planes));
    }
    let (_, ny, nx) = case.dims();
    let [_, dy, dx] = case.spacing;
    let (w, h) = (nx as f64 * dx * SCALE, ny as f64 * dy * SCALE);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="{:.2} {:.2} {w:.2} {h:.2}">"#,
        -0.5 * dx * SCALE,
        -0.5 * dy * SCALE
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect x="{:.2}" y="{:.2}" width="{w:.2}" height="{h:.2}" fill="black"/>"#,
        -0.5 * dx * SCALE,
        -0.5 * dy * SCALE
    )
    .unwrap();

    if let Some(z) = case.plane_slice(grid, plane) {
        for s in Structure::ALL {
            let slice = case.mask(s).index_axis(Axis(0), z).mapv(|v| v == 1);
            writeln!(
                svg,
                r#"<path class="contour {}" d="{}" stroke="{}" stroke-width="1.5" fill="none"/>"#,
                s.name(),
                outline(slice.view(), dx, dy),
                structure_color(s)
            )
            .unwrap();
        }
        let voxels: Vec<(usize, usize, usize)> = (0..ny).flat_map(|y| (0..nx).map(move |x| (z, y, x))).collect();
        let dose = Array2::from_shape_vec((ny, nx), dose_at_voxels(plan, case, model, &voxels)?).expect("slice shape");
        for (level, color) in ISODOSE_LEVELS {
            let threshold = level / 100.0 * prescribed;
            let mask = dose.mapv(|d| d >= threshold);
            writeln!(
                svg,
                r#"<path class="isodose" data-level="{level:.0}" d="{}" stroke="{color}" stroke-width="1" fill="none"/>"#,
                outline(mask.view(), dx, dy)
            )
            .unwrap();
        }
    }

    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let p = case.grid_point_mm(grid, GridPoint::new(r, c, plane));
            let (x, y) = (p.x * SCALE, p.y * SCALE);
            writeln!(
                svg,
                r#"<path class="template" d="M{:.2} {y:.2}H{:.2}M{x:.2} {:.2}V{:.2}" stroke="{TEMPLATE_COLOR}" stroke-width="1"/>"#,
                x - 4.0,
                x + 4.0,
                y - 4.0,
                y + 4.0
            )
            .unwrap();
        }
    }
    for s in plan.seeds().into_iter().filter(|s| s.plane == plane) {
        let p = case.grid_point_mm(grid, s);
        writeln!(
            svg,
            r#"<circle class="seed" data-grid="{} {} {}" cx="{:.2}" cy="{:.2}" r="5" fill="{SEED_COLOR}"/>"#,
            s.row,
            s.col,
            s.plane,
            p.x * SCALE,
            p.y * SCALE
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
