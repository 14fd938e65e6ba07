//! Composite action-unit images: joint-centered crops tiled into one
//! grayscale grid, plus the pooled descriptor the models consume.

use super::pose::PoseFrame;
use super::DataError;
use crate::Real;

/// Grayscale image, row-major `f32` in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn zeros(h: usize, w: usize) -> Self {
        GrayImage {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.w + x] = v;
    }

    /// Bilinear sample at pixel coordinates; out-of-frame reads are zero.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut acc = 0.0;
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                let sx = x0 as i64 + dx;
                let sy = y0 as i64 + dy;
                if sx < 0 || sy < 0 || sx >= self.w as i64 || sy >= self.h as i64 {
                    continue;
                }
                acc += wy * wx * self.get(sy as usize, sx as usize) as f64;
            }
        }
        acc
    }
}

/// Composite of `Y` joint-centered `P x P` patches in a row-major grid of
/// `ceil(sqrt(Y))` columns; unused cells stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionUnitImage {
    pub pixels: GrayImage,
    pub patch_count: usize,
    pub patch_resolution: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
}

/// Grid geometry for `y` patches.
pub fn grid_shape(patch_count: usize) -> (usize, usize) {
    let cols = (patch_count as f64).sqrt().ceil() as usize;
    let rows = patch_count.div_ceil(cols);
    (rows, cols)
}

/// Crops a square window centered on each selected joint (side =
/// `crop_frac` x bbox diagonal), bilinearly resampled to `P x P`, and
/// tiles the patches row-major. Out-of-frame regions are zero.
pub fn compose_action_unit(
    frame: &GrayImage,
    pose: &PoseFrame,
    roi_joints: &[usize],
    patch_resolution: usize,
    crop_frac: Real,
) -> Result<ActionUnitImage, DataError> {
    if roi_joints.is_empty() || patch_resolution == 0 {
        return Err(DataError::BadParams(
            "compose_action_unit needs roi joints and a positive patch resolution".into(),
        ));
    }
    if let Some(&j) = roi_joints.iter().find(|&&j| j >= pose.joint_count()) {
        return Err(DataError::Invariant {
            field: "roi_joints".into(),
            msg: format!("joint index {j} out of range 0..{}", pose.joint_count()),
        });
    }
    let y_count = roi_joints.len();
    let (rows, cols) = grid_shape(y_count);
    let p = patch_resolution;
    let mut out = GrayImage::zeros(rows * p, cols * p);

    let diag_px = ((pose.bbox.w * frame.w as Real).powi(2)
        + (pose.bbox.h * frame.h as Real).powi(2))
    .sqrt();
    let side = crop_frac * diag_px;
    if !(side.is_finite() && side > 0.0) {
        log::warn!("degenerate bbox: crop side {side}, emitting all-zero patches");
        return Ok(ActionUnitImage {
            pixels: out,
            patch_count: y_count,
            patch_resolution: p,
            grid_cols: cols,
            grid_rows: rows,
        });
    }

    for (idx, &joint) in roi_joints.iter().enumerate() {
        let (jx, jy) = pose.joints[joint];
        let cx = jx * (frame.w - 1) as Real;
        let cy = jy * (frame.h - 1) as Real;
        let cell_y = (idx / cols) * p;
        let cell_x = (idx % cols) * p;
        for py in 0..p {
            for px in 0..p {
                let sx = cx + ((px as Real + 0.5) / p as Real - 0.5) * side;
                let sy = cy + ((py as Real + 0.5) / p as Real - 0.5) * side;
                let v = frame.sample(sx, sy);
                out.set(cell_y + py, cell_x + px, v as f32);
            }
        }
    }
    Ok(ActionUnitImage {
        pixels: out,
        patch_count: y_count,
        patch_resolution: p,
        grid_cols: cols,
        grid_rows: rows,
    })
}

/// Pooled-descriptor size: the composite average-pooled to 8x8, flattened.
pub const DESCRIPTOR_DIM: usize = 64;

/// 8x8 average pool of the composite image, flattened row-major.
pub fn descriptor(au: &ActionUnitImage) -> Vec<Real> {
    let img = &au.pixels;
    let mut out = vec![0.0; DESCRIPTOR_DIM];
    for gy in 0..8 {
        for gx in 0..8 {
            let y0 = gy * img.h / 8;
            let y1 = (gy + 1) * img.h / 8;
            let x0 = gx * img.w / 8;
            let x1 = (gx + 1) * img.w / 8;
            let mut acc = 0.0;
            let mut count = 0usize;
            for y in y0..y1.max(y0 + 1).min(img.h) {
                for x in x0..x1.max(x0 + 1).min(img.w) {
                    acc += img.get(y, x) as Real;
                    count += 1;
                }
            }
            out[gy * 8 + gx] = if count > 0 { acc / count as Real } else { 0.0 };
        }
    }
    out
}
