//! Metric depth rasters: masking, median-ratio scale alignment of predicted
//! depth, and pinhole back-projection.

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};

/// Pinhole camera model, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(Error::InvalidArgument(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera-frame point -> (u, v) pixel coordinates.
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Row-major depth raster in meters; zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} depth values for a {width}x{height} raster",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "depth values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Row-major boolean object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} mask values for a {width}x{height} raster",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&m| m).count()
    }
}

fn check_dims(depth: &DepthImage, mask: &BinaryMask) -> Result<()> {
    if depth.width != mask.width || depth.height != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "depth is {}x{}, mask is {}x{}",
            depth.width, depth.height, mask.width, mask.height
        )));
    }
    Ok(())
}

/// Lower-middle order statistic: element `(n - 1) / 2` of the sorted sample.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Result of aligning a relative depth prediction to sensor depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAlignment {
    pub scale: f64,
    pub metric: DepthImage,
}

/// Scales `predicted` so that its median over the mask matches the sensor's.
///
/// The medians run over pixels that are inside the mask and strictly positive
/// in both rasters. Every pixel of the prediction is scaled (holes in the
/// sensor raster get filled); invalid predicted pixels stay zero.
pub fn median_scale_align(
    sensor: &DepthImage,
    predicted: &DepthImage,
    mask: &BinaryMask,
) -> Result<ScaleAlignment> {
    check_dims(sensor, mask)?;
    check_dims(predicted, mask)?;
    let mut sensor_vals = Vec::new();
    let mut pred_vals = Vec::new();
    for ((&s, &p), &m) in sensor.values.iter().zip(&predicted.values).zip(&mask.values) {
        if m && s > 0.0 && p > 0.0 {
            sensor_vals.push(s);
            pred_vals.push(p);
        }
    }
    let sensor_median = lower_median(&mut sensor_vals).ok_or(Error::NoOverlap)?;
    let pred_median = lower_median(&mut pred_vals).ok_or(Error::NoOverlap)?;
    if !(pred_median > 0.0) {
        return Err(Error::DegeneratePrediction);
    }
    let scale = sensor_median / pred_median;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegeneratePrediction);
    }
    let metric = DepthImage {
        width: predicted.width,
        height: predicted.height,
        values: predicted.values.iter().map(|&d| scale * d).collect(),
    };
    Ok(ScaleAlignment { scale, metric })
}

/// Zeroes every pixel outside the mask.
pub fn masked_crop(depth: &DepthImage, mask: &BinaryMask) -> Result<DepthImage> {
    check_dims(depth, mask)?;
    Ok(DepthImage {
        width: depth.width,
        height: depth.height,
        values: depth
            .values
            .iter()
            .zip(&mask.values)
            .map(|(&d, &m)| if m { d } else { 0.0 })
            .collect(),
    })
}

/// Lifts each valid in-mask pixel `(u, v, d)` to
/// `(d (u - cx) / fx, d (v - cy) / fy, d)`, in row-major pixel order.
pub fn backproject(depth: &DepthImage, intr: &CameraIntrinsics, mask: &BinaryMask) -> Result<PointCloud> {
    check_dims(depth, mask)?;
    if depth.width != intr.width || depth.height != intr.height {
        return Err(Error::DimensionMismatch(format!(
            "depth is {}x{}, intrinsics describe {}x{}",
            depth.width, depth.height, intr.width, intr.height
        )));
    }
    let mut points = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            let d = depth.values[i];
            if mask.values[i] && d > 0.0 {
                points.push(Vec3::new(
                    d * (u as f64 - intr.cx) / intr.fx,
                    d * (v as f64 - intr.cy) / intr.fy,
                    d,
                ));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(values: &[f64], w: usize) -> DepthImage {
        DepthImage::new(w, values.len() / w, values.to_vec()).unwrap()
    }

    #[test]
    fn lower_median_picks_lower_middle() {
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&mut [5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(lower_median(&mut []), None);
    }

    #[test]
    fn scale_from_medians() {
        let sensor = raster(&[0.8, 0.8, 0.8, 0.0], 2);
        let pred = raster(&[1.6, 1.6, 1.6, 2.0], 2);
        let mask = BinaryMask::filled(2, 2, true);
        let out = median_scale_align(&sensor, &pred, &mask).unwrap();
        assert_eq!(out.scale, 0.5);
        // Sensor hole at pixel 3 is filled from the scaled prediction.
        assert_eq!(out.metric.values()[3], 1.0);
    }

    #[test]
    fn identical_rasters_give_unit_scale() {
        let d = raster(&[0.5, 0.7, 0.9, 1.1, 1.3, 1.5], 3);
        let out = median_scale_align(&d, &d, &BinaryMask::filled(3, 2, true)).unwrap();
        assert_eq!(out.scale, 1.0);
        assert_eq!(out.metric, d);
    }

    #[test]
    fn median_ignores_outlier_spike() {
        let sensor = raster(&[0.4, 0.5, 10.0], 3);
        let pred = raster(&[1.0, 1.0, 1.0], 3);
        let out = median_scale_align(&sensor, &pred, &BinaryMask::filled(3, 1, true)).unwrap();
        assert_eq!(out.scale, 0.5);
    }

    #[test]
    fn alignment_errors() {
        let sensor = raster(&[0.0, 1.0], 2);
        let pred = raster(&[1.0, 0.0], 2);
        let mask = BinaryMask::filled(2, 1, true);
        assert_eq!(median_scale_align(&sensor, &pred, &mask).unwrap_err(), Error::NoOverlap);
        let wrong = BinaryMask::filled(1, 2, true);
        assert!(matches!(
            median_scale_align(&sensor, &pred, &wrong),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn backprojection_examples() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 101, 1).unwrap();
        let mut vals = vec![0.0; 101];
        vals[100] = 1.0;
        let depth = DepthImage::new(101, 1, vals).unwrap();
        let cloud = backproject(&depth, &intr, &BinaryMask::filled(101, 1, true)).unwrap();
        assert_eq!(cloud.points(), &[Vec3::new(1.0, 0.0, 1.0)]);

        let intr = CameraIntrinsics::new(500.0, 500.0, 2.0, 1.0, 4, 3).unwrap();
        let mut vals = vec![0.0; 12];
        vals[4 + 2] = 2.0;
        let depth = DepthImage::new(4, 3, vals).unwrap();
        let cloud = backproject(&depth, &intr, &BinaryMask::filled(4, 3, true)).unwrap();
        assert_eq!(cloud.points(), &[Vec3::new(0.0, 0.0, 2.0)]);

        let empty = DepthImage::zeros(4, 3);
        assert!(backproject(&empty, &intr, &BinaryMask::filled(4, 3, true)).is_err());
    }

    #[test]
    fn constant_plane_backprojects_flat() {
        let intr = CameraIntrinsics::new(300.0, 300.0, 8.0, 6.0, 16, 12).unwrap();
        let depth = DepthImage::new(16, 12, vec![0.75; 192]).unwrap();
        let mask = BinaryMask::new(16, 12, (0..192).map(|i| i % 3 != 0).collect()).unwrap();
        let cloud = backproject(&depth, &intr, &mask).unwrap();
        assert_eq!(cloud.len(), mask.count());
        assert!(cloud.points().iter().all(|p| p.z == 0.75));
    }

    #[test]
    fn crop_examples() {
        let d = raster(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3);
        assert_eq!(masked_crop(&d, &BinaryMask::filled(3, 2, true)).unwrap(), d);
        assert_eq!(
            masked_crop(&d, &BinaryMask::filled(3, 2, false)).unwrap(),
            DepthImage::zeros(3, 2)
        );
        let checker = BinaryMask::new(3, 2, (0..6).map(|i| (i / 3 + i % 3) % 2 == 0).collect()).unwrap();
        let cropped = masked_crop(&d, &checker).unwrap();
        assert_eq!(cropped.valid_count(), checker.count());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 2, 2).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 0.0, 2, 2).is_err());
        assert!(DepthImage::new(2, 2, vec![1.0, -1.0, 0.0, 0.0]).is_err());
    }
}
