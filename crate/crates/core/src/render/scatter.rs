use serde::{Deserialize, Serialize};

use super::raster::{to_binary, to_grayscale, PlotRaster, BLACK, DEFAULT_BINARY_THRESHOLD, WHITE};
use crate::error::{Error, Result};
use crate::tsne::TsneLayout;

/// Ten fixed, mutually distinct class colors (the matplotlib "tab10" set).
/// Every entry has luma below the binary threshold, so binarizing a color
/// plot keeps every marker.
pub const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    Color,
    Grayscale,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub marker_radius: usize,
    pub color_mode: ColorMode,
    pub margin: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 300,
            height: 300,
            marker_radius: 2,
            color_mode: ColorMode::Grayscale,
            margin: 0.05,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.marker_radius < 1 {
            return Err(Error::InvalidArgument("marker radius must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.margin) {
            return Err(Error::InvalidArgument(format!(
                "margin fraction must be in [0, 0.5), got {}",
                self.margin
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("canvas must be non-empty".into()));
        }
        Ok(())
    }
}

/// Maps values in `[min, max]` onto pixel positions `[lo, hi]`. This is the
/// only float→pixel quantization step; everything after it is integer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisMap {
    min: f64,
    span: f64,
    lo: i64,
    hi: i64,
}

impl AxisMap {
    pub(crate) fn new(min: f64, max: f64, lo: i64, hi: i64) -> Self {
        Self {
            min,
            span: max - min,
            lo,
            hi,
        }
    }

    #[inline]
    pub(crate) fn map(&self, v: f64) -> i64 {
        if !(self.span > 0.0) || !self.span.is_finite() {
            return (self.lo + self.hi) / 2;
        }
        self.lo + ((v - self.min) / self.span * (self.hi - self.lo) as f64).round() as i64
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Pixel centers of every point: coordinates are min-max normalized per axis
/// into the canvas minus margins, with larger y drawn higher.
pub fn marker_centers(layout: &TsneLayout, config: &RenderConfig) -> Vec<(i64, i64)> {
    let c = layout.coords();
    let (xmin, xmax) = min_max((0..c.rows()).map(|i| c.get(i, 0)));
    let (ymin, ymax) = min_max((0..c.rows()).map(|i| c.get(i, 1)));
    let mx = (config.margin * (config.width - 1) as f64).round() as i64;
    let my = (config.margin * (config.height - 1) as f64).round() as i64;
    let xmap = AxisMap::new(xmin, xmax, mx, config.width as i64 - 1 - mx);
    let ymap = AxisMap::new(ymin, ymax, my, config.height as i64 - 1 - my);
    (0..c.rows())
        .map(|i| {
            let px = xmap.map(c.get(i, 0));
            let py = config.height as i64 - 1 - ymap.map(c.get(i, 1));
            (px, py)
        })
        .collect()
}

/// Scatter plot of a layout: white background, one filled disc per point in
/// index order, colored by class (gray or black in the other color modes).
pub fn render_scatter(layout: &TsneLayout, config: &RenderConfig) -> Result<PlotRaster> {
    config.validate()?;
    if layout.is_empty() {
        return Err(Error::InvalidArgument("cannot render an empty layout".into()));
    }
    let mut raster = PlotRaster::filled(config.width, config.height, 3, WHITE)?;
    let r = config.marker_radius as i64;
    for ((x, y), &label) in marker_centers(layout, config).into_iter().zip(layout.labels()) {
        let color = match config.color_mode {
            ColorMode::Binary => BLACK,
            _ => PALETTE[label % PALETTE.len()],
        };
        raster.fill_disc(x, y, r, color);
    }
    Ok(match config.color_mode {
        ColorMode::Color => raster,
        ColorMode::Grayscale => to_grayscale(&raster),
        ColorMode::Binary => to_binary(&raster, DEFAULT_BINARY_THRESHOLD),
    })
}
