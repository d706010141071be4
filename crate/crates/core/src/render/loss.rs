use serde::{Deserialize, Serialize};

use super::raster::{PlotRaster, BLACK, WHITE};
use super::scatter::AxisMap;
use crate::error::{Error, Result};
use crate::nn::{LossCurve, TRAIN_POINTS_PER_EPOCH};

/// Loss-axis tick spacing.
pub const Y_TICK_STEP: f64 = 0.5;
/// Time-axis tick spacing in train timestamps (one epoch).
pub const X_TICK_TIMESTAMPS: usize = TRAIN_POINTS_PER_EPOCH;
const TICK_LEN: i64 = 5;
const AXIS_PAD: i64 = 24;
const EDGE_PAD: i64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossPlotConfig {
    pub with_axes: bool,
    pub width: usize,
    pub height: usize,
    pub train_color: [u8; 3],
    pub test_color: [u8; 3],
    pub thickness: usize,
}

impl Default for LossPlotConfig {
    fn default() -> Self {
        Self {
            with_axes: true,
            width: 300,
            height: 300,
            train_color: [31, 119, 180],
            test_color: [255, 127, 14],
            thickness: 2,
        }
    }
}

impl LossPlotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_color == self.test_color {
            return Err(Error::InvalidArgument("train and test colors must differ".into()));
        }
        if self.width < 4 * AXIS_PAD as usize || self.height < 4 * AXIS_PAD as usize {
            return Err(Error::InvalidArgument("loss plot canvas too small".into()));
        }
        Ok(())
    }
}

/// Both curves as polylines on shared axes: x over `[0, last timestamp]`,
/// y over `[0, 1.05 · max loss]`. With axes, tick marks sit at every epoch
/// and every 0.5 of loss, so their spacing carries the scale.
pub fn render_loss(curve: &LossCurve, config: &LossPlotConfig) -> Result<PlotRaster> {
    config.validate()?;
    if curve.train.len() < 2 || curve.test.len() < 2 {
        return Err(Error::InvalidArgument(
            "loss plot needs at least 2 points per curve".into(),
        ));
    }
    let (w, h) = (config.width as i64, config.height as i64);
    let (left, bottom) = if config.with_axes {
        (AXIS_PAD, h - 1 - AXIS_PAD)
    } else {
        (EDGE_PAD, h - 1 - EDGE_PAD)
    };
    let (right, top) = (w - 1 - EDGE_PAD, EDGE_PAD);
    let xmax = curve.max_timestamp();
    let mut ymax = curve.max_loss() * 1.05;
    if !(ymax > 0.0) {
        ymax = 1.0;
    }
    let xmap = AxisMap::new(0.0, xmax, left, right);
    // pixel rows grow downward, so loss 0 maps to `bottom`
    let ymap = AxisMap::new(0.0, ymax, top, bottom);
    let to_px = |(t, l): (f64, f64)| (xmap.map(t), bottom + top - ymap.map(l));

    let mut raster = PlotRaster::filled(config.width, config.height, 3, WHITE)?;
    if config.with_axes {
        raster.draw_line((left, top), (left, bottom), 1, BLACK);
        raster.draw_line((left, bottom), (right, bottom), 1, BLACK);
        let epochs = (curve.train.len() / X_TICK_TIMESTAMPS).max(xmax.floor() as usize);
        for e in 1..=epochs {
            let x = xmap.map(e as f64);
            raster.draw_line((x, bottom), (x, bottom + TICK_LEN), 1, BLACK);
        }
        let mut k = 1;
        while k as f64 * Y_TICK_STEP <= ymax {
            let y = bottom + top - ymap.map(k as f64 * Y_TICK_STEP);
            raster.draw_line((left - TICK_LEN, y), (left, y), 1, BLACK);
            k += 1;
        }
    }
    for (points, color) in [(&curve.train, config.train_color), (&curve.test, config.test_color)] {
        for pair in points.windows(2) {
            raster.draw_line(to_px(pair[0]), to_px(pair[1]), config.thickness, color);
        }
    }
    Ok(raster)
}
