//! Deterministic software rasterization of scatter and loss plots. After
//! the single float→pixel quantization in the axis mapping, all drawing is
//! integer arithmetic with hard edges, so identical inputs give identical
//! bytes.

mod loss;
mod raster;
mod scatter;

pub use loss::{render_loss, LossPlotConfig, X_TICK_TIMESTAMPS, Y_TICK_STEP};
pub use raster::{
    downsample, luma, to_binary, to_grayscale, PlotRaster, BLACK, DEFAULT_BINARY_THRESHOLD, WHITE,
};
pub use scatter::{marker_centers, render_scatter, ColorMode, RenderConfig, PALETTE};
