use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];
/// Gray cutoff separating marker ink from background in binary plots.
pub const DEFAULT_BINARY_THRESHOLD: u8 = 250;

/// 8-bit image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotRaster {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl PlotRaster {
    /// Canvas filled with `fill` (only the first `channels` entries are used).
    pub fn filled(width: usize, height: usize, channels: usize, fill: [u8; 3]) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
        }
        let mut pixels = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            pixels.extend_from_slice(&fill[..channels]);
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn from_pixels(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) || pixels.len() != width * height * channels {
            return Err(Error::shape(
                "PlotRaster::from_pixels",
                format!("{width}x{height}x{channels}"),
                pixels.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// Paints one pixel; coordinates outside the canvas are ignored.
    #[inline]
    pub fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * self.channels;
        if self.channels == 3 {
            self.pixels[i..i + 3].copy_from_slice(&color);
        } else {
            self.pixels[i] = luma(color);
        }
    }

    /// Filled disc of integer radius `r` centered on `(cx, cy)`.
    pub fn fill_disc(&mut self, cx: i64, cy: i64, r: i64, color: [u8; 3]) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, color);
                }
            }
        }
    }

    /// Bresenham line with a square brush of side `thickness`.
    pub fn draw_line(&mut self, from: (i64, i64), to: (i64, i64), thickness: usize, color: [u8; 3]) {
        let t = thickness.max(1) as i64;
        let lo = -(t - 1) / 2;
        let hi = t / 2;
        let (mut x, mut y) = from;
        let dx = (to.0 - x).abs();
        let dy = -(to.1 - y).abs();
        let sx = if x < to.0 { 1 } else { -1 };
        let sy = if y < to.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            for oy in lo..=hi {
                for ox in lo..=hi {
                    self.put(x + ox, y + oy, color);
                }
            }
            if x == to.0 && y == to.1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Count of pixels differing from `background`.
    pub fn ink_count(&self, background: [u8; 3]) -> usize {
        self.pixels
            .chunks(self.channels)
            .filter(|p| *p != &background[..self.channels])
            .count()
    }

    /// Pixels as floats in `[0, 1]` where 1 is full ink (black) and 0 is
    /// background; multi-channel rasters are converted to gray first.
    pub fn ink_features(&self) -> Vec<f64> {
        let gray = to_grayscale(self);
        gray.pixels.iter().map(|&v| 1.0 - v as f64 / 255.0).collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.encode_png(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn encode_png<W: Write>(&self, w: W) -> Result<()> {
        let mut encoder = png::Encoder::new(w, self.width as u32, self.height as u32);
        encoder.set_color(if self.channels == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Balanced);
        encoder.set_filter(png::Filter::Sub);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&self.pixels)?;
        writer.finish()?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(std::io::BufReader::new(file));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Corrupt {
                path: path.into(),
                reason: format!("unsupported bit depth {:?}", info.bit_depth),
            });
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => {
                return Err(Error::Corrupt {
                    path: path.into(),
                    reason: format!("unsupported color type {other:?}"),
                })
            }
        };
        buf.truncate(info.buffer_size());
        Self::from_pixels(info.width as usize, info.height as usize, channels, buf)
    }

    /// Binary PGM (1 channel) or PPM (3 channels).
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Integer luma with weights 0.299/0.587/0.114, rounded half up.
#[inline]
pub fn luma(c: [u8; 3]) -> u8 {
    ((299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32 + 500) / 1000) as u8
}

pub fn to_grayscale(raster: &PlotRaster) -> PlotRaster {
    if raster.channels == 1 {
        return raster.clone();
    }
    let pixels = raster
        .pixels
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]))
        .collect();
    PlotRaster {
        width: raster.width,
        height: raster.height,
        channels: 1,
        pixels,
    }
}

/// Gray values below `threshold` become 0 (ink), the rest 255.
pub fn to_binary(raster: &PlotRaster, threshold: u8) -> PlotRaster {
    let mut gray = to_grayscale(raster);
    for v in gray.pixels.iter_mut() {
        *v = if *v < threshold { 0 } else { 255 };
    }
    gray
}

/// Box-filter reduction: target pixel `i` averages source pixels
/// `[⌊i·W/w⌋, ⌊(i+1)·W/w⌋)` per axis, rounded half up.
pub fn downsample(raster: &PlotRaster, width: usize, height: usize) -> Result<PlotRaster> {
    if width == 0 || height == 0 || width > raster.width || height > raster.height {
        return Err(Error::InvalidArgument(format!(
            "cannot resample {}x{} to {width}x{height}: only reduction is supported",
            raster.width, raster.height
        )));
    }
    if width == raster.width && height == raster.height {
        return Ok(raster.clone());
    }
    let ch = raster.channels;
    let mut out = vec![0u8; width * height * ch];
    for ty in 0..height {
        let (y0, y1) = (ty * raster.height / height, (ty + 1) * raster.height / height);
        for tx in 0..width {
            let (x0, x1) = (tx * raster.width / width, (tx + 1) * raster.width / width);
            let count = ((y1 - y0) * (x1 - x0)) as u64;
            for c in 0..ch {
                let mut sum = 0u64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += raster.pixels[(y * raster.width + x) * ch + c] as u64;
                    }
                }
                out[(ty * width + tx) * ch + c] = ((2 * sum + count) / (2 * count)) as u8;
            }
        }
    }
    PlotRaster::from_pixels(width, height, ch, out)
}
