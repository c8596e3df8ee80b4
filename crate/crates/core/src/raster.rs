//! Planar raster grids, patch records and the α×α average-pooling operator.
//!
//! A [`Raster`] is a `C×H×W` grid of `f32` values stored channel-major
//! (planar), then row-major inside each channel. Every raster carries an
//! opaque units tag (`"t/px"` for biomass maps, `"1"` for guide bands) that
//! is preserved through resampling but never interpreted.

use crate::error::{Error, Result};

/// Units tag used for dimensionless guide bands.
pub const UNITLESS: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    units: String,
}

impl Raster {
    /// Builds a raster, rejecting zero dimensions, a length mismatch or any
    /// non-finite value.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        units: impl Into<String>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "raster dimensions must be positive, got C={channels} H={height} W={width}"
            )));
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "raster of shape {channels}x{height}x{width} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at flat index {pos}",
                values[pos]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
            units: units.into(),
        })
    }

    /// Single-channel convenience constructor.
    pub fn single(
        height: usize,
        width: usize,
        values: Vec<f32>,
        units: impl Into<String>,
    ) -> Result<Self> {
        Self::new(1, height, width, values, units)
    }

    pub fn filled(
        channels: usize,
        height: usize,
        width: usize,
        value: f32,
        units: impl Into<String>,
    ) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
            units,
        )
    }

    /// Builds a single-channel raster from `f(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        units: impl Into<String>,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::single(height, width, values, units)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels per channel.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.plane_len();
        &self.values[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.values[(channel * self.height + row) * self.width + col]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.dims() == other.dims()
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.values
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation over all values.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self
            .values
            .iter()
            .map(|&v| {
                let d = v as f64 - m;
                d * d
            })
            .sum::<f64>()
            / self.values.len() as f64;
        var.sqrt()
    }
}

/// One sample: HR guide `G`, HR target `Y`, LR source `S` and the scale factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub id: String,
    pub guide: Raster,
    pub target: Raster,
    pub source: Raster,
    pub alpha: usize,
}

impl PatchRecord {
    pub fn new(
        id: impl Into<String>,
        guide: Raster,
        target: Raster,
        source: Raster,
        alpha: usize,
    ) -> Result<Self> {
        let record = Self {
            id: id.into(),
            guide,
            target,
            source,
            alpha,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn height(&self) -> usize {
        self.target.height()
    }

    pub fn width(&self) -> usize {
        self.target.width()
    }

    pub fn validate(&self) -> Result<()> {
        check_divisible(self.target.height(), self.target.width(), self.alpha)?;
        if self.target.channels() != 1 || self.source.channels() != 1 {
            return Err(Error::Dimension(format!(
                "record {}: target and source must be single-channel (got {} and {})",
                self.id,
                self.target.channels(),
                self.source.channels()
            )));
        }
        if self.guide.height() != self.target.height() || self.guide.width() != self.target.width()
        {
            return Err(Error::Dimension(format!(
                "record {}: guide is {}x{} but target is {}x{}",
                self.id,
                self.guide.height(),
                self.guide.width(),
                self.target.height(),
                self.target.width()
            )));
        }
        let (h, w) = (
            self.target.height() / self.alpha,
            self.target.width() / self.alpha,
        );
        if self.source.height() != h || self.source.width() != w {
            return Err(Error::Dimension(format!(
                "record {}: source is {}x{}, expected {h}x{w} for alpha {}",
                self.id,
                self.source.height(),
                self.source.width(),
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Normalized pixel-center coordinates of an `H×W` grid.
///
/// Entry `(r, c)` is `((r + 0.5) / H, (c + 0.5) / W)`; stored as two planes,
/// row coordinates first.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl CoordGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row_coord(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.width + c]
    }

    pub fn col_coord(&self, r: usize, c: usize) -> f32 {
        self.values[self.height * self.width + r * self.width + c]
    }
}

pub fn coord_grid(height: usize, width: usize) -> Result<CoordGrid> {
    if height == 0 || width == 0 {
        return Err(Error::Argument(format!(
            "coordinate grid needs positive dims, got {height}x{width}"
        )));
    }
    let n = height * width;
    let mut values = vec![0.0f32; 2 * n];
    for r in 0..height {
        let y = ((r as f64 + 0.5) / height as f64) as f32;
        for c in 0..width {
            values[r * width + c] = y;
            values[n + r * width + c] = ((c as f64 + 0.5) / width as f64) as f32;
        }
    }
    Ok(CoordGrid {
        height,
        width,
        values,
    })
}

pub(crate) fn check_divisible(height: usize, width: usize, alpha: usize) -> Result<()> {
    if alpha == 0 || !height.is_multiple_of(alpha) || !width.is_multiple_of(alpha) {
        return Err(Error::Dimension(format!(
            "H={height} and W={width} must both be divisible by alpha={alpha}"
        )));
    }
    Ok(())
}

/// α×α average pooling, applied per channel.
///
/// Output pixel `(i, j)` is the mean of the input block with top-left corner
/// `(αi, αj)`. This is the operator that defines LR sources from HR targets and
/// the pooled-consistency term of the pixel-to-pixel loss.
pub fn downsample_avg(map: &Raster, alpha: usize) -> Result<Raster> {
    check_divisible(map.height(), map.width(), alpha)?;
    if alpha == 1 {
        return Ok(map.clone());
    }
    let (h, w) = (map.height() / alpha, map.width() / alpha);
    let norm = (alpha * alpha) as f64;
    let mut out = Vec::with_capacity(map.channels() * h * w);
    for k in 0..map.channels() {
        let plane = map.channel(k);
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0f64;
                for r in i * alpha..(i + 1) * alpha {
                    let row =
                        &plane[r * map.width() + j * alpha..r * map.width() + (j + 1) * alpha];
                    acc += row.iter().map(|&v| v as f64).sum::<f64>();
                }
                out.push((acc / norm) as f32);
            }
        }
    }
    Raster::new(map.channels(), h, w, out, map.units())
}
