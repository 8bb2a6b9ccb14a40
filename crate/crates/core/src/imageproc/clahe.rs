use super::{ImageError, MultiChannelImage};

const BINS: usize = 256;

/// Contrast-limited adaptive histogram equalization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheConfig {
    pub tile_rows: usize,
    pub tile_cols: usize,
    /// Histogram clip height as a multiple of the mean per-bin count.
    /// `f64::INFINITY` disables clipping.
    pub clip_limit: f64,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self {
            tile_rows: 8,
            tile_cols: 8,
            clip_limit: 2.0,
        }
    }
}

impl ClaheConfig {
    /// Checks the configuration against a `width × height` plane.
    pub fn validate(&self, width: usize, height: usize) -> Result<(), ImageError> {
        if self.tile_rows == 0 || self.tile_cols == 0 {
            return Err(ImageError::Clahe("tile grid must be at least 1x1".into()));
        }
        if self.tile_rows > height || self.tile_cols > width {
            return Err(ImageError::Clahe(format!(
                "{}x{} tile grid does not fit a {width}x{height} plane",
                self.tile_rows, self.tile_cols
            )));
        }
        if self.clip_limit.is_nan() || self.clip_limit <= 1.0 {
            return Err(ImageError::Clahe(format!(
                "clip limit must exceed 1, got {}",
                self.clip_limit
            )));
        }
        let smallest = (width / self.tile_cols) * (height / self.tile_rows);
        if self.clip_limit * (smallest as f64 / BINS as f64) < 1.0 {
            return Err(ImageError::Clahe(format!(
                "clip limit {} allows less than one count per bin on {smallest}-pixel tiles",
                self.clip_limit
            )));
        }
        Ok(())
    }
}

fn quantize(v: f32) -> usize {
    (v.clamp(0.0, 1.0) as f64 * 255.0).round() as usize
}

/// `[start, end)` of each tile along one axis; the last tile absorbs the
/// remainder.
fn tile_bounds(len: usize, tiles: usize) -> Vec<(usize, usize)> {
    let step = len / tiles;
    (0..tiles)
        .map(|t| {
            let start = t * step;
            let end = if t + 1 == tiles { len } else { start + step };
            (start, end)
        })
        .collect()
}

/// Clipped, redistributed cumulative histogram of one tile, scaled to
/// `[0, 1]`. A tile holding a single value maps every level to itself.
fn tile_mapping(hist: &[u32; BINS], clip_limit: f64) -> [f64; BINS] {
    let mut lut = [0.0; BINS];
    let total: u32 = hist.iter().sum();
    if hist.iter().filter(|&&c| c > 0).count() <= 1 {
        for (i, v) in lut.iter_mut().enumerate() {
            *v = i as f64 / 255.0;
        }
        return lut;
    }
    let mut h: Vec<f64> = hist.iter().map(|&c| c as f64).collect();
    if clip_limit.is_finite() {
        let limit = clip_limit * total as f64 / BINS as f64;
        let mut excess = 0.0;
        for c in h.iter_mut() {
            if *c > limit {
                excess += *c - limit;
                *c = limit;
            }
        }
        let share = excess / BINS as f64;
        for c in h.iter_mut() {
            *c += share;
        }
    }
    let mut cumulative = 0.0;
    for (v, c) in lut.iter_mut().zip(&h) {
        cumulative += c;
        *v = (cumulative / total as f64).min(1.0);
    }
    lut
}

/// Interpolation neighbours and weight of the second for a pixel centre
/// `p` given tile centres along one axis.
fn neighbours(p: f64, centres: &[f64]) -> (usize, usize, f64) {
    let last = centres.len() - 1;
    if p <= centres[0] {
        return (0, 0, 0.0);
    }
    if p >= centres[last] {
        return (last, last, 0.0);
    }
    let j = centres.partition_point(|&c| c <= p) - 1;
    let t = (p - centres[j]) / (centres[j + 1] - centres[j]);
    (j, j + 1, t)
}

/// CLAHE of a single `[0, 1]` plane.
pub fn clahe_plane(
    plane: &[f32],
    width: usize,
    height: usize,
    cfg: &ClaheConfig,
) -> Result<Vec<f32>, ImageError> {
    cfg.validate(width, height)?;
    let rows = tile_bounds(height, cfg.tile_rows);
    let cols = tile_bounds(width, cfg.tile_cols);

    let mut luts = Vec::with_capacity(rows.len() * cols.len());
    for &(y0, y1) in &rows {
        for &(x0, x1) in &cols {
            let mut hist = [0u32; BINS];
            for y in y0..y1 {
                for &v in &plane[y * width + x0..y * width + x1] {
                    hist[quantize(v)] += 1;
                }
            }
            luts.push(tile_mapping(&hist, cfg.clip_limit));
        }
    }

    let centre = |&(a, b): &(usize, usize)| (a + b) as f64 / 2.0;
    let row_centres: Vec<f64> = rows.iter().map(centre).collect();
    let col_centres: Vec<f64> = cols.iter().map(centre).collect();
    let col_weights: Vec<_> = (0..width)
        .map(|x| neighbours(x as f64 + 0.5, &col_centres))
        .collect();

    let nc = cols.len();
    let mut out = vec![0.0f32; width * height];
    for y in 0..height {
        let (r0, r1, ty) = neighbours(y as f64 + 0.5, &row_centres);
        for x in 0..width {
            let (c0, c1, tx) = col_weights[x];
            let bin = quantize(plane[y * width + x]);
            let at = |r: usize, c: usize| luts[r * nc + c][bin];
            let top = at(r0, c0) * (1.0 - tx) + at(r0, c1) * tx;
            let bottom = at(r1, c0) * (1.0 - tx) + at(r1, c1) * tx;
            out[y * width + x] = (top * (1.0 - ty) + bottom * ty) as f32;
        }
    }
    Ok(out)
}

/// Enhances the R, G and B planes; H, S, L*, a* pass through untouched.
pub fn clahe_rgb(
    image: &MultiChannelImage,
    cfg: &ClaheConfig,
) -> Result<MultiChannelImage, ImageError> {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for c in 0..3 {
        let enhanced = clahe_plane(image.plane(c), w, h, cfg)?;
        out.plane_mut(c).copy_from_slice(&enhanced);
    }
    Ok(out)
}
