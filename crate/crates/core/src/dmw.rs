//! Block-matching motion estimation between successive images.
//!
//! For a target pixel `x` the window `G(x)` of the image at time `t` is
//! compared with shifted windows of a neighbouring image, and the integer
//! shift minimizing the sum of squared differences is refined to sub-pixel
//! precision with a parabola through the neighbouring SSD values. Windows
//! with too little variance are skipped as untrackable. In two-sided mode the
//! estimates against `t − δ` and `t + δ` are averaged.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::matrix::Matrix;
use crate::table;
use crate::velocity::{VelocityField, VelocitySample};

pub const FRAME_HEADER: [&str; 4] = ["t", "row", "col", "value"];

const CONFIG_KEYS: [&str; 7] = [
    "window_half",
    "search_radius",
    "delta",
    "variance_floor",
    "two_sided",
    "pixel_size",
    "stride",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ImageFrame {
    pub grid: Matrix,
    /// Physical units per pixel.
    pub pixel_size: f64,
    pub timestamp: f64,
}

impl ImageFrame {
    pub fn new(grid: Matrix, pixel_size: f64, timestamp: f64) -> Result<Self> {
        if !grid.is_finite() {
            return Err(Error::Contract(format!("frame at t={timestamp} has non-finite pixels")));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::Config(format!("pixel_size must be positive, got {pixel_size}")));
        }
        Ok(ImageFrame {
            grid,
            pixel_size,
            timestamp,
        })
    }

    pub fn rows(&self) -> usize {
        self.grid.rows()
    }

    pub fn cols(&self) -> usize {
        self.grid.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DmwConfig {
    pub window_half: usize,
    pub search_radius: usize,
    /// Time between frames; `None` takes it from the frame timestamps.
    pub delta: Option<f64>,
    /// Minimum window variance; `None` means `1e-4·(dynamic range)²` of the
    /// frame sequence.
    pub variance_floor: Option<f64>,
    pub two_sided: bool,
    pub pixel_size: f64,
    pub stride: usize,
}

impl Default for DmwConfig {
    fn default() -> Self {
        DmwConfig {
            window_half: 7,
            search_radius: 10,
            delta: None,
            variance_floor: None,
            two_sided: true,
            pixel_size: 1.0,
            stride: 1,
        }
    }
}

impl DmwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_half < 1 || self.search_radius < 1 || self.stride < 1 {
            return Err(Error::Config(
                "window_half, search_radius and stride must be at least 1".into(),
            ));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("delta must be positive, got {d}")));
            }
        }
        if let Some(f) = self.variance_floor {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("variance_floor must be nonnegative, got {f}")));
            }
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::Config(format!(
                "pixel_size must be positive, got {}",
                self.pixel_size
            )));
        }
        Ok(())
    }

    /// Margin from the frame edge needed for a full search at a pixel.
    pub fn margin(&self) -> usize {
        self.window_half + self.search_radius
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let doc = KvDoc::parse(source, text)?;
        doc.reject_unknown(&CONFIG_KEYS)?;
        let mut cfg = DmwConfig::default();
        if let Some(v) = doc.parse_opt("window_half")? {
            cfg.window_half = v;
        }
        if let Some(v) = doc.parse_opt("search_radius")? {
            cfg.search_radius = v;
        }
        cfg.delta = doc.parse_opt("delta")?;
        cfg.variance_floor = doc.parse_opt("variance_floor")?;
        if let Some(v) = doc.parse_opt("two_sided")? {
            cfg.two_sided = v;
        }
        if let Some(v) = doc.parse_opt("pixel_size")? {
            cfg.pixel_size = v;
        }
        if let Some(v) = doc.parse_opt("stride")? {
            cfg.stride = v;
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{source}: {msg}")),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }
}

fn window_bounds(frame: &ImageFrame, x: [usize; 2], half: usize) -> Result<()> {
    if x[0] < half || x[1] < half || x[0] + half >= frame.rows() || x[1] + half >= frame.cols() {
        return Err(Error::Contract(format!(
            "window of half-size {half} at ({}, {}) leaves the {}x{} frame",
            x[0],
            x[1],
            frame.rows(),
            frame.cols()
        )));
    }
    Ok(())
}

/// Population variance of the window `G(x)`.
pub fn window_variance(frame: &ImageFrame, x: [usize; 2], half: usize) -> Result<f64> {
    window_bounds(frame, x, half)?;
    let n = ((2 * half + 1) * (2 * half + 1)) as f64;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for r in x[0] - half..=x[0] + half {
        for c in x[1] - half..=x[1] + half {
            let v = frame.grid[(r, c)];
            sum += v;
            sq += v * v;
        }
    }
    let mean = sum / n;
    Ok((sq / n - mean * mean).max(0.0))
}

/// True when the window at `x` varies enough to be tracked. A flat window
/// never is, whatever the floor.
pub fn trackability(frame: &ImageFrame, x: [usize; 2], window_half: usize, variance_floor: f64) -> Result<bool> {
    let var = window_variance(frame, x, window_half)?;
    Ok(var > 0.0 && var >= variance_floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Integer shift `(rows, cols)` minimizing the SSD.
    pub displacement: [i64; 2],
    pub ssd: f64,
    /// SSD for every shift; entry `(d₀ + R, d₁ + R)` holds shift `(d₀, d₁)`.
    pub surface: Matrix,
}

/// Exhaustive search comparing `reference` at `y ∈ G(x)` with `other` at
/// `y + sign·d`.
fn search(
    reference: &ImageFrame,
    other: &ImageFrame,
    x: [usize; 2],
    window_half: usize,
    radius: usize,
    sign: i64,
) -> Result<SearchResult> {
    if reference.grid.shape() != other.grid.shape() {
        return Err(Error::shape(
            "ssd_search",
            format!("{:?} vs {:?}", reference.grid.shape(), other.grid.shape()),
        ));
    }
    window_bounds(reference, x, window_half + radius)?;
    let r = radius as i64;
    let h = window_half as i64;
    let side = 2 * radius + 1;
    let mut surface = Matrix::zeros(side, side);
    let mut best: Option<([i64; 2], f64)> = None;
    for d0 in -r..=r {
        for d1 in -r..=r {
            let mut ssd = 0.0;
            for dr in -h..=h {
                for dc in -h..=h {
                    let yr = x[0] as i64 + dr;
                    let yc = x[1] as i64 + dc;
                    let a = reference.grid[(yr as usize, yc as usize)];
                    let b = other.grid[((yr + sign * d0) as usize, (yc + sign * d1) as usize)];
                    ssd += (a - b) * (a - b);
                }
            }
            surface[((d0 + r) as usize, (d1 + r) as usize)] = ssd;
            let better = match best {
                None => true,
                Some((bd, bs)) => {
                    ssd < bs
                        || (ssd == bs
                            && (d0 * d0 + d1 * d1, d0, d1) < (bd[0] * bd[0] + bd[1] * bd[1], bd[0], bd[1]))
                }
            };
            if better {
                best = Some(([d0, d1], ssd));
            }
        }
    }
    let (displacement, ssd) = best.expect("search grid is nonempty");
    Ok(SearchResult {
        displacement,
        ssd,
        surface,
    })
}

/// Minimizes `Σ_{y∈G(x)} [Z_t(y) − Z_{t−δ}(y − d)]²` over integer shifts with
/// components in `[−R, R]`. Ties go to the smallest `‖d‖`, then the
/// lexicographically smallest `d`.
pub fn ssd_search(
    later: &ImageFrame,
    earlier: &ImageFrame,
    x: [usize; 2],
    window_half: usize,
    search_radius: usize,
) -> Result<SearchResult> {
    search(later, earlier, x, window_half, search_radius, -1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refined {
    pub displacement: [f64; 2],
    /// Set when the minimum lies on the edge of the search grid on some axis.
    pub saturated: bool,
}

/// Per-axis parabola through the SSD values either side of the minimum;
/// offsets are clamped to `[−0.5, 0.5]` and flat axes get no offset. An
/// exact match (SSD of zero) is returned unrefined.
pub fn subpixel_refine(surface: &Matrix, argmin: [usize; 2]) -> Refined {
    let radius = (surface.rows() as i64 - 1) / 2;
    let s0 = surface[(argmin[0], argmin[1])];
    let mut out = [argmin[0] as i64 - radius, argmin[1] as i64 - radius].map(|d| d as f64);
    let mut saturated = false;
    for axis in 0..2 {
        let i = argmin[axis];
        let n = if axis == 0 { surface.rows() } else { surface.cols() };
        if i == 0 || i + 1 >= n {
            saturated = true;
            continue;
        }
        if s0 == 0.0 {
            continue;
        }
        let at = |k: usize| {
            if axis == 0 {
                surface[(k, argmin[1])]
            } else {
                surface[(argmin[0], k)]
            }
        };
        out[axis] += parabolic_offset(at(i - 1), s0, at(i + 1));
    }
    Refined {
        displacement: out,
        saturated,
    }
}

/// Vertex of the parabola through `(−1, s₋), (0, s₀), (1, s₊)`, clamped to
/// `[−0.5, 0.5]`; zero when the triple has no strict minimum curvature.
pub fn parabolic_offset(s_minus: f64, s0: f64, s_plus: f64) -> f64 {
    let curvature = s_minus - 2.0 * s0 + s_plus;
    if !(curvature > 0.0) {
        return 0.0;
    }
    ((s_minus - s_plus) / (2.0 * curvature)).clamp(-0.5, 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DmwEstimate {
    /// Velocity in physical units per unit time, `(row, col)` axes.
    pub v: [f64; 2],
    /// Only one of the two sides was trackable.
    pub one_sided: bool,
    pub saturated: bool,
}

fn side_estimate(
    reference: &ImageFrame,
    other: &ImageFrame,
    x: [usize; 2],
    config: &DmwConfig,
    floor: f64,
    sign: i64,
) -> Result<Option<Refined>> {
    if !trackability(reference, x, config.window_half, floor)?
        || !trackability(other, x, config.window_half, floor)?
    {
        return Ok(None);
    }
    let res = search(reference, other, x, config.window_half, config.search_radius, sign)?;
    let r = config.search_radius as i64;
    let argmin = [(res.displacement[0] + r) as usize, (res.displacement[1] + r) as usize];
    Ok(Some(subpixel_refine(&res.surface, argmin)))
}

/// Velocity at pixel `x` of `frames[1]` (two-sided: `[Z_{t−δ}, Z_t, Z_{t+δ}]`)
/// or of `frames[1]` against `frames[0]` (one-sided). `None` means skipped.
pub fn dmw_vector(
    frames: &[&ImageFrame],
    x: [usize; 2],
    config: &DmwConfig,
    delta: f64,
    variance_floor: f64,
) -> Result<Option<DmwEstimate>> {
    let need = if config.two_sided { 3 } else { 2 };
    if frames.len() != need {
        return Err(Error::Contract(format!(
            "{} mode needs {need} frames, got {}",
            if config.two_sided { "two-sided" } else { "one-sided" },
            frames.len()
        )));
    }
    let (earlier, current) = (frames[0], frames[1]);
    let back = side_estimate(current, earlier, x, config, variance_floor, -1)?;
    let fwd = if config.two_sided {
        side_estimate(current, frames[2], x, config, variance_floor, 1)?
    } else {
        None
    };
    let scale = current.pixel_size / delta;
    let (d, one_sided, saturated) = match (back, fwd) {
        (None, None) => return Ok(None),
        (Some(b), None) => (b.displacement, config.two_sided, b.saturated),
        (None, Some(f)) => (f.displacement, true, f.saturated),
        (Some(b), Some(f)) => (
            [
                0.5 * (b.displacement[0] + f.displacement[0]),
                0.5 * (b.displacement[1] + f.displacement[1]),
            ],
            false,
            b.saturated || f.saturated,
        ),
    };
    Ok(Some(DmwEstimate {
        v: [d[0] * scale, d[1] * scale],
        one_sided,
        saturated,
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DmwField {
    /// Emitted vectors; positions are `(row, col)·pixel_size`.
    pub field: VelocityField,
    pub sites: usize,
    pub skipped: usize,
}

/// `1e-4·(max − min)²` over every pixel of every frame.
pub fn default_variance_floor(frames: &[ImageFrame]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for f in frames {
        for &v in f.grid.as_slice() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi >= lo {
        1e-4 * (hi - lo) * (hi - lo)
    } else {
        0.0
    }
}

fn frame_spacing(frames: &[ImageFrame]) -> Result<f64> {
    let delta = frames[1].timestamp - frames[0].timestamp;
    if !(delta > 0.0) {
        return Err(Error::Contract("frame timestamps must increase".into()));
    }
    for pair in frames.windows(2) {
        let d = pair[1].timestamp - pair[0].timestamp;
        if (d - delta).abs() > 1e-9 * delta.abs().max(1.0) {
            return Err(Error::Contract(format!(
                "frames are not evenly spaced in time ({d} vs {delta})"
            )));
        }
    }
    Ok(delta)
}

/// Runs [`dmw_vector`] at every `stride`-th pixel whose search fits inside the
/// frame, for every frame that has the neighbours the mode requires.
pub fn dmw_field(frames: &[ImageFrame], config: &DmwConfig) -> Result<DmwField> {
    config.validate()?;
    let need = if config.two_sided { 3 } else { 2 };
    if frames.len() < need {
        return Err(Error::Contract(format!(
            "need at least {need} frames, got {}",
            frames.len()
        )));
    }
    let shape = frames[0].grid.shape();
    if let Some(f) = frames.iter().find(|f| f.grid.shape() != shape) {
        return Err(Error::shape(
            "dmw_field",
            format!("frame at t={} is {:?}, expected {:?}", f.timestamp, f.grid.shape(), shape),
        ));
    }
    let spacing = frame_spacing(frames)?;
    let delta = config.delta.unwrap_or(spacing);
    let floor = config.variance_floor.unwrap_or_else(|| default_variance_floor(frames));
    let m = config.margin();
    let sites_along = |n: usize| -> Vec<usize> {
        if n < 2 * m + 1 {
            return Vec::new();
        }
        (m..n - m).step_by(config.stride).collect()
    };
    let (rows, cols) = (sites_along(shape.0), sites_along(shape.1));
    let targets: Vec<usize> = if config.two_sided {
        (1..frames.len() - 1).collect()
    } else {
        (1..frames.len()).collect()
    };
    let mut samples = Vec::new();
    let mut sites = 0;
    let mut skipped = 0;
    for &i in &targets {
        let window: Vec<&ImageFrame> = frames[i - 1..i - 1 + need].iter().collect();
        let px = frames[i].pixel_size;
        for &r in &rows {
            for &c in &cols {
                sites += 1;
                match dmw_vector(&window, [r, c], config, delta, floor)? {
                    Some(est) => samples.push(VelocitySample {
                        t: frames[i].timestamp,
                        x: [r as f64 * px, c as f64 * px],
                        v: est.v,
                    }),
                    None => skipped += 1,
                }
            }
        }
    }
    Ok(DmwField {
        field: VelocityField::new(samples),
        sites,
        skipped,
    })
}

/// Reads a `t,row,col,value` table into frames; each time block must cover
/// the full lattice exactly once.
pub fn parse_frames(source: &str, text: &str, pixel_size: f64) -> Result<Vec<ImageFrame>> {
    let rows = table::parse(source, text, &FRAME_HEADER)?;
    let err = |line: usize, column: Option<usize>, message: String| Error::Parse {
        path: source.to_string(),
        line,
        column,
        message,
    };
    if rows.is_empty() {
        return Err(err(1, None, "no pixels after the header".into()));
    }
    let mut n_rows = 0;
    let mut n_cols = 0;
    for r in &rows {
        for (k, &v) in r.values[1..3].iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(err(r.line, Some(k + 2), format!("invalid pixel index {v}")));
            }
        }
        n_rows = n_rows.max(r.values[1] as usize + 1);
        n_cols = n_cols.max(r.values[2] as usize + 1);
    }
    let mut frames = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let t = rows[start].values[0];
        let mut end = start;
        while end < rows.len() && rows[end].values[0] == t {
            end += 1;
        }
        if end < rows.len() && rows[end].values[0] < t {
            return Err(err(rows[end].line, Some(1), "frames must be in ascending time".into()));
        }
        let mut grid = Matrix::zeros(n_rows, n_cols);
        let mut seen = vec![false; n_rows * n_cols];
        for r in &rows[start..end] {
            let (i, j) = (r.values[1] as usize, r.values[2] as usize);
            if std::mem::replace(&mut seen[i * n_cols + j], true) {
                return Err(err(r.line, None, format!("pixel ({i}, {j}) repeated at t={t}")));
            }
            grid[(i, j)] = r.values[3];
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(err(
                rows[end - 1].line,
                None,
                format!("frame at t={t} is missing pixel ({}, {})", k / n_cols, k % n_cols),
            ));
        }
        frames.push(ImageFrame::new(grid, pixel_size, t)?);
        start = end;
    }
    Ok(frames)
}

pub fn read_frames(path: &Path, pixel_size: f64) -> Result<Vec<ImageFrame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_frames(&path.display().to_string(), &text, pixel_size)
}

pub fn render_frames(frames: &[ImageFrame]) -> String {
    let mut rows = Vec::new();
    for f in frames {
        for r in 0..f.rows() {
            for c in 0..f.cols() {
                rows.push([f.timestamp, r as f64, c as f64, f.grid[(r, c)]]);
            }
        }
    }
    table::render(&FRAME_HEADER, rows.iter().map(|r| r.as_slice()))
}
