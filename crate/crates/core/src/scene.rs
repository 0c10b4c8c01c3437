//! Scene grids, depth priors, grid file formats and mismatch scenes.
//!
//! Grid files are plain UTF-8 text: the first line is `width height`, then
//! `height` rows of `width` whitespace-separated decimals. External prior
//! files use the same header followed by `height` rows of `width` pairs
//! `mean_meters sigma_meters`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Peak, SceneTransient, SpadConfig, Tail};

pub const DEFAULT_FLATNESS_SIGMA_BINS: f64 = 10.0;
pub const DEFAULT_FLOOR_WEIGHT: f64 = 0.1;

/// Row-major grid of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> Option<T> {
        (x < self.width && y < self.height).then(|| self.values[y * self.width + x])
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.values[y * self.width + x] = v;
    }
}

/// A flux given once for the whole scene or per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FluxField {
    Scalar(f64),
    Grid(Grid<f64>),
}

impl FluxField {
    fn at(&self, x: usize, y: usize) -> f64 {
        match self {
            FluxField::Scalar(v) => *v,
            FluxField::Grid(g) => g.values[y * g.width + x],
        }
    }

    fn check(&self, name: &str, width: usize, height: usize) -> Result<()> {
        let values: &[f64] = match self {
            FluxField::Scalar(v) => std::slice::from_ref(v),
            FluxField::Grid(g) => {
                if (g.width, g.height) != (width, height) {
                    return Err(Error::invalid(format!(
                        "{name} grid is {}x{}, depth grid is {width}x{height}",
                        g.width, g.height
                    )));
                }
                &g.values
            }
        };
        match values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            Some(v) => Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}"))),
            None => Ok(()),
        }
    }
}

/// Per-pixel depth and fluxes for a raster scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGrid {
    pub width: usize,
    pub height: usize,
    pub num_bins: usize,
    pub depth_bins: Vec<usize>,
    /// Pixels whose metric depth fell outside the period and was clamped.
    pub clamped: Vec<bool>,
    pub ambient_flux: FluxField,
    pub signal_flux: FluxField,
}

impl SceneGrid {
    pub fn new(
        depth_bins: Grid<usize>,
        num_bins: usize,
        ambient_flux: FluxField,
        signal_flux: FluxField,
    ) -> Result<Self> {
        let (w, h) = (depth_bins.width, depth_bins.height);
        if let Some(d) = depth_bins.values.iter().find(|&&d| d >= num_bins) {
            return Err(Error::invalid(format!("depth bin {d} outside [0, {num_bins})")));
        }
        ambient_flux.check("ambient flux", w, h)?;
        signal_flux.check("signal flux", w, h)?;
        Ok(Self {
            width: w,
            height: h,
            num_bins,
            clamped: vec![false; depth_bins.values.len()],
            depth_bins: depth_bins.values,
            ambient_flux,
            signal_flux,
        })
    }

    /// Scene from a metric depth map; out-of-period depths are clamped to
    /// `[0, B−1]` and flagged.
    pub fn from_meters(
        depth_m: &Grid<f64>,
        cfg: &SpadConfig,
        ambient_flux: FluxField,
        signal_flux: FluxField,
    ) -> Result<Self> {
        let b = cfg.num_bins;
        let mut clamped = Vec::with_capacity(depth_m.values.len());
        let bins = depth_m
            .values
            .iter()
            .map(|&z| {
                let (d, c) = depth_to_bin_clamped(z, cfg);
                clamped.push(c);
                d
            })
            .collect();
        let mut grid = Self::new(Grid::new(depth_m.width, depth_m.height, bins)?, b, ambient_flux, signal_flux)?;
        grid.clamped = clamped;
        Ok(grid)
    }

    pub fn depth_bin(&self, x: usize, y: usize) -> Result<usize> {
        self.check_bounds(x, y)?;
        Ok(self.depth_bins[y * self.width + x])
    }

    pub fn ambient_at(&self, x: usize, y: usize) -> f64 {
        self.ambient_flux.at(x, y)
    }

    pub fn signal_at(&self, x: usize, y: usize) -> f64 {
        self.signal_flux.at(x, y)
    }

    fn check_bounds(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::invalid(format!(
                "pixel ({x}, {y}) outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// `d = floor(2z/(cΔ))` clamped into the period, with a flag when clamped.
pub fn depth_to_bin_clamped(z: f64, cfg: &SpadConfig) -> (usize, bool) {
    let max = cfg.num_bins as i64 - 1;
    if !z.is_finite() {
        return (0, true);
    }
    let d = cfg.meters_to_bin(z);
    if d < 0 {
        (0, true)
    } else if d > max {
        (max as usize, true)
    } else {
        (d as usize, false)
    }
}

/// Single-peak transient for one pixel; zero-signal pixels are pure ambient.
pub fn pixel_transient(grid: &SceneGrid, x: usize, y: usize) -> Result<SceneTransient> {
    let d = grid.depth_bin(x, y)?;
    let (bkg, sig) = (grid.ambient_at(x, y), grid.signal_at(x, y));
    if sig == 0.0 {
        SceneTransient::ambient_only(grid.num_bins, bkg)
    } else {
        SceneTransient::single_peak(grid.num_bins, bkg, d, sig)
    }
}

/// Pixel visiting order: row 0 left to right, row 1 right to left, and so on.
pub fn serpentine_order(width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(width * height);
    for y in 0..height {
        if y % 2 == 0 {
            order.extend((0..width).map(|x| (x, y)));
        } else {
            order.extend((0..width).rev().map(|x| (x, y)));
        }
    }
    order
}

/// Discretized Gaussian mixed with a uniform floor:
///
/// `p(i) = (1 − w)·φ(i) / Σ_j φ(j) + w / B`, with `φ(i) = exp(−(i − μ)² / 2σ²)`.
///
/// When every `φ(i)` underflows (mean far outside the period) the Gaussian
/// part collapses onto the nearest bin.
pub fn gaussian_prior(mean_bin: f64, sigma_bins: f64, floor_weight: f64, num_bins: usize) -> Result<Vec<f64>> {
    check_prior_params(sigma_bins, floor_weight)?;
    if num_bins == 0 || !mean_bin.is_finite() {
        return Err(Error::invalid("gaussian prior needs bins and a finite mean"));
    }
    let mut phi: Vec<f64> = (0..num_bins)
        .map(|i| {
            let z = (i as f64 - mean_bin) / sigma_bins;
            (-0.5 * z * z).exp()
        })
        .collect();
    let mut total: f64 = phi.iter().sum();
    if !(total > 0.0) {
        let nearest = mean_bin.round().clamp(0.0, (num_bins - 1) as f64) as usize;
        phi[nearest] = 1.0;
        total = 1.0;
    }
    let floor = floor_weight / num_bins as f64;
    Ok(phi.iter().map(|p| (1.0 - floor_weight) * p / total + floor).collect())
}

fn check_prior_params(sigma_bins: f64, floor_weight: f64) -> Result<()> {
    if !(sigma_bins > 0.0 && sigma_bins.is_finite()) {
        return Err(Error::invalid(format!("prior sigma must be positive, got {sigma_bins}")));
    }
    if !(0.0..=1.0).contains(&floor_weight) {
        return Err(Error::invalid(format!("floor weight must lie in [0, 1], got {floor_weight}")));
    }
    Ok(())
}

/// Prior for the next pixel of a scan, centered on the previous pixel's
/// estimate; uniform for the first pixel.
pub fn flatness_prior(prev_depth: Option<usize>, sigma_bins: f64, floor_weight: f64, num_bins: usize) -> Result<Vec<f64>> {
    match prev_depth {
        None => {
            check_prior_params(sigma_bins, floor_weight)?;
            Ok(vec![1.0 / num_bins as f64; num_bins])
        }
        Some(d) => gaussian_prior(d as f64, sigma_bins, floor_weight, num_bins),
    }
}

/// How each pixel's depth prior is built.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    #[default]
    Uniform,
    Flatness { sigma_bins: f64, floor_weight: f64 },
    External { path: PathBuf, floor_weight: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::Uniform => Ok(()),
            PriorSpec::Flatness {
                sigma_bins,
                floor_weight,
            } => check_prior_params(*sigma_bins, *floor_weight),
            PriorSpec::External { floor_weight, .. } => check_prior_params(1.0, *floor_weight),
        }
    }
}

/// Per-pixel Gaussian depth priors, in bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalPrior {
    pub width: usize,
    pub height: usize,
    pub mean_bins: Vec<f64>,
    pub sigma_bins: Vec<f64>,
}

impl ExternalPrior {
    pub fn prior_at(&self, x: usize, y: usize, floor_weight: f64, num_bins: usize) -> Result<Vec<f64>> {
        if x >= self.width || y >= self.height {
            return Err(Error::invalid(format!("pixel ({x}, {y}) outside the prior grid")));
        }
        let i = y * self.width + x;
        gaussian_prior(self.mean_bins[i], self.sigma_bins[i], floor_weight, num_bins)
    }
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Parses the `width height` header plus rows of `width·per_pixel` numbers.
/// Columns in errors count whitespace-separated fields from 1.
fn parse_rows(path: &Path, text: &str, per_pixel: usize) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, 1, "missing 'width height' header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_error(path, hline + 1, 1, "header must be 'width height'"));
    }
    let parse_dim = |col: usize| {
        dims[col]
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| parse_error(path, hline + 1, col + 1, format!("invalid dimension '{}'", dims[col])))
    };
    let (width, height) = (parse_dim(0)?, parse_dim(1)?);
    let mut values = Vec::with_capacity(width * height * per_pixel);
    let mut rows = 0;
    for (lineno, line) in lines {
        if rows == height {
            return Err(parse_error(path, lineno + 1, 1, format!("more than {height} rows")));
        }
        let mut count = 0;
        for (col, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_error(path, lineno + 1, col + 1, format!("invalid number '{tok}'")))?;
            values.push(v);
            count += 1;
        }
        if count != width * per_pixel {
            return Err(parse_error(
                path,
                lineno + 1,
                count.min(width * per_pixel) + 1,
                format!("expected {} values, found {count}", width * per_pixel),
            ));
        }
        rows += 1;
    }
    if rows != height {
        return Err(parse_error(
            path,
            text.lines().count() + 1,
            1,
            format!("expected {height} rows, found {rows}"),
        ));
    }
    Ok((width, height, values))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a depth or flux grid file.
pub fn read_grid_file(path: &Path) -> Result<Grid<f64>> {
    let (w, h, values) = parse_rows(path, &read_text(path)?, 1)?;
    Grid::new(w, h, values)
}

/// Reads a flux grid file, rejecting negative entries.
pub fn read_flux_file(path: &Path) -> Result<Grid<f64>> {
    let grid = read_grid_file(path)?;
    if let Some(i) = grid.values.iter().position(|v| *v < 0.0) {
        let (x, y) = (i % grid.width, i / grid.width);
        return Err(parse_error(path, y + 2, x + 1, format!("negative flux at pixel ({x}, {y})")));
    }
    Ok(grid)
}

/// Writes a grid file. Values are written with Rust's shortest round-trip
/// formatting, so a read-back is bit-exact.
pub fn write_grid_file(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let mut out = format!("{} {}\n", grid.width, grid.height);
    for row in grid.values.chunks(grid.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads per-pixel `mean sigma` pairs in meters and converts them to bins.
/// When `expected` dimensions are given they must match the file.
pub fn load_external_prior(path: &Path, cfg: &SpadConfig, expected: Option<(usize, usize)>) -> Result<ExternalPrior> {
    let (width, height, values) = parse_rows(path, &read_text(path)?, 2)?;
    if let Some((ew, eh)) = expected {
        if (ew, eh) != (width, height) {
            return Err(parse_error(
                path,
                1,
                1,
                format!("prior grid is {width}x{height}, scan grid is {ew}x{eh}"),
            ));
        }
    }
    let bin_m = cfg.bin_depth_m();
    let mut mean_bins = Vec::with_capacity(width * height);
    let mut sigma_bins = Vec::with_capacity(width * height);
    for (i, pair) in values.chunks(2).enumerate() {
        let (x, y) = (i % width, i / width);
        if !(pair[1] > 0.0) {
            return Err(parse_error(
                path,
                y + 2,
                2 * x + 2,
                format!("sigma at pixel ({x}, {y}) must be positive, got {}", pair[1]),
            ));
        }
        mean_bins.push(pair[0] / bin_m);
        sigma_bins.push(pair[1] / bin_m);
    }
    Ok(ExternalPrior {
        width,
        height,
        mean_bins,
        sigma_bins,
    })
}

/// Writes per-pixel `mean sigma` pairs in meters.
pub fn write_external_prior(path: &Path, width: usize, height: usize, pairs_m: &[(f64, f64)]) -> Result<()> {
    if pairs_m.len() != width * height {
        return Err(Error::invalid("prior pair count does not match dimensions"));
    }
    let mut out = format!("{width} {height}\n");
    for row in pairs_m.chunks(width) {
        let mut line = String::new();
        for (i, (m, s)) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{m:?} {s:?}");
        }
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Transients that break the single-peak assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MismatchKind {
    TwoPeak {
        d1: usize,
        flux1: f64,
        d2: usize,
        flux2: f64,
    },
    /// Peak plus `amp·e^{−decay·(i−d)}` for `i > d`.
    CornerTail {
        d: usize,
        signal_flux: f64,
        amp: f64,
        decay: f64,
    },
}

pub fn mismatch_transient(kind: MismatchKind, ambient_flux: f64, num_bins: usize) -> Result<SceneTransient> {
    match kind {
        MismatchKind::TwoPeak { d1, flux1, d2, flux2 } => {
            let peaks: Vec<Peak> = [(d1, flux1), (d2, flux2)]
                .into_iter()
                .filter(|&(_, f)| f != 0.0)
                .map(|(bin, signal_flux)| Peak { bin, signal_flux })
                .collect();
            for (d, f) in [(d1, flux1), (d2, flux2)] {
                if d >= num_bins || !(f >= 0.0 && f.is_finite()) {
                    return Err(Error::invalid(format!("invalid peak ({d}, {f})")));
                }
            }
            if peaks.len() == 1 {
                return SceneTransient::single_peak(num_bins, ambient_flux, peaks[0].bin, peaks[0].signal_flux);
            }
            SceneTransient::parametric(num_bins, ambient_flux, peaks, None)
        }
        MismatchKind::CornerTail {
            d,
            signal_flux,
            amp,
            decay,
        } => {
            let tail = (amp != 0.0).then_some(Tail {
                start: d,
                amplitude: amp,
                decay,
            });
            SceneTransient::parametric(
                num_bins,
                ambient_flux,
                vec![Peak { bin: d, signal_flux }],
                tail,
            )
        }
    }
}
