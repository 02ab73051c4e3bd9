//! Uniformly sampled 2-D fields and the centered unitary DFT.
//!
//! Sample `(i, j)` of a grid sits at the physical coordinate
//! `((i - nx/2) * pitch, (j - ny/2) * pitch)` (integer division), so the
//! optical axis is always on a pixel. Storage is row-major with `j` (y) as
//! the slow index.
//!
//! The DFT here is normalized by `1/sqrt(nx*ny)` in both directions, which
//! makes it unitary: `sum |in|^2 == sum |out|^2` with no pitch factors. Any
//! physical rescaling belongs to the propagation operators in `optics`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    pitch: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, pitch_um: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::config(
                "grid",
                format!("need at least 2x2 pixels, got {nx}x{ny}"),
            ));
        }
        if !(pitch_um.is_finite() && pitch_um > 0.0) {
            return Err(Error::config("pitch_um", format!("must be > 0, got {pitch_um}")));
        }
        Ok(GridSpec {
            nx,
            ny,
            pitch: pitch_um,
        })
    }

    pub fn square(n: usize, pitch_um: f64) -> Result<Self> {
        Self::new(n, n, pitch_um)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Pixel pitch in micrometres.
    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_square(&self) -> bool {
        self.nx == self.ny
    }

    pub fn cx(&self) -> usize {
        self.nx / 2
    }

    pub fn cy(&self) -> usize {
        self.ny / 2
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords_of(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - self.cx() as f64) * self.pitch
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - self.cy() as f64) * self.pitch
    }

    pub fn extent_x(&self) -> f64 {
        self.nx as f64 * self.pitch
    }

    pub fn extent_y(&self) -> f64 {
        self.ny as f64 * self.pitch
    }

    /// Spatial-frequency spacing (cycles/um) along x.
    pub fn freq_pitch_x(&self) -> f64 {
        1.0 / self.extent_x()
    }

    pub fn freq_pitch_y(&self) -> f64 {
        1.0 / self.extent_y()
    }

    /// Frequency (cycles/um) of centered DFT bin `k` along x.
    pub fn fx(&self, k: usize) -> f64 {
        (k as f64 - self.cx() as f64) * self.freq_pitch_x()
    }

    pub fn fy(&self, k: usize) -> f64 {
        (k as f64 - self.cy() as f64) * self.freq_pitch_y()
    }

    pub fn with_pitch(&self, pitch_um: f64) -> Result<Self> {
        Self::new(self.nx, self.ny, pitch_um)
    }

    pub fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        let same_shape = self.nx == other.nx && self.ny == other.ny;
        let same_pitch = (self.pitch - other.pitch).abs() <= 1e-12 * self.pitch.max(other.pitch);
        if same_shape && same_pitch {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}x{} @ {} um vs {}x{} @ {} um",
                self.nx, self.ny, self.pitch, other.nx, other.ny, other.pitch
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "field has {} values for a {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("complex field".into()));
        }
        Ok(ComplexField { grid, values })
    }

    /// Construction for values known to be valid (internal operator outputs).
    pub(crate) fn from_parts(grid: GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ComplexField { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn constant(grid: GridSpec, value: Complex64) -> Self {
        ComplexField {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Builds a field from a function of physical coordinates (um).
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> Complex64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            let y = grid.y(j);
            for i in 0..grid.nx() {
                values.push(f(grid.x(i), y));
            }
        }
        ComplexField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn scaled(mut self, factor: Complex64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn intensity(&self) -> IntensityFrame {
        intensity(self)
    }

    pub fn total_energy(&self) -> f64 {
        total_energy(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityFrame {
    grid: GridSpec,
    values: Vec<f64>,
}

impl IntensityFrame {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "intensity frame has {} values for {} pixels",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("intensity", "values must be finite and >= 0"));
        }
        Ok(IntensityFrame { grid, values })
    }

    pub(crate) fn from_parts(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        IntensityFrame { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }
}

/// Pixel-wise `|value|^2`.
pub fn intensity(field: &ComplexField) -> IntensityFrame {
    IntensityFrame {
        grid: field.grid,
        values: field.values.iter().map(|v| v.norm_sqr()).collect(),
    }
}

/// `sum |value|^2 * pitch^2`, i.e. the discretized integral of intensity.
///
/// Operators that change the pitch (Fourier lenses, imagers) rescale
/// amplitudes so this quantity, not the bare sum, is what they conserve.
pub fn total_energy(field: &ComplexField) -> f64 {
    let p = field.grid.pitch;
    field.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * p * p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Centered, unitary 2-D DFT. The grid (including pitch) is carried over
/// unchanged; interpreting the output as a frequency-domain sampling is the
/// caller's business.
pub fn dft_unitary(field: &ComplexField, direction: Direction) -> ComplexField {
    let mut values = field.values.clone();
    fft2_centered(&mut values, field.grid.nx, field.grid.ny, direction);
    ComplexField {
        grid: field.grid,
        values,
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: Direction) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match direction {
            Direction::Forward => p.plan_fft_forward(n),
            Direction::Inverse => p.plan_fft_inverse(n),
        }
    })
}

/// In-place centered unitary 2-D DFT on a row-major `nx * ny` buffer.
///
/// Centered means sample index `c = n/2` is the origin in both domains:
/// `X[k] = n^-1/2 * sum_j x[j] exp(-+2 pi i (j - c)(k - c) / n)` per axis.
pub(crate) fn fft2_centered(values: &mut [Complex64], nx: usize, ny: usize, direction: Direction) {
    assert_eq!(values.len(), nx * ny);
    let (cx, cy) = (nx / 2, ny / 2);

    // Move the origin sample to index 0.
    for row in values.chunks_exact_mut(nx) {
        row.rotate_left(cx);
    }
    values.rotate_left(cy * nx);

    let fx = plan(nx, direction);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fx.get_inplace_scratch_len()];
    for row in values.chunks_exact_mut(nx) {
        fx.process_with_scratch(row, &mut scratch);
    }

    let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
    transpose(values, &mut t, nx, ny);
    let fy = plan(ny, direction);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fy.get_inplace_scratch_len()];
    for col in t.chunks_exact_mut(ny) {
        fy.process_with_scratch(col, &mut scratch);
    }
    transpose(&t, values, ny, nx);

    let norm = 1.0 / ((nx * ny) as f64).sqrt();
    for row in values.chunks_exact_mut(nx) {
        row.iter_mut().for_each(|v| *v *= norm);
        row.rotate_right(cx);
    }
    values.rotate_right(cy * nx);
}

/// `dst[i][j] = src[j][i]` for a `rows x cols` source in row-major order.
fn transpose(src: &[Complex64], dst: &mut [Complex64], cols: usize, rows: usize) {
    const BLOCK: usize = 32;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
