//! Paraxial scalar propagation operators and their composition into optical
//! systems.
//!
//! Constant phase factors (`exp(ikz)`, the `1/i` of Fresnel kernels) are
//! dropped throughout: only intensities and intensity correlations are ever
//! observed. Operators that change the pitch rescale amplitudes so that
//! `total_energy` is conserved.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field_grid::{fft2_centered, ComplexField, Direction, GridSpec};

/// Largest input or output grid for which `impulse_response` builds a matrix.
pub const DENSE_LIMIT: usize = 64 * 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PropagationMethod {
    /// Transfer function below the critical distance, single transform above.
    #[default]
    Auto,
    /// Angular-spectrum transfer function on the input grid. Valid for
    /// `z <= n * pitch^2 / lambda` (smaller axis).
    TransferFunction,
    /// One scaled DFT; output pitch `lambda z / (n pitch)`. Valid for
    /// `z >= n * pitch^2 / lambda` on square grids.
    SingleFft,
}

/// `n * pitch^2 / lambda` using the smaller axis.
pub fn critical_distance(grid: &GridSpec, lambda: f64) -> f64 {
    grid.nx().min(grid.ny()) as f64 * grid.pitch() * grid.pitch() / lambda
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::config("lambda_um", format!("must be > 0, got {lambda}")))
    }
}

fn choose_method(grid: &GridSpec, z: f64, lambda: f64, method: PropagationMethod) -> Result<PropagationMethod> {
    let zc = critical_distance(grid, lambda);
    // A relative slack keeps exactly-critical configurations usable by both.
    let slack = 1e-9 * zc;
    match method {
        PropagationMethod::Auto => Ok(if z <= zc + slack || !grid.is_square() {
            PropagationMethod::TransferFunction
        } else {
            PropagationMethod::SingleFft
        }),
        PropagationMethod::TransferFunction => Ok(method),
        PropagationMethod::SingleFft => {
            if !grid.is_square() {
                return Err(Error::sampling(
                    "grid",
                    "single-transform propagation needs a square grid",
                    "use a square grid or the transfer-function method",
                ));
            }
            Ok(method)
        }
    }
    .and_then(|m| {
        match m {
            PropagationMethod::TransferFunction if z > zc + slack => Err(Error::sampling(
                "z_um",
                format!("transfer-function propagation over {z} um exceeds the critical distance {zc:.1} um"),
                "increase the grid size or pitch, or use the single-transform method",
            )),
            PropagationMethod::SingleFft if z < zc - slack => Err(Error::sampling(
                "z_um",
                format!("single-transform propagation over {z} um is below the critical distance {zc:.1} um"),
                "use the transfer-function method",
            )),
            _ => Ok(m),
        }
    })
}

/// Paraxial propagation by `z` with the method picked automatically.
pub fn fresnel_propagate(field: &ComplexField, z: f64, lambda: f64) -> Result<ComplexField> {
    fresnel_propagate_with(field, z, lambda, PropagationMethod::Auto)
}

pub fn fresnel_propagate_with(
    field: &ComplexField,
    z: f64,
    lambda: f64,
    method: PropagationMethod,
) -> Result<ComplexField> {
    check_lambda(lambda)?;
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::config("z_um", format!("must be >= 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(field.clone());
    }
    let grid = *field.grid();
    match choose_method(&grid, z, lambda, method)? {
        PropagationMethod::SingleFft => Ok(single_fft(field, z, lambda)),
        _ => Ok(transfer_function(field, z, lambda)),
    }
}

fn transfer_function(field: &ComplexField, z: f64, lambda: f64) -> ComplexField {
    let grid = *field.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut buf = field.values().to_vec();
    fft2_centered(&mut buf, nx, ny, Direction::Forward);
    for j in 0..ny {
        let fy = grid.fy(j);
        for i in 0..nx {
            let fx = grid.fx(i);
            buf[grid.index(i, j)] *= Complex64::from_polar(1.0, -PI * lambda * z * (fx * fx + fy * fy));
        }
    }
    fft2_centered(&mut buf, nx, ny, Direction::Inverse);
    ComplexField::from_parts(grid, buf)
}

fn single_fft(field: &ComplexField, z: f64, lambda: f64) -> ComplexField {
    let grid = *field.grid();
    let n = grid.nx();
    let p = grid.pitch();
    let p_out = lambda * z / (n as f64 * p);
    let out_grid = GridSpec::square(n, p_out).expect("positive pitch");
    let chirp = |g: &GridSpec, i: usize, j: usize| {
        let (x, y) = (g.x(i), g.y(j));
        Complex64::from_polar(1.0, PI * (x * x + y * y) / (lambda * z))
    };
    let mut buf = field.values().to_vec();
    for j in 0..n {
        for i in 0..n {
            buf[grid.index(i, j)] *= chirp(&grid, i, j);
        }
    }
    fft2_centered(&mut buf, n, n, Direction::Forward);
    let scale = p / p_out;
    for j in 0..n {
        for i in 0..n {
            buf[out_grid.index(i, j)] *= chirp(&out_grid, i, j) * scale;
        }
    }
    ComplexField::from_parts(out_grid, buf)
}

/// Thin lens: multiplies by `exp(-i pi r^2 / (lambda f))`.
pub fn apply_lens(field: &ComplexField, f: f64, lambda: f64) -> Result<ComplexField> {
    check_lambda(lambda)?;
    if !(f.is_finite() && f != 0.0) {
        return Err(Error::config("focal_um", format!("must be finite and nonzero, got {f}")));
    }
    let grid = *field.grid();
    let mut out = field.clone();
    for (idx, v) in out.values_mut().iter_mut().enumerate() {
        let (i, j) = grid.coords_of(idx);
        let (x, y) = (grid.x(i), grid.y(j));
        *v *= Complex64::from_polar(1.0, -PI * (x * x + y * y) / (lambda * f));
    }
    Ok(out)
}

/// Centered zero-padding (or cropping) to `nx x ny` at the same pitch.
pub fn window(field: &ComplexField, nx: usize, ny: usize) -> Result<ComplexField> {
    let grid = *field.grid();
    let out_grid = GridSpec::new(nx, ny, grid.pitch())?;
    let mut out = ComplexField::zeros(out_grid);
    let vals = out.values_mut();
    for j in 0..ny {
        // Same physical y in both grids.
        let sj = j as isize - out_grid.cy() as isize + grid.cy() as isize;
        if sj < 0 || sj >= grid.ny() as isize {
            continue;
        }
        for i in 0..nx {
            let si = i as isize - out_grid.cx() as isize + grid.cx() as isize;
            if si < 0 || si >= grid.nx() as isize {
                continue;
            }
            vals[out_grid.index(i, j)] = field.get(si as usize, sj as usize);
        }
    }
    Ok(out)
}

/// Front-to-back focal-plane transform of a lens of focal length `f`.
///
/// With the input zero-padded to `N = padding * n`, output sample `k` sits at
/// `x = (k - N/2) * lambda f / (N pitch)`, i.e. spatial frequency
/// `q = 2 pi x / (lambda f)`. Applying it twice returns the point-inverted
/// input exactly.
pub fn two_f_system(field: &ComplexField, f: f64, lambda: f64, padding: usize) -> Result<ComplexField> {
    check_lambda(lambda)?;
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::config("focal_um", format!("must be > 0, got {f}")));
    }
    if padding == 0 {
        return Err(Error::config("padding", "must be >= 1"));
    }
    let grid = *field.grid();
    if !grid.is_square() {
        return Err(Error::GridMismatch("Fourier-lens transform needs a square grid".into()));
    }
    let padded = if padding == 1 {
        field.clone()
    } else {
        window(field, grid.nx() * padding, grid.ny() * padding)?
    };
    let n = padded.grid().nx();
    let p = grid.pitch();
    let p_out = lambda * f / (n as f64 * p);
    let mut buf = padded.into_values();
    fft2_centered(&mut buf, n, n, Direction::Forward);
    let scale = p / p_out;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(ComplexField::from_parts(GridSpec::square(n, p_out)?, buf))
}

/// Ideal inverting imager of magnification `m` onto its natural grid (same
/// sample count, pitch divided by `m`): `out(x) = m * in(-m x)` exactly, no
/// interpolation. The factor `m` conserves `total_energy` in two dimensions.
pub fn imaging_system(field: &ComplexField, m: f64) -> Result<ComplexField> {
    check_magnification(m)?;
    let grid = *field.grid();
    let out_grid = grid.with_pitch(grid.pitch() / m)?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let (cx, cy) = (grid.cx(), grid.cy());
    let mut buf = Vec::with_capacity(grid.len());
    for j in 0..ny {
        let sj = (2 * cy + ny - j) % ny;
        for i in 0..nx {
            let si = (2 * cx + nx - i) % nx;
            buf.push(field.get(si, sj) * m);
        }
    }
    Ok(ComplexField::from_parts(out_grid, buf))
}

/// Inverting imager resampled onto an arbitrary detector grid by bilinear
/// interpolation. Fails when the detector window reaches outside the input.
pub fn imaging_system_onto(field: &ComplexField, m: f64, out_grid: &GridSpec) -> Result<ComplexField> {
    check_magnification(m)?;
    let grid = *field.grid();
    let p = grid.pitch();
    let reach_x = m * out_grid.x(0).abs().max(out_grid.x(out_grid.nx() - 1).abs());
    let reach_y = m * out_grid.y(0).abs().max(out_grid.y(out_grid.ny() - 1).abs());
    let lim_x = (grid.cx().min(grid.nx() - 1 - grid.cx())) as f64 * p;
    let lim_y = (grid.cy().min(grid.ny() - 1 - grid.cy())) as f64 * p;
    if reach_x > lim_x + 1e-9 * p || reach_y > lim_y + 1e-9 * p {
        return Err(Error::GridMismatch(format!(
            "detector window maps to +-({reach_x:.1}, {reach_y:.1}) um but the input only covers +-({lim_x:.1}, {lim_y:.1}) um"
        )));
    }
    let mut buf = Vec::with_capacity(out_grid.len());
    for j in 0..out_grid.ny() {
        let v = -m * out_grid.y(j) / p + grid.cy() as f64;
        for i in 0..out_grid.nx() {
            let u = -m * out_grid.x(i) / p + grid.cx() as f64;
            buf.push(bilinear(field, u, v) * m);
        }
    }
    Ok(ComplexField::from_parts(*out_grid, buf))
}

fn bilinear(field: &ComplexField, u: f64, v: f64) -> Complex64 {
    let g = field.grid();
    let i0 = (u.floor() as usize).min(g.nx() - 2);
    let j0 = (v.floor() as usize).min(g.ny() - 2);
    let (fu, fv) = (u - i0 as f64, v - j0 as f64);
    let a = field.get(i0, j0) * (1.0 - fu) + field.get(i0 + 1, j0) * fu;
    let b = field.get(i0, j0 + 1) * (1.0 - fu) + field.get(i0 + 1, j0 + 1) * fu;
    a * (1.0 - fv) + b * fv
}

fn check_magnification(m: f64) -> Result<()> {
    if m.is_finite() && m > 0.0 {
        Ok(())
    } else {
        Err(Error::config("magnification", format!("must be > 0, got {m}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApertureShape {
    /// Size is the diameter.
    Circle,
    /// Size is the side length.
    Square,
    /// Size is the width along x; unbounded along y.
    Slit,
}

impl ApertureShape {
    fn contains(&self, size: f64, x: f64, y: f64) -> bool {
        let h = 0.5 * size;
        match self {
            ApertureShape::Circle => x * x + y * y <= h * h,
            ApertureShape::Square => x.abs() <= h && y.abs() <= h,
            ApertureShape::Slit => x.abs() <= h,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpticalElement {
    FreeSpace { z: f64, method: PropagationMethod },
    ThinLens { f: f64 },
    Aperture { shape: ApertureShape, size: f64 },
    /// Ideal conjugate-plane imaging, inverting, onto the grid with pitch
    /// divided by `m`.
    MagnifyingImager { m: f64 },
    /// Focal-plane transform of a lens of focal length `f` (input one focal
    /// length in front), with optional zero-padding factor.
    FourierLens { f: f64, padding: usize },
    /// Centered crop or zero-pad to `nx x ny` samples.
    Window { nx: usize, ny: usize },
    /// Pixel-wise complex transmission defined on a fixed grid.
    Transmission(Arc<ComplexField>),
}

impl OpticalElement {
    pub fn free_space(z: f64) -> Self {
        OpticalElement::FreeSpace {
            z,
            method: PropagationMethod::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: f64, rule: &str| Err(Error::config(field, format!("{rule}, got {v}")));
        match self {
            OpticalElement::FreeSpace { z, .. } if !(z.is_finite() && *z >= 0.0) => bad("z_um", *z, "must be >= 0"),
            OpticalElement::ThinLens { f } if !(f.is_finite() && *f != 0.0) => bad("focal_um", *f, "must be nonzero"),
            OpticalElement::Aperture { size, .. } if !(size.is_finite() && *size > 0.0) => {
                bad("aperture_um", *size, "must be > 0")
            }
            OpticalElement::MagnifyingImager { m } if !(m.is_finite() && *m > 0.0) => {
                bad("magnification", *m, "must be > 0")
            }
            OpticalElement::FourierLens { f, .. } if !(f.is_finite() && *f > 0.0) => bad("focal_um", *f, "must be > 0"),
            OpticalElement::FourierLens { padding: 0, .. } => Err(Error::config("padding", "must be >= 1")),
            OpticalElement::Window { nx, ny } if *nx < 2 || *ny < 2 => {
                Err(Error::config("window", format!("need at least 2x2, got {nx}x{ny}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_lossless(&self) -> bool {
        matches!(
            self,
            OpticalElement::FreeSpace { .. }
                | OpticalElement::ThinLens { .. }
                | OpticalElement::MagnifyingImager { .. }
                | OpticalElement::FourierLens { .. }
        )
    }

    pub fn output_grid(&self, input: &GridSpec, lambda: f64) -> Result<GridSpec> {
        self.validate()?;
        match self {
            OpticalElement::FreeSpace { z, method } => {
                if *z == 0.0 {
                    return Ok(*input);
                }
                match choose_method(input, *z, lambda, *method)? {
                    PropagationMethod::SingleFft => {
                        GridSpec::square(input.nx(), lambda * z / (input.nx() as f64 * input.pitch()))
                    }
                    _ => Ok(*input),
                }
            }
            OpticalElement::ThinLens { .. } | OpticalElement::Aperture { .. } => Ok(*input),
            OpticalElement::MagnifyingImager { m } => input.with_pitch(input.pitch() / m),
            OpticalElement::FourierLens { f, padding } => {
                let n = input.nx() * padding;
                GridSpec::square(n, lambda * f / (n as f64 * input.pitch()))
            }
            OpticalElement::Window { nx, ny } => GridSpec::new(*nx, *ny, input.pitch()),
            OpticalElement::Transmission(mask) => {
                mask.grid().ensure_same(input, "transmission mask")?;
                Ok(*input)
            }
        }
    }

    pub fn apply(&self, field: &ComplexField, lambda: f64) -> Result<ComplexField> {
        self.validate()?;
        match self {
            OpticalElement::FreeSpace { z, method } => fresnel_propagate_with(field, *z, lambda, *method),
            OpticalElement::ThinLens { f } => apply_lens(field, *f, lambda),
            OpticalElement::Aperture { shape, size } => {
                let grid = *field.grid();
                let mut out = field.clone();
                for (idx, v) in out.values_mut().iter_mut().enumerate() {
                    let (i, j) = grid.coords_of(idx);
                    if !shape.contains(*size, grid.x(i), grid.y(j)) {
                        *v = Complex64::new(0.0, 0.0);
                    }
                }
                Ok(out)
            }
            OpticalElement::MagnifyingImager { m } => imaging_system(field, *m),
            OpticalElement::FourierLens { f, padding } => two_f_system(field, *f, lambda, *padding),
            OpticalElement::Window { nx, ny } => window(field, *nx, *ny),
            OpticalElement::Transmission(mask) => {
                mask.grid().ensure_same(field.grid(), "transmission mask")?;
                let mut out = field.clone();
                out.values_mut()
                    .iter_mut()
                    .zip(mask.values())
                    .for_each(|(v, t)| *v *= t);
                Ok(out)
            }
        }
    }
}

/// An ordered chain of elements acting on fields sampled on `input`.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticalSystem {
    input: GridSpec,
    elements: Vec<OpticalElement>,
}

impl OpticalSystem {
    pub fn new(input: GridSpec, elements: Vec<OpticalElement>) -> Result<Self> {
        for e in &elements {
            e.validate()?;
        }
        Ok(OpticalSystem { input, elements })
    }

    pub fn identity(input: GridSpec) -> Self {
        OpticalSystem {
            input,
            elements: Vec::new(),
        }
    }

    pub fn input_grid(&self) -> &GridSpec {
        &self.input
    }

    pub fn elements(&self) -> &[OpticalElement] {
        &self.elements
    }

    pub fn push(mut self, element: OpticalElement) -> Result<Self> {
        element.validate()?;
        self.elements.push(element);
        Ok(self)
    }

    /// `self` followed by `next`; `next` must accept this system's output.
    pub fn then(mut self, next: &OpticalSystem, lambda: f64) -> Result<Self> {
        self.output_grid(lambda)?
            .ensure_same(&next.input, "system composition")?;
        self.elements.extend(next.elements.iter().cloned());
        Ok(self)
    }

    pub fn output_grid(&self, lambda: f64) -> Result<GridSpec> {
        check_lambda(lambda)?;
        let mut g = self.input;
        for e in &self.elements {
            g = e.output_grid(&g, lambda)?;
        }
        Ok(g)
    }

    pub fn apply(&self, field: &ComplexField, lambda: f64) -> Result<ComplexField> {
        check_lambda(lambda)?;
        field.grid().ensure_same(&self.input, "system input")?;
        let mut cur = field.clone();
        for e in &self.elements {
            cur = e.apply(&cur, lambda)?;
        }
        Ok(cur)
    }
}

/// Dense kernel `h(x_out, x_in)`: column `j` is the response to a unit
/// sample at input pixel `j`.
pub fn impulse_response(system: &OpticalSystem, lambda: f64) -> Result<DMatrix<Complex64>> {
    let input = *system.input_grid();
    let output = system.output_grid(lambda)?;
    for g in [input, output] {
        if g.len() > DENSE_LIMIT {
            return Err(Error::GridTooLarge {
                pixels: g.len(),
                limit: DENSE_LIMIT,
            });
        }
    }
    let mut h = DMatrix::<Complex64>::zeros(output.len(), input.len());
    let mut delta = ComplexField::zeros(input);
    for j in 0..input.len() {
        delta.values_mut()[j] = Complex64::new(1.0, 0.0);
        let resp = system.apply(&delta, lambda)?;
        for (i, v) in resp.values().iter().enumerate() {
            h[(i, j)] = *v;
        }
        delta.values_mut()[j] = Complex64::new(0.0, 0.0);
    }
    Ok(h)
}
