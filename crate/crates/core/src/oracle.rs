//! Dense reference evaluation of the two-arm correlation kernel
//! `G(x1, x2) = |tr|^2 |sum h1*(x1, a) h2(x2, b) Gamma(a, b)|^2`
//! and closed-form diffraction patterns of the analytic masks.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bench::{MaskKind, ObjectMask};
use crate::error::{Error, Result};
use crate::field_grid::GridSpec;
use crate::linalg::mul;
use crate::speckle_source::{CorrelationMap, FULL_MATRIX_LIMIT};

/// Relative Hermiticity tolerance accepted for `Gamma`.
const HERMITIAN_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct OracleProblem {
    gamma: DMatrix<Complex64>,
    h1: DMatrix<Complex64>,
    h2: DMatrix<Complex64>,
    bs_factor: f64,
}

impl OracleProblem {
    /// `h1` and `h2` map the common source grid (columns) to each detector
    /// (rows); `bs_factor` is `|tr|^2`.
    ///
    /// Hermiticity of `Gamma` is checked; positive semidefiniteness is not,
    /// since a dense eigendecomposition at the size limit costs more than
    /// the evaluation itself.
    pub fn new(gamma: &CorrelationMap, h1: DMatrix<Complex64>, h2: DMatrix<Complex64>, bs_factor: f64) -> Result<Self> {
        let n = gamma.dim();
        if n > FULL_MATRIX_LIMIT {
            return Err(Error::GridTooLarge {
                pixels: n,
                limit: FULL_MATRIX_LIMIT,
            });
        }
        if h1.ncols() != n || h2.ncols() != n {
            return Err(Error::GridMismatch(format!(
                "Gamma is {n}x{n}, kernels take {} and {} inputs",
                h1.ncols(),
                h2.ncols()
            )));
        }
        for (name, h) in [("h1", &h1), ("h2", &h2)] {
            if h.nrows() > FULL_MATRIX_LIMIT {
                return Err(Error::config(name, format!("{} outputs exceed the dense limit", h.nrows())));
            }
        }
        if !(bs_factor.is_finite() && (0.0..=0.25 + 1e-12).contains(&bs_factor)) {
            return Err(Error::config("bs_factor", format!("|tr|^2 must lie in [0, 1/4], got {bs_factor}")));
        }
        let g = DMatrix::from_fn(n, n, |a, b| gamma.get(a, b));
        let scale = g.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let defect = (0..n)
            .flat_map(|a| (a..n).map(move |b| (a, b)))
            .map(|(a, b)| (g[(a, b)] - g[(b, a)].conj()).norm())
            .fold(0.0, f64::max);
        if defect > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::config("gamma", format!("not Hermitian: defect {defect:.3e}")));
        }
        Ok(OracleProblem {
            gamma: g,
            h1,
            h2,
            bs_factor,
        })
    }

    pub fn gamma(&self) -> &DMatrix<Complex64> {
        &self.gamma
    }

    pub fn h1(&self) -> &DMatrix<Complex64> {
        &self.h1
    }

    pub fn h2(&self) -> &DMatrix<Complex64> {
        &self.h2
    }

    pub fn bs_factor(&self) -> f64 {
        self.bs_factor
    }

    /// The same problem with the two arms exchanged.
    pub fn swapped(&self) -> Self {
        OracleProblem {
            gamma: self.gamma.clone(),
            h1: self.h2.clone(),
            h2: self.h1.clone(),
            bs_factor: self.bs_factor,
        }
    }
}

/// Cross-arm field correlation `<E1*(x1) E2(x2)> / (conj(t) r)`,
/// i.e. `conj(H1) Gamma H2^T`.
pub fn cross_correlation(p: &OracleProblem) -> DMatrix<Complex64> {
    mul(&p.h1.conjugate(), &mul(&p.gamma, &p.h2.transpose()))
}

/// Dense `G(x1, x2)`, rows indexed by arm-1 pixels.
pub fn g_quadrature(p: &OracleProblem) -> DMatrix<f64> {
    cross_correlation(p).map(|v| p.bs_factor * v.norm_sqr())
}

/// Source pixel each output pixel is imaged from (largest kernel entry in
/// its row).
fn source_pixels(h: &DMatrix<Complex64>) -> Vec<usize> {
    (0..h.nrows())
        .map(|i| {
            (0..h.ncols())
                .max_by(|&a, &b| h[(i, a)].norm().total_cmp(&h[(i, b)].norm()))
                .unwrap_or(0)
        })
        .collect()
}

/// Factorized ghost image for an imaging arm 2: the object-free correlation
/// times `|T|^2` at the point each arm-2 pixel images.
///
/// `object_free` carries arm 1 without the object; `transmission` is the
/// object on the source grid.
pub fn image_factorization(object_free: &OracleProblem, transmission: &[Complex64]) -> Result<DMatrix<f64>> {
    if transmission.len() != object_free.gamma.nrows() {
        return Err(Error::GridMismatch(format!(
            "transmission has {} samples, source grid {}",
            transmission.len(),
            object_free.gamma.nrows()
        )));
    }
    let g0 = g_quadrature(object_free);
    let src = source_pixels(&object_free.h2);
    Ok(DMatrix::from_fn(g0.nrows(), g0.ncols(), |i, j| {
        g0[(i, j)] * transmission[src[j]].norm_sqr()
    }))
}

/// Far-plane field correlation `conj(K) Gamma K^T` for a kernel `K`.
pub fn propagated_gamma(gamma: &DMatrix<Complex64>, k: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    mul(&k.conjugate(), &mul(gamma, &k.transpose()))
}

/// Factorized ghost-diffraction pattern
/// `pattern(x1 - x2) * |sum_xi Gamma_f(xi, x2)|^2`, up to a constant.
///
/// `x1` and `x2` hold the detector coordinates (micrometres) for rows and
/// columns of `gamma_far`.
pub fn diffraction_factorization(
    gamma_far: &DMatrix<Complex64>,
    x1: &[f64],
    x2: &[f64],
    pattern: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let weight: Vec<f64> = (0..gamma_far.ncols())
        .map(|j| gamma_far.column(j).iter().sum::<Complex64>().norm_sqr())
        .collect();
    DMatrix::from_fn(x1.len(), x2.len(), |i, j| pattern(x1[i] - x2[j]) * weight[j])
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 - u * u / 6.0
    } else {
        u.sin() / u
    }
}

/// `|T~(q)|^2` with `T~(q) = (1/2 pi) int exp(-i q x) T(x) dx` and
/// `q = 2 pi x / (lambda F)`, for the analytic one-dimensional masks.
///
/// Single slit of width `w`: `(w sinc(q w / 2) / 2 pi)^2`. Needle of
/// diameter `d` in the slit: `((w sinc(q w / 2) - d sinc(q d / 2)) / 2 pi)^2`.
pub fn analytic_diffraction(kind: &MaskKind, lambda: f64, focal: f64, x: &[f64]) -> Result<Vec<f64>> {
    let amp: Box<dyn Fn(f64) -> f64> = match *kind {
        MaskKind::SingleSlit { width } => Box::new(move |q| width * sinc(0.5 * q * width)),
        MaskKind::NeedleInSlit { needle, slit } => {
            Box::new(move |q| slit * sinc(0.5 * q * slit) - needle * sinc(0.5 * q * needle))
        }
        MaskKind::DoubleSlit { width, separation } => {
            Box::new(move |q| 2.0 * (0.5 * q * separation).cos() * width * sinc(0.5 * q * width))
        }
        ref other => {
            return Err(Error::config(
                "object",
                format!("no closed-form diffraction pattern for {other:?}"),
            ))
        }
    };
    Ok(x
        .iter()
        .map(|&xv| {
            let q = 2.0 * PI * xv / (lambda * focal);
            (amp(q) / (2.0 * PI)).powi(2)
        })
        .collect())
}

/// `|T~|^2` of a rasterized mask by direct summation over its first row,
/// same convention as [`analytic_diffraction`].
pub fn dft_diffraction(mask: &ObjectMask, lambda: f64, focal: f64, x: &[f64]) -> Vec<f64> {
    let g = mask.grid();
    let row: Vec<(f64, Complex64)> = (0..g.nx())
        .map(|i| (g.x(i), mask.transmission().get(i, 0)))
        .filter(|(_, t)| t.norm() > 0.0)
        .collect();
    let p = g.pitch();
    x.iter()
        .map(|&xv| {
            let q = 2.0 * PI * xv / (lambda * focal);
            let s: Complex64 = row.iter().map(|(xs, t)| t * Complex64::from_polar(1.0, -q * xs)).sum();
            (s * p / (2.0 * PI)).norm_sqr()
        })
        .collect()
}

/// Writes a dense `G` as `x1_um,y1_um,x2_um,y2_um,value` rows.
pub fn write_dense_csv<W: Write>(g: &DMatrix<f64>, grid1: &GridSpec, grid2: &GridSpec, mut w: W) -> std::io::Result<()> {
    writeln!(w, "x1_um,y1_um,x2_um,y2_um,value")?;
    for a in 0..g.nrows() {
        let (i1, j1) = grid1.coords_of(a);
        for b in 0..g.ncols() {
            let (i2, j2) = grid2.coords_of(b);
            writeln!(
                w,
                "{},{},{},{},{:e}",
                grid1.x(i1),
                grid1.y(j1),
                grid2.x(i2),
                grid2.y(j2),
                g[(a, b)]
            )?;
        }
    }
    Ok(())
}
