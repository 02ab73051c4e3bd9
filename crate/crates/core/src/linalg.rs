//! Complex dense products built from real GEMMs, which are far faster in
//! nalgebra than its generic complex path.

use nalgebra::DMatrix;
use num_complex::Complex64;

fn split(m: &DMatrix<Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|v| v.re), m.map(|v| v.im))
}

fn join(re: DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<Complex64> {
    re.zip_map(im, Complex64::new)
}

/// `A^H B`.
pub fn adjoint_mul(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = ar.tr_mul(&br) + ai.tr_mul(&bi);
    let im = ar.tr_mul(&bi) - ai.tr_mul(&br);
    join(re, &im)
}

/// `A B`.
pub fn mul(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    join(re, &im)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, k: f64) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |i, j| {
            Complex64::new((i as f64 * 1.3 + j as f64 * k).sin(), (i as f64 - j as f64 * 0.7 * k).cos())
        })
    }

    #[test]
    fn matches_generic_products() {
        let a = sample(5, 4, 0.3);
        let b = sample(5, 3, 1.1);
        let c = sample(4, 3, 0.9);
        let want = a.adjoint() * &b;
        assert!((adjoint_mul(&a, &b) - want).norm() < 1e-12);
        let want = &a * &c;
        assert!((mul(&a, &c) - want).norm() < 1e-12);
    }
}
