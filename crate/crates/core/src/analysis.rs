//! Peak fitting, coherence lengths and profile utilities.

use std::io::{BufRead, Write};

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::speckle_source::SourceSpec;

pub const MAX_ITERATIONS: usize = 200;
pub const PARAMETER_TOLERANCE: f64 = 1e-10;

/// `baseline + amplitude * exp(-(x - center)^2 / (2 sigma^2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParams {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub baseline: f64,
}

impl GaussianParams {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.sigma;
        self.baseline + self.amplitude * (-0.5 * u * u).exp()
    }

    fn to_vec(self) -> Vector4<f64> {
        Vector4::new(self.baseline, self.amplitude, self.center, self.sigma)
    }

    fn from_vec(v: &Vector4<f64>) -> Self {
        GaussianParams {
            baseline: v[0],
            amplitude: v[1],
            center: v[2],
            sigma: v[3].abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFitResult {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub baseline: f64,
    /// Root of the residual sum of squares.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Linearized standard errors of amplitude, center, sigma, baseline.
    pub amplitude_err: f64,
    pub center_err: f64,
    pub sigma_err: f64,
    pub baseline_err: f64,
}

impl GaussianFitResult {
    pub fn params(&self) -> GaussianParams {
        GaussianParams {
            amplitude: self.amplitude,
            center: self.center,
            sigma: self.sigma,
            baseline: self.baseline,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust white-noise level from first differences (scaled MAD).
pub fn noise_estimate(y: &[f64]) -> f64 {
    if y.len() < 3 {
        return 0.0;
    }
    let d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let m = median(d.clone());
    1.4826 * median(d.iter().map(|v| (v - m).abs()).collect()) / std::f64::consts::SQRT_2
}

/// Deterministic starting point: baseline from the median of the outer 20%
/// of samples, amplitude and center from the maximum, sigma from the half
/// width at half maximum.
pub fn initial_guess(x: &[f64], y: &[f64]) -> GaussianParams {
    let n = y.len();
    let edge = (n / 10).max(1);
    let outer: Vec<f64> = y[..edge].iter().chain(&y[n - edge..]).copied().collect();
    let baseline = median(outer);
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty profile");
    let amplitude = ymax - baseline;
    let half = baseline + 0.5 * amplitude;
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imax;
        for k in range {
            if y[k] < half {
                let t = (y[prev] - half) / (y[prev] - y[k]);
                return Some(x[prev] + t * (x[k] - x[prev]));
            }
            prev = k;
        }
        None
    };
    let right = crossing(&mut (imax + 1..n));
    let left = crossing(&mut (0..imax).rev());
    let hwhm = match (left, right) {
        (Some(l), Some(r)) => 0.5 * (r - l),
        (Some(l), None) => x[imax] - l,
        (None, Some(r)) => r - x[imax],
        (None, None) => 0.25 * (x[n - 1] - x[0]),
    };
    let spacing = (x[n - 1] - x[0]).abs() / (n - 1) as f64;
    GaussianParams {
        amplitude,
        center: x[imax],
        sigma: (hwhm.abs() / 1.1774).max(0.25 * spacing),
        baseline,
    }
}

fn residuals_and_jacobian(x: &[f64], y: &[f64], p: &Vector4<f64>, jac: bool) -> (f64, Matrix4<f64>, Vector4<f64>) {
    let (b, a, c, s) = (p[0], p[1], p[2], p[3]);
    let mut rss = 0.0;
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let d = xi - c;
        let e = (-0.5 * d * d / (s * s)).exp();
        let r = yi - (b + a * e);
        rss += r * r;
        if jac {
            let j = Vector4::new(1.0, e, a * e * d / (s * s), a * e * d * d / (s * s * s));
            jtj += j * j.transpose();
            jtr += j * r;
        }
    }
    (rss, jtj, jtr)
}

/// Damped least-squares fit of a Gaussian peak on a constant baseline.
///
/// Needs at least 6 samples and a peak standing more than three noise
/// levels above the baseline. Hitting the iteration cap returns the best
/// parameters found with `converged = false`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn fit_gaussian_peak(x: &[f64], y: &[f64], init: Option<GaussianParams>) -> Result<GaussianFitResult> {
    if x.len() != y.len() {
        return Err(Error::config("profile", format!("{} coordinates, {} values", x.len(), y.len())));
    }
    if x.len() < 6 {
        return Err(Error::Degenerate(format!("{} samples; a peak fit needs at least 6", x.len())));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("profile sample {v}")));
    }
    let guess = init.unwrap_or_else(|| initial_guess(x, y));
    let noise = noise_estimate(y);
    let contrast = guess.amplitude;
    if !(contrast > 3.0 * noise) || contrast <= 1e-14 * guess.baseline.abs() {
        return Err(Error::Degenerate(format!(
            "peak contrast {contrast:.3e} is not above 3x the noise level {noise:.3e}"
        )));
    }

    let mut p = guess.to_vec();
    let (mut rss, mut jtj, mut jtr) = residuals_and_jacobian(x, y, &p, true);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut damped = jtj;
        for k in 0..4 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
            lambda *= 10.0;
            continue;
        };
        let trial = p + step;
        let (trial_rss, _, _) = residuals_and_jacobian(x, y, &trial, false);
        let small = (0..4).all(|k| step[k].abs() <= PARAMETER_TOLERANCE * (p[k].abs() + PARAMETER_TOLERANCE));
        if trial_rss.is_finite() && trial_rss <= rss {
            p = trial;
            (rss, jtj, jtr) = residuals_and_jacobian(x, y, &p, true);
            lambda = (lambda * 0.1).max(1e-12);
        } else {
            lambda *= 10.0;
        }
        if small || rss == 0.0 {
            converged = true;
            break;
        }
        if lambda > 1e16 {
            // No descent direction left at working precision.
            converged = true;
            break;
        }
    }
    let fit = GaussianParams::from_vec(&p);
    let dof = (x.len() - 4) as f64;
    let cov = jtj.try_inverse().map(|m| m * (rss / dof));
    let err = |k: usize| cov.map_or(f64::NAN, |c| c[(k, k)].max(0.0).sqrt());
    Ok(GaussianFitResult {
        amplitude: fit.amplitude,
        center: fit.center,
        sigma: fit.sigma,
        baseline: fit.baseline,
        residual_norm: rss.sqrt(),
        converged: converged && fit.sigma > 0.0,
        iterations,
        baseline_err: err(0),
        amplitude_err: err(1),
        center_err: err(2),
        sigma_err: err(3),
    })
}

/// Near- and far-field coherence lengths and their product.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceReport {
    pub sigma_n: f64,
    pub sigma_f: f64,
    pub m: f64,
    pub lambda: f64,
    pub focal: f64,
    /// `2 m sigma_n`.
    pub delta_x_n: f64,
    /// `2 sigma_f`.
    pub delta_x_f: f64,
    /// `2 pi delta_x_f / (lambda F)`.
    pub delta_q: f64,
    /// `delta_x_n * delta_q`.
    pub product: f64,
    pub product_err: f64,
    pub fitted_curve: String,
}

impl CoherenceReport {
    pub fn write_kv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fitted_curve = {}", self.fitted_curve)?;
        writeln!(w, "sigma_n_um = {}", self.sigma_n)?;
        writeln!(w, "sigma_f_um = {}", self.sigma_f)?;
        writeln!(w, "m = {}", self.m)?;
        writeln!(w, "lambda_um = {}", self.lambda)?;
        writeln!(w, "focal_um = {}", self.focal)?;
        writeln!(w, "delta_x_n_um = {}", self.delta_x_n)?;
        writeln!(w, "delta_x_f_um = {}", self.delta_x_f)?;
        writeln!(w, "delta_q_per_um = {}", self.delta_q)?;
        writeln!(w, "product = {}", self.product)?;
        writeln!(w, "product_err = {}", self.product_err)
    }
}

/// Combines a near-field and a far-field autocorrelation fit.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn coherence_report(
    near: &GaussianFitResult,
    far: &GaussianFitResult,
    m: f64,
    lambda: f64,
    focal: f64,
) -> Result<CoherenceReport> {
    for (name, f) in [("near-field", near), ("far-field", far)] {
        if !f.converged {
            return Err(Error::NotConverged { iterations: f.iterations });
        }
        if !(f.sigma > 0.0) {
            return Err(Error::Degenerate(format!("{name} fit has sigma {}", f.sigma)));
        }
    }
    for (field, v) in [("m", m), ("lambda_um", lambda), ("focal_um", focal)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::config(field, format!("must be > 0, got {v}")));
        }
    }
    let delta_x_n = 2.0 * m * near.sigma;
    let delta_x_f = 2.0 * far.sigma;
    let delta_q = 2.0 * std::f64::consts::PI * delta_x_f / (lambda * focal);
    let product = delta_x_n * delta_q;
    let rel = |e: f64, v: f64| if e.is_finite() { e / v } else { 0.0 };
    let product_err = product * rel(near.sigma_err, near.sigma).hypot(rel(far.sigma_err, far.sigma));
    Ok(CoherenceReport {
        sigma_n: near.sigma,
        sigma_f: far.sigma,
        m,
        lambda,
        focal,
        delta_x_n,
        delta_x_f,
        delta_q,
        product,
        product_err,
        fitted_curve: "normalized intensity autocorrelation".into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Profile along x, averaging rows.
    X,
    /// Profile along y, averaging columns.
    Y,
}

/// Mean of the central `lines` sections of a row-major `nx x ny` image.
pub fn section_average(values: &[f64], nx: usize, ny: usize, axis: Axis, lines: usize) -> Result<Vec<f64>> {
    if values.len() != nx * ny {
        return Err(Error::config("image", format!("{} values for a {nx}x{ny} image", values.len())));
    }
    let extent = match axis {
        Axis::X => ny,
        Axis::Y => nx,
    };
    if lines == 0 || lines > extent {
        return Err(Error::config("rows", format!("{lines} sections requested, image has {extent}")));
    }
    let first = extent / 2 - lines / 2;
    let inv = 1.0 / lines as f64;
    Ok(match axis {
        Axis::X => (0..nx)
            .map(|i| (first..first + lines).map(|j| values[j * nx + i]).sum::<f64>() * inv)
            .collect(),
        Axis::Y => (0..ny)
            .map(|j| (first..first + lines).map(|i| values[j * nx + i]).sum::<f64>() * inv)
            .collect(),
    })
}

/// Order-of-magnitude speckle sizes `lambda z / D0` (near field, `z` from
/// the source to the object plane) and `lambda F / D` (far field).
pub fn predict_speckle_sizes(source: &SourceSpec, focal: f64) -> (f64, f64) {
    (
        source.lambda * source.z_total() / source.d0,
        source.lambda * focal / source.pinhole_d,
    )
}

/// Normalized cross-correlation (Pearson) of two equal-length profiles.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// RMS difference between `measured` and `reference`, relative to the RMS
/// of `reference`.
pub fn nrms(measured: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = measured.iter().zip(reference).map(|(m, r)| (m - r) * (m - r)).sum();
    let den: f64 = reference.iter().map(|r| r * r).sum();
    (num / den).sqrt()
}

/// Scale `k` minimizing `|k * a - b|`.
pub fn best_scale(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    ab / aa
}

/// Convolution with a normalized Gaussian of standard deviation `sigma`
/// samples, truncated at four sigma and renormalized at the ends.
pub fn gaussian_smooth(y: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return y.to_vec();
    }
    let h = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-h..=h).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    (0..y.len() as i64)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for k in -h..=h {
                let j = i + k;
                if j >= 0 && (j as usize) < y.len() {
                    let wk = w[(k + h) as usize];
                    num += wk * y[j as usize];
                    den += wk;
                }
            }
            num / den
        })
        .collect()
}

/// First local minimum of `y` to the right of `from`, refined by a parabola
/// through the three neighbouring samples.
pub fn first_minimum_after(x: &[f64], y: &[f64], from: usize) -> Option<f64> {
    (from.max(1)..y.len().saturating_sub(1))
        .find(|&k| y[k] <= y[k - 1] && y[k] < y[k + 1])
        .map(|k| {
            let (a, b, c) = (y[k - 1], y[k], y[k + 1]);
            let denom = a - 2.0 * b + c;
            let t = if denom > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            x[k] + t * (x[k + 1] - x[k])
        })
}

/// One profile read back from a CSV written by this crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub x: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Reads a profile CSV: the first column is the coordinate, `value` and
/// `stderr` columns are located by header name.
pub fn read_profile_csv<R: BufRead>(r: R) -> Result<Profile> {
    let mut lines = r.lines();
    let bad = |m: String| Error::config("profile_csv", m);
    let header = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .map_err(|e| bad(e.to_string()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let vi = find("value").ok_or_else(|| bad("no `value` column".into()))?;
    let ei = find("stderr");
    let mut out = Profile {
        x: Vec::new(),
        value: Vec::new(),
        stderr: Vec::new(),
    };
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let num = |k: usize| -> Result<f64> {
            f.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad(format!("row {}: column {k} is not a number", n + 2)))
        };
        out.x.push(num(0)?);
        out.value.push(num(vi)?);
        out.stderr.push(match ei {
            Some(k) => num(k)?,
            None => 0.0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn samples(p: GaussianParams, lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
        let y = x.iter().map(|&v| p.eval(v)).collect();
        (x, y)
    }

    const UNIT: GaussianParams = GaussianParams {
        amplitude: 1.0,
        center: 0.0,
        sigma: 10.0,
        baseline: 1.0,
    };

    #[test]
    fn recovers_noiseless_gaussian() {
        let (x, y) = samples(UNIT, -50.0, 50.0, 101);
        let f = fit_gaussian_peak(&x, &y, None).unwrap();
        assert!(f.converged);
        assert!((f.amplitude - 1.0).abs() < 1e-8);
        assert!(f.center.abs() < 1e-8);
        assert!((f.sigma - 10.0).abs() < 1e-8);
        assert!((f.baseline - 1.0).abs() < 1e-8);
    }

    #[test]
    fn noisy_gaussian_sigma_within_three_percent() {
        let (x, y0) = samples(UNIT, -50.0, 50.0, 101);
        let mut worst: f64 = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = y0.iter().map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
            let f = fit_gaussian_peak(&x, &y, None).unwrap();
            assert!(f.converged);
            worst = worst.max((f.sigma / 10.0 - 1.0).abs());
        }
        assert!(worst < 0.03, "{worst}");
    }

    #[test]
    fn rejects_flat_and_short_profiles() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        assert!(matches!(fit_gaussian_peak(&x, &[2.0; 20], None), Err(Error::Degenerate(_))));
        assert!(fit_gaussian_peak(&x[..5], &[1.0, 2.0, 3.0, 2.0, 1.0], None).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..20).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(fit_gaussian_peak(&x, &noise, None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn translation_and_scaling(delta in -20.0f64..20.0, k in 0.1f64..10.0) {
            let (x, y) = samples(UNIT, -50.0, 50.0, 101);
            let base = fit_gaussian_peak(&x, &y, None).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v + delta).collect();
            let t = fit_gaussian_peak(&xs, &y, None).unwrap();
            prop_assert!((t.center - base.center - delta).abs() < 1e-8);
            prop_assert!((t.sigma - base.sigma).abs() < 1e-8);
            prop_assert!((t.amplitude - base.amplitude).abs() < 1e-8);
            let ys: Vec<f64> = y.iter().map(|v| v * k).collect();
            let s = fit_gaussian_peak(&x, &ys, None).unwrap();
            prop_assert!((s.amplitude - k * base.amplitude).abs() < 1e-8 * k);
            prop_assert!((s.baseline - k * base.baseline).abs() < 1e-8 * k);
            prop_assert!((s.center - base.center).abs() < 1e-8);
            prop_assert!((s.sigma - base.sigma).abs() < 1e-8);
        }
    }

    fn fit_with_sigma(sigma: f64) -> GaussianFitResult {
        GaussianFitResult {
            amplitude: 1.0,
            center: 0.0,
            sigma,
            baseline: 1.0,
            residual_norm: 0.0,
            converged: true,
            iterations: 1,
            amplitude_err: 0.0,
            center_err: 0.0,
            sigma_err: 0.0,
            baseline_err: 0.0,
        }
    }

    #[test]
    fn coherence_report_values() {
        let r = coherence_report(&fit_with_sigma(14.3), &fit_with_sigma(7.8), 1.2, 0.6328, 80_000.0).unwrap();
        assert!((r.delta_x_n - 34.32).abs() < 1e-9);
        assert!((r.delta_x_f - 15.6).abs() < 1e-12);
        assert!((r.delta_q - 1.93e-3).abs() < 0.01e-3);
        // 34.32 um x 1.9362e-3 /um; rounded intermediates give 0.0662.
        assert!((r.product - 0.06645).abs() < 1e-4);
        assert!((r.product - 0.066).abs() < 1e-3);
        assert_eq!(r.product, r.delta_x_n * r.delta_q);
        let mut bad = fit_with_sigma(7.8);
        bad.converged = false;
        assert!(matches!(
            coherence_report(&fit_with_sigma(14.3), &bad, 1.2, 0.6328, 80_000.0),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn section_average_cases() {
        let (nx, ny) = (7, 9);
        let uniform: Vec<f64> = (0..nx * ny).map(|k| (k % nx) as f64).collect();
        let p = section_average(&uniform, nx, ny, Axis::X, 5).unwrap();
        assert!(p.iter().enumerate().all(|(i, v)| (v - i as f64).abs() < 1e-12));
        let img: Vec<f64> = (0..nx * ny).map(|k| (k * k) as f64).collect();
        let one = section_average(&img, nx, ny, Axis::X, 1).unwrap();
        assert_eq!(one, img[4 * nx..5 * nx].to_vec());
        assert!(section_average(&img, nx, ny, Axis::X, 10).is_err());
        assert!(section_average(&img, nx, ny, Axis::Y, 8).is_err());
    }

    #[test]
    fn section_average_reduces_noise() {
        let (nx, ny) = (400, 600);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img: Vec<f64> = (0..nx * ny).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let p = section_average(&img, nx, ny, Axis::X, 500).unwrap();
        let m = p.iter().sum::<f64>() / nx as f64;
        let sd = (p.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nx - 1) as f64).sqrt();
        let ratio = sd * 500f64.sqrt();
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn speckle_size_predictions() {
        let s = SourceSpec::default();
        let (n, f) = predict_speckle_sizes(&s, 80_000.0);
        assert!((n - 27.84).abs() < 0.01, "{n}");
        assert!((f - 17.0).abs() < 0.5, "{f}");
        let wide = SourceSpec { d0: 2.0 * s.d0, ..s };
        let (n2, f2) = predict_speckle_sizes(&wide, 80_000.0);
        assert!((n2 - n / 2.0).abs() < 1e-12 && f2 == f);
        let big = SourceSpec { pinhole_d: 2.0 * s.pinhole_d, ..s };
        let (n3, f3) = predict_speckle_sizes(&big, 80_000.0);
        assert!(n3 == n && (f3 - f / 2.0).abs() < 1e-12);
    }

    #[test]
    fn profile_helpers() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((ncc(&a, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
        assert_eq!(nrms(&a, &a), 0.0);
        assert!((best_scale(&a, &[3.0, 6.0, 9.0, 12.0]) - 3.0).abs() < 1e-12);
        let flat = gaussian_smooth(&[2.0; 9], 1.5);
        assert!(flat.iter().all(|v| (v - 2.0).abs() < 1e-12));
        let spike = gaussian_smooth(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 0.8);
        assert!(spike[3] < 1.0 && (spike[2] - spike[4]).abs() < 1e-15);
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| (v - 20.3).powi(2)).collect();
        assert!((first_minimum_after(&x, &y, 0).unwrap() - 20.3).abs() < 1e-9);
    }

    #[test]
    fn reads_profile_csv() {
        let text = "dx_um,dy_um,value,baseline,stderr\n-1,0,2.5e0,1,0.1\n0,0,3,1,0.2\n";
        let p = read_profile_csv(text.as_bytes()).unwrap();
        assert_eq!(p.x, vec![-1.0, 0.0]);
        assert_eq!(p.value, vec![2.5, 3.0]);
        assert_eq!(p.stderr, vec![0.1, 0.2]);
        assert!(read_profile_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
