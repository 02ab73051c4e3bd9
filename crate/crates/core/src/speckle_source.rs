//! Thermal speckle source: independent frames of a circular-Gaussian field at
//! the near-field (object) plane.
//!
//! Two synthesis modes share one interface:
//!
//! * `Physical` follows the optical train. Random phasors fill a disc of
//!   diameter `d0`, propagate `z0` to the pinhole, are clipped by it, and
//!   propagate on to the near plane. The spherical-wave scaling identity
//!   `Fresnel_d[C_R g](x) = C(x; R+d) Fresnel_{d/M}[g](x/M) / M` with
//!   `M = (R+d)/R` and `C(x; R) = exp(i pi |x|^2 / (lambda R))` lets the
//!   whole chain run on grids of one size: the pinhole plane is sampled at
//!   `pitch / M`, and the long source leg becomes a single DFT.
//! * `Spectral` filters white noise by a Gaussian power spectrum, which gives
//!   an exactly known, translation-invariant `Gamma(x' - x)` with the same
//!   coherence length. The oracle uses this mode.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field_grid::{fft2_centered, ComplexField, Direction, GridSpec};
use crate::seed::{stream_rng, Stream};

/// Largest grid (in pixels) for which a dense `Gamma(x, x')` is stored.
pub const FULL_MATRIX_LIMIT: usize = 64 * 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceMode {
    Physical,
    Spectral,
}

/// Source geometry. All lengths in micrometres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceSpec {
    pub lambda: f64,
    /// Diameter of the illuminated spot on the ground glass.
    pub d0: f64,
    /// Ground glass to pinhole distance.
    pub z0: f64,
    pub pinhole_d: f64,
    pub z_pinhole_to_near: f64,
    pub mean_intensity: f64,
    pub mode: SourceMode,
    /// Multiplies the spectral-mode coherence width. 1 matches the physical
    /// source; other values exist to test sensitivity to a wrong `Gamma`.
    pub spectral_width_scale: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec {
            lambda: 0.6328,
            d0: 10_000.0,
            z0: 400_000.0,
            pinhole_d: 3_000.0,
            z_pinhole_to_near: 40_000.0,
            mean_intensity: 1.0,
            mode: SourceMode::Physical,
            spectral_width_scale: 1.0,
        }
    }
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_um", self.lambda),
            ("d0_um", self.d0),
            ("z0_um", self.z0),
            ("pinhole_d_um", self.pinhole_d),
            ("z_pinhole_to_near_um", self.z_pinhole_to_near),
            ("mean_intensity", self.mean_intensity),
            ("spectral_width_scale", self.spectral_width_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Source to near-plane distance.
    pub fn z_total(&self) -> f64 {
        self.z0 + self.z_pinhole_to_near
    }

    /// Near-field coherence length `lambda z / d0`.
    pub fn coherence_length(&self) -> f64 {
        self.lambda * self.z_total() / self.d0
    }

    /// Standard deviation of the Gaussian spectral-mode `Gamma` profile.
    ///
    /// `(2/pi) * lambda z / d0` makes `|Gamma|^2` a Gaussian of standard
    /// deviation `0.45 lambda z / d0`, the best Gaussian match to the
    /// `jinc^2` coherence of a uniform disc source.
    pub fn spectral_sigma(&self) -> f64 {
        2.0 / PI * self.coherence_length() * self.spectral_width_scale
    }
}

/// Second-order field correlation `Gamma(x, x') = <a*(x) a(x')>`.
#[derive(Clone, Debug, PartialEq)]
pub enum CorrelationMap {
    /// Row-major `n x n` matrix, `values[x * n + x'] = Gamma(x, x')`.
    Full { grid: GridSpec, values: Vec<Complex64> },
    /// `Gamma` as a function of `x' - x`, stored on the grid with zero
    /// separation at the center pixel. Separations wrap periodically.
    Profile { grid: GridSpec, values: Vec<Complex64> },
}

impl CorrelationMap {
    pub fn grid(&self) -> &GridSpec {
        match self {
            CorrelationMap::Full { grid, .. } | CorrelationMap::Profile { grid, .. } => grid,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid().len()
    }

    /// `Gamma` between pixel indices `a` (unconjugated first argument) and `b`.
    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        match self {
            CorrelationMap::Full { grid, values } => values[a * grid.len() + b],
            CorrelationMap::Profile { grid, values } => {
                let (ia, ja) = grid.coords_of(a);
                let (ib, jb) = grid.coords_of(b);
                let (nx, ny) = (grid.nx(), grid.ny());
                let di = (ib + nx - ia + grid.cx()) % nx;
                let dj = (jb + ny - ja + grid.cy()) % ny;
                values[grid.index(di, dj)]
            }
        }
    }

    pub fn to_full(&self) -> Result<CorrelationMap> {
        let grid = *self.grid();
        let n = grid.len();
        if n > FULL_MATRIX_LIMIT {
            return Err(Error::GridTooLarge {
                pixels: n,
                limit: FULL_MATRIX_LIMIT,
            });
        }
        if let CorrelationMap::Full { .. } = self {
            return Ok(self.clone());
        }
        let mut values = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                values.push(self.get(a, b));
            }
        }
        Ok(CorrelationMap::Full { grid, values })
    }

    /// Largest `|Gamma(x, x') - conj(Gamma(x', x))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in a..n {
                worst = worst.max((self.get(a, b) - self.get(b, a).conj()).norm());
            }
        }
        worst
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.get(a, a).re).collect()
    }
}

/// Precomputed synthesis plan for one (source, grid) pair.
#[derive(Clone, Debug)]
pub struct SpeckleGenerator {
    spec: SourceSpec,
    grid: GridSpec,
    plan: Plan,
}

#[derive(Clone, Debug)]
enum Plan {
    /// Noise on `support` times `filter`, then an inverse DFT, then `post`.
    SinglePass {
        support: Vec<usize>,
        filter: Vec<Complex64>,
        post: Option<Vec<Complex64>>,
    },
    /// Source disc -> DFT -> pinhole clip -> transfer function -> chirp.
    Clipped {
        disc: Vec<usize>,
        pinhole: Vec<bool>,
        transfer: Vec<Complex64>,
        post: Vec<Complex64>,
    },
}

/// How the pinhole enters the physical model on a given grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PinholeRegime {
    /// Every window pixel sees the whole source through the pinhole, so the
    /// aperture has no effect inside the window.
    Unclipped,
    /// The pinhole's diffraction pattern fits inside the window, so it is
    /// applied as a hard circular aperture.
    Contained,
}

impl SpeckleGenerator {
    pub fn new(spec: &SourceSpec, grid: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let ell = spec.coherence_length();
        if ell < 3.0 * grid.pitch() {
            return Err(Error::sampling(
                "pitch_um",
                format!(
                    "speckle size lambda*z/d0 = {ell:.3} um spans fewer than 3 pixels of {} um",
                    grid.pitch()
                ),
                format!("use a pitch of at most {:.3} um", ell / 3.0),
            ));
        }
        let plan = match spec.mode {
            SourceMode::Spectral => spectral_plan(spec, grid),
            SourceMode::Physical => physical_plan(spec, grid)?,
        };
        Ok(SpeckleGenerator {
            spec: *spec,
            grid: *grid,
            plan,
        })
    }

    pub fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn regime(&self) -> Option<PinholeRegime> {
        match (&self.spec.mode, &self.plan) {
            (SourceMode::Spectral, _) => None,
            (_, Plan::SinglePass { .. }) => Some(PinholeRegime::Unclipped),
            (_, Plan::Clipped { .. }) => Some(PinholeRegime::Contained),
        }
    }

    /// One independent realization; a pure function of `seed`.
    pub fn sample(&self, seed: u64) -> ComplexField {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut rng = stream_rng(seed, Stream::Source);
        let mut buf = vec![Complex64::new(0.0, 0.0); nx * ny];
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        };
        match &self.plan {
            Plan::SinglePass {
                support,
                filter,
                post,
            } => {
                for &k in support {
                    buf[k] = draw(&mut rng) * filter[k];
                }
                fft2_centered(&mut buf, nx, ny, Direction::Inverse);
                if let Some(post) = post {
                    buf.iter_mut().zip(post).for_each(|(v, c)| *v *= c);
                }
            }
            Plan::Clipped {
                disc,
                pinhole,
                transfer,
                post,
            } => {
                for &k in disc {
                    buf[k] = draw(&mut rng);
                }
                fft2_centered(&mut buf, nx, ny, Direction::Forward);
                buf.iter_mut()
                    .zip(pinhole)
                    .filter(|(_, &open)| !open)
                    .for_each(|(v, _)| *v = Complex64::new(0.0, 0.0));
                fft2_centered(&mut buf, nx, ny, Direction::Forward);
                buf.iter_mut().zip(transfer).for_each(|(v, h)| *v *= h);
                fft2_centered(&mut buf, nx, ny, Direction::Inverse);
                buf.iter_mut().zip(post).for_each(|(v, c)| *v *= c);
            }
        }
        ComplexField::from_parts(self.grid, buf)
    }

    /// The exact ensemble `Gamma` of spectral mode as a translation-invariant
    /// profile. Physical mode has no closed form and returns an error.
    pub fn prescribed_gamma(&self) -> Result<CorrelationMap> {
        let (Plan::SinglePass { filter, .. }, SourceMode::Spectral) = (&self.plan, self.spec.mode) else {
            return Err(Error::ModeMismatch {
                expected: "spectral",
                found: "physical",
            });
        };
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        // Gamma(d) = P^-1 sum_k S_k exp(+2 pi i k d), i.e. P^-1/2 times the
        // unitary inverse DFT of the power spectrum.
        let mut buf: Vec<Complex64> = filter.iter().map(|h| Complex64::new(h.norm_sqr(), 0.0)).collect();
        fft2_centered(&mut buf, nx, ny, Direction::Inverse);
        let norm = 1.0 / ((nx * ny) as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= norm);
        Ok(CorrelationMap::Profile {
            grid: self.grid,
            values: buf,
        })
    }
}

/// Convenience wrapper: builds the plan and draws one frame.
pub fn sample_frame(spec: &SourceSpec, grid: &GridSpec, seed: u64) -> Result<ComplexField> {
    Ok(SpeckleGenerator::new(spec, grid)?.sample(seed))
}

fn spectral_plan(spec: &SourceSpec, grid: &GridSpec) -> Plan {
    let sigma = spec.spectral_sigma();
    let n = grid.len();
    let mut power = Vec::with_capacity(n);
    for j in 0..grid.ny() {
        let fy = grid.fy(j);
        for i in 0..grid.nx() {
            let fx = grid.fx(i);
            power.push((-2.0 * PI * PI * sigma * sigma * (fx * fx + fy * fy)).exp());
        }
    }
    let total: f64 = power.iter().sum();
    let scale = spec.mean_intensity * n as f64 / total;
    let filter = power.iter().map(|g| Complex64::new((g * scale).sqrt(), 0.0)).collect();
    Plan::SinglePass {
        support: (0..n).collect(),
        filter,
        post: None,
    }
}

fn physical_plan(spec: &SourceSpec, grid: &GridSpec) -> Result<Plan> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let p = grid.pitch();
    let lambda = spec.lambda;
    let z = spec.z_total();
    let mag = z / spec.z0;
    let pp = p / mag;
    let d_eff = spec.z_pinhole_to_near / mag;

    // The near-plane chirp exp(i pi r^2 / (lambda z)) must not alias.
    let r_max = 0.5 * p * ((nx * nx + ny * ny) as f64).sqrt();
    let r_alias = lambda * z / (2.0 * p);
    if r_max > r_alias {
        return Err(Error::sampling(
            "pitch_um",
            format!(
                "near-plane wavefront curvature aliases beyond r = {r_alias:.1} um (window reaches {r_max:.1} um)"
            ),
            "reduce the pitch or the grid size",
        ));
    }

    // Source plane sampled so that its DFT lands on the pinhole-plane grid.
    let psx = lambda * spec.z0 / (nx as f64 * pp);
    let psy = lambda * spec.z0 / (ny as f64 * pp);
    let r0 = 0.5 * spec.d0;
    let mut disc = Vec::new();
    for j in 0..ny {
        let ys = (j as f64 - grid.cy() as f64) * psy;
        for i in 0..nx {
            let xs = (i as f64 - grid.cx() as f64) * psx;
            if xs * xs + ys * ys <= r0 * r0 {
                disc.push(grid.index(i, j));
            }
        }
    }
    if disc.len() < 16 {
        return Err(Error::sampling(
            "grid",
            format!("source disc covers only {} samples", disc.len()),
            "enlarge the grid or reduce the pitch",
        ));
    }

    // Transfer function of the reduced distance d_eff on the pinhole grid.
    let fpx = 1.0 / (nx as f64 * pp);
    let fpy = 1.0 / (ny as f64 * pp);
    let mut transfer = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let fy = (j as f64 - grid.cy() as f64) * fpy;
        for i in 0..nx {
            let fx = (i as f64 - grid.cx() as f64) * fpx;
            transfer.push(Complex64::from_polar(1.0, -PI * lambda * d_eff * (fx * fx + fy * fy)));
        }
    }

    let amp = (spec.mean_intensity * (nx * ny) as f64 / disc.len() as f64).sqrt();
    let mut post = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = grid.y(j);
        for i in 0..nx {
            let x = grid.x(i);
            post.push(Complex64::from_polar(amp, PI * (x * x + y * y) / (lambda * z)));
        }
    }

    let theta = spec.d0 / (2.0 * spec.z0);
    let half_x = 0.5 * nx as f64 * pp;
    let half_y = 0.5 * ny as f64 * pp;
    let half_min = half_x.min(half_y);
    let rp = 0.5 * spec.pinhole_d;
    let spread = d_eff * theta;
    let fringe = (lambda * d_eff).sqrt();

    // Judged along the axes; the window corners may be slightly vignetted.
    if rp >= half_x.max(half_y) + spread {
        // Pinhole plane -> DFT is the point-inverted source, so the whole
        // chain collapses to one inverse transform of the filtered disc.
        let (cx, cy) = (grid.cx(), grid.cy());
        let support: Vec<usize> = disc
            .iter()
            .map(|&k| {
                let (i, j) = grid.coords_of(k);
                grid.index((2 * cx + nx - i) % nx, (2 * cy + ny - j) % ny)
            })
            .collect();
        return Ok(Plan::SinglePass {
            support,
            filter: transfer,
            post: Some(post),
        });
    }
    if rp + spread + fringe <= half_min {
        let mut pinhole = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = (j as f64 - grid.cy() as f64) * pp;
            for i in 0..nx {
                let x = (i as f64 - grid.cx() as f64) * pp;
                pinhole.push(x * x + y * y <= rp * rp);
            }
        }
        return Ok(Plan::Clipped {
            disc,
            pinhole,
            transfer,
            post,
        });
    }
    Err(Error::sampling(
        "pinhole_d_um",
        format!(
            "pinhole radius {rp:.0} um is neither outside the illuminated cone of the window \
             ({:.0} um) nor contained with its diffraction spread ({:.0} um needed, {half_min:.0} um available)",
            half_min + spread,
            rp + spread + fringe
        ),
        "enlarge the grid so the pinhole fits, or change pinhole_d_um",
    ))
}

/// Ensemble estimate `(1/n) sum a*(x) a(x')` as a dense matrix.
pub fn ensemble_gamma(spec: &SourceSpec, grid: &GridSpec, n_frames: u64, seed: u64) -> Result<CorrelationMap> {
    if n_frames < 2 {
        return Err(Error::InsufficientFrames {
            required: 2,
            available: n_frames,
        });
    }
    let n = grid.len();
    if n > FULL_MATRIX_LIMIT {
        return Err(Error::GridTooLarge {
            pixels: n,
            limit: FULL_MATRIX_LIMIT,
        });
    }
    let gen = SpeckleGenerator::new(spec, grid)?;
    const BLOCK: usize = 64;
    let mut sum = nalgebra::DMatrix::<Complex64>::zeros(n, n);
    let mut start = 0u64;
    while start < n_frames {
        let rows = (n_frames - start).min(BLOCK as u64) as usize;
        let mut a = nalgebra::DMatrix::<Complex64>::zeros(rows, n);
        for r in 0..rows {
            let frame = gen.sample(crate::seed::frame_seed(seed, start + r as u64));
            for (c, v) in frame.values().iter().enumerate() {
                a[(r, c)] = *v;
            }
        }
        // (A^H A)[x, x'] = sum_r conj(a_r(x)) a_r(x')
        sum += crate::linalg::adjoint_mul(&a, &a);
        start += rows as u64;
    }
    let inv = 1.0 / n_frames as f64;
    // Store row-major: values[x * n + x'].
    let mut values = Vec::with_capacity(n * n);
    for x in 0..n {
        for xp in 0..n {
            values.push(sum[(x, xp)] * inv);
        }
    }
    // Exact Hermitian symmetry regardless of rounding in the products.
    for x in 0..n {
        values[x * n + x].im = 0.0;
        for xp in (x + 1)..n {
            let avg = 0.5 * (values[x * n + xp] + values[xp * n + x].conj());
            values[x * n + xp] = avg;
            values[xp * n + x] = avg.conj();
        }
    }
    Ok(CorrelationMap::Full { grid: *grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectral(pitch_ratio: f64) -> (SourceSpec, GridSpec) {
        let spec = SourceSpec {
            mode: SourceMode::Spectral,
            ..SourceSpec::default()
        };
        let grid = GridSpec::square(32, spec.coherence_length() / pitch_ratio).unwrap();
        (spec, grid)
    }

    #[test]
    fn rejects_invalid_lengths() {
        let bad = SourceSpec {
            d0: -1.0,
            ..SourceSpec::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn rejects_under_resolved_speckle() {
        let spec = SourceSpec::default();
        let grid = GridSpec::square(64, spec.coherence_length() / 2.0).unwrap();
        match SpeckleGenerator::new(&spec, &grid) {
            Err(Error::Sampling { parameter, .. }) => assert_eq!(parameter, "pitch_um"),
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_frame() {
        let (spec, grid) = spectral(4.0);
        let a = sample_frame(&spec, &grid, 9).unwrap();
        let b = sample_frame(&spec, &grid, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_frame(&spec, &grid, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prescribed_gamma_diagonal_is_mean_intensity() {
        let (spec, grid) = spectral(4.0);
        let gen = SpeckleGenerator::new(&spec, &grid).unwrap();
        let gamma = gen.prescribed_gamma().unwrap();
        assert!(gamma.hermitian_defect() < 1e-12);
        for d in gamma.diagonal() {
            assert!((d - spec.mean_intensity).abs() < 1e-12);
        }
        // Gaussian profile with the documented width, away from wrap-around.
        let sigma = spec.spectral_sigma();
        let c = grid.index(grid.cx(), grid.cy());
        for s in 1..4 {
            let g = gamma.get(c, c + s).re;
            let dx = s as f64 * grid.pitch();
            let expect = (-dx * dx / (2.0 * sigma * sigma)).exp();
            assert!((g - expect).abs() < 1e-6, "{g} vs {expect}");
        }
    }

    #[test]
    fn ensemble_gamma_is_hermitian_and_close_to_prescribed() {
        let (spec, grid) = spectral(4.0);
        let gamma = ensemble_gamma(&spec, &grid, 400, 3).unwrap();
        assert!(gamma.hermitian_defect() < 1e-12);
        let exact = SpeckleGenerator::new(&spec, &grid).unwrap().prescribed_gamma().unwrap();
        let n = grid.len();
        let mut err = 0.0;
        for a in (0..n).step_by(37) {
            for b in (0..n).step_by(11) {
                err += (gamma.get(a, b) - exact.get(a, b)).norm_sqr();
            }
        }
        let count = n.div_ceil(37) * n.div_ceil(11);
        let rms = (err / count as f64).sqrt();
        // Sampling error of a complex mean over 400 unit-variance products.
        assert!(rms < 4.0 / 400f64.sqrt(), "rms {rms}");
    }

    #[test]
    fn ensemble_gamma_limits() {
        let (spec, grid) = spectral(4.0);
        assert!(matches!(
            ensemble_gamma(&spec, &grid, 1, 0),
            Err(Error::InsufficientFrames { .. })
        ));
        let big = GridSpec::square(65, grid.pitch()).unwrap();
        assert!(matches!(
            ensemble_gamma(&spec, &big, 10, 0),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn physical_regimes() {
        let spec = SourceSpec::default();
        let small = GridSpec::square(256, 6.0).unwrap();
        let gen = SpeckleGenerator::new(&spec, &small).unwrap();
        assert_eq!(gen.regime(), Some(PinholeRegime::Unclipped));
        let large = GridSpec::square(800, 7.5).unwrap();
        let gen = SpeckleGenerator::new(&spec, &large).unwrap();
        assert_eq!(gen.regime(), Some(PinholeRegime::Contained));
        let awkward = GridSpec::square(400, 7.5).unwrap();
        match SpeckleGenerator::new(&spec, &awkward) {
            Err(Error::Sampling { parameter, .. }) => assert_eq!(parameter, "pinhole_d_um"),
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn physical_mean_intensity() {
        let spec = SourceSpec {
            mean_intensity: 2.5,
            ..SourceSpec::default()
        };
        let grid = GridSpec::square(256, 6.0).unwrap();
        let gen = SpeckleGenerator::new(&spec, &grid).unwrap();
        let mut total = 0.0;
        for s in 0..8 {
            total += gen.sample(s).intensity().mean();
        }
        let mean = total / 8.0;
        assert!((mean - 2.5).abs() < 0.1, "mean {mean}");
    }
}
