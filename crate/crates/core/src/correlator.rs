//! Streaming estimators of the intensity-fluctuation correlation
//! `G(x1, x2) = <I1(x1) I2(x2)> - <I1(x1)><I2(x2)>`.
//!
//! Four reductions share one accumulator type:
//!
//! * `Full`: dense `G` over every pixel pair (small grids only).
//! * `Bucket`: arm 1 summed over a region, correlated with every arm-2 pixel.
//! * `Difference`: `G(x1, x1 + d)` averaged over `x1` for a list of offsets.
//! * `Auto`: the same within one arm's frames.
//!
//! `Full` and `Bucket` keep raw product moments with Neumaier-compensated
//! sums. `Difference` and `Auto` keep Welford-style co-moments of the
//! spatially averaged products, which avoids the cancellation of large raw
//! sums and merges exactly. All covariances use the `n - 1` denominator.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field_grid::{GridSpec, IntensityFrame};
use crate::bench::ShotRecord;

/// Largest per-arm pixel count accepted by the dense mode.
pub const FULL_LIMIT: usize = 64 * 64;
const BLOCK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccumulatorMode {
    Full,
    Bucket,
    Difference,
    Auto,
}

impl AccumulatorMode {
    pub fn name(&self) -> &'static str {
        match self {
            AccumulatorMode::Full => "full",
            AccumulatorMode::Bucket => "bucket",
            AccumulatorMode::Difference => "difference",
            AccumulatorMode::Auto => "auto",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    One,
    Two,
}

/// Accumulators that can absorb another built from disjoint frames.
pub trait Merge: Sized {
    fn merge(&mut self, other: Self) -> Result<()>;
}

/// Two accumulators fed from the same frames.
impl<A: Merge, B: Merge> Merge for (A, B) {
    fn merge(&mut self, other: Self) -> Result<()> {
        self.0.merge(other.0)?;
        self.1.merge(other.1)
    }
}

/// Neumaier-compensated running sums.
#[derive(Clone, Debug, PartialEq)]
struct Compensated {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl Compensated {
    fn zeros(n: usize) -> Self {
        Compensated {
            sum: vec![0.0; n],
            comp: vec![0.0; n],
        }
    }

    #[inline]
    fn add(&mut self, i: usize, x: f64) {
        let s = self.sum[i];
        let t = s + x;
        if s.abs() >= x.abs() {
            self.comp[i] += (s - t) + x;
        } else {
            self.comp[i] += (x - t) + s;
        }
        self.sum[i] = t;
    }

    fn add_all(&mut self, other: &Compensated) {
        for i in 0..self.sum.len() {
            self.add(i, other.sum[i]);
            self.comp[i] += other.comp[i];
        }
    }

    #[inline]
    fn get(&self, i: usize) -> f64 {
        self.sum[i] + self.comp[i]
    }
}

/// Rectangular region of grid pixels, `[i0, i1) x [j0, j1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Roi {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Roi {
    pub fn full(grid: &GridSpec) -> Self {
        Roi {
            i0: 0,
            i1: grid.nx(),
            j0: 0,
            j1: grid.ny(),
        }
    }

    /// Centered `w x h` box, clamped to the grid.
    pub fn centered(grid: &GridSpec, w: usize, h: usize) -> Self {
        let w = w.min(grid.nx());
        let h = h.min(grid.ny());
        let i0 = grid.cx().saturating_sub(w / 2).min(grid.nx() - w);
        let j0 = grid.cy().saturating_sub(h / 2).min(grid.ny() - h);
        Roi {
            i0,
            i1: i0 + w,
            j0,
            j1: j0 + h,
        }
    }

    fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.i0 >= self.i1 || self.j0 >= self.j1 || self.i1 > grid.nx() || self.j1 > grid.ny() {
            return Err(Error::EmptyRegion(format!(
                "region [{}, {}) x [{}, {}) on a {}x{} grid",
                self.i0,
                self.i1,
                self.j0,
                self.j1,
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(())
    }

    /// Valid `x1` rows/columns for offset `(dx, dy)`: both `x1` and
    /// `x1 + d` must be on the grid.
    fn valid_for(&self, grid: &GridSpec, dx: i64, dy: i64) -> Option<(usize, usize, usize, usize)> {
        let lo = |a: usize, d: i64| (a as i64).max(-d) as usize;
        let hi = |b: usize, n: usize, d: i64| (b as i64).min(n as i64 - d).max(0) as usize;
        let (i0, i1) = (lo(self.i0, dx), hi(self.i1, grid.nx(), dx));
        let (j0, j1) = (lo(self.j0, dy), hi(self.j1, grid.ny(), dy));
        (i0 < i1 && j0 < j1).then_some((i0, i1, j0, j1))
    }
}

/// Pixel offsets `(dx, dy)` with `d = x2 - x1`.
pub fn offsets_along_x(k: i64) -> Vec<(i64, i64)> {
    (-k..=k).map(|d| (d, 0)).collect()
}

/// Offsets along both axes, `(d, 0)` then `(0, d)` for `d` in `-k..=k`.
pub fn offsets_on_axes(k: i64) -> Vec<(i64, i64)> {
    let mut v = offsets_along_x(k);
    v.extend((-k..=k).map(|d| (0, d)));
    v
}

#[derive(Clone, Debug, PartialEq)]
struct FullState {
    grid1: GridSpec,
    grid2: GridSpec,
    s_a: Compensated,
    s_a2: Compensated,
    s_b: Compensated,
    s_b2: Compensated,
    s_ab: Compensated,
    s_a2b: Vec<f64>,
    s_ab2: Vec<f64>,
    s_a2b2: Vec<f64>,
    pending_a: Vec<f64>,
    pending_b: Vec<f64>,
}

impl FullState {
    fn pending_rows(&self) -> usize {
        self.pending_a.len() / self.grid1.len()
    }

    fn flush(&mut self) {
        let rows = self.pending_rows();
        if rows == 0 {
            return;
        }
        let (n1, n2) = (self.grid1.len(), self.grid2.len());
        let a = DMatrix::from_row_slice(rows, n1, &self.pending_a);
        let b = DMatrix::from_row_slice(rows, n2, &self.pending_b);
        let a2 = a.map(|v| v * v);
        let b2 = b.map(|v| v * v);
        // Products are n1 x n2 column-major; store row-major by x1.
        let store_c = |dst: &mut Compensated, m: &DMatrix<f64>| {
            for x1 in 0..n1 {
                for x2 in 0..n2 {
                    dst.add(x1 * n2 + x2, m[(x1, x2)]);
                }
            }
        };
        let store = |dst: &mut Vec<f64>, m: &DMatrix<f64>| {
            for x1 in 0..n1 {
                for x2 in 0..n2 {
                    dst[x1 * n2 + x2] += m[(x1, x2)];
                }
            }
        };
        store_c(&mut self.s_ab, &a.tr_mul(&b));
        store(&mut self.s_a2b, &a2.tr_mul(&b));
        store(&mut self.s_ab2, &a.tr_mul(&b2));
        store(&mut self.s_a2b2, &a2.tr_mul(&b2));
        self.pending_a.clear();
        self.pending_b.clear();
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BucketState {
    grid2: GridSpec,
    region: Vec<usize>,
    s_a: f64,
    s_a2: f64,
    s_b: Compensated,
    s_b2: Compensated,
    s_ab: Compensated,
    s_a2b: Vec<f64>,
    s_ab2: Vec<f64>,
    s_a2b2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct DiffState {
    grid: GridSpec,
    roi: Roi,
    offsets: Vec<(i64, i64)>,
    /// Which frame feeds both sides in `Auto` mode.
    auto_arm: Option<Arm>,
    mean1: Vec<f64>,
    mean2: Vec<f64>,
    /// Co-moment of the spatially averaged centered product, per offset.
    comoment: Vec<f64>,
    /// Sum of squared per-frame co-moment increments (for the error bar).
    sq_increment: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum State {
    Full(Box<FullState>),
    Bucket(Box<BucketState>),
    Difference(Box<DiffState>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationAccumulator {
    mode: AccumulatorMode,
    n: u64,
    state: State,
}

impl CorrelationAccumulator {
    /// Dense `G(x1, x2)` over every pixel pair.
    pub fn full(grid1: GridSpec, grid2: GridSpec) -> Result<Self> {
        for g in [grid1, grid2] {
            if g.len() > FULL_LIMIT {
                return Err(Error::GridTooLarge {
                    pixels: g.len(),
                    limit: FULL_LIMIT,
                });
            }
        }
        let (n1, n2) = (grid1.len(), grid2.len());
        Ok(CorrelationAccumulator {
            mode: AccumulatorMode::Full,
            n: 0,
            state: State::Full(Box::new(FullState {
                grid1,
                grid2,
                s_a: Compensated::zeros(n1),
                s_a2: Compensated::zeros(n1),
                s_b: Compensated::zeros(n2),
                s_b2: Compensated::zeros(n2),
                s_ab: Compensated::zeros(n1 * n2),
                s_a2b: vec![0.0; n1 * n2],
                s_ab2: vec![0.0; n1 * n2],
                s_a2b2: vec![0.0; n1 * n2],
                pending_a: Vec::new(),
                pending_b: Vec::new(),
            })),
        })
    }

    /// Bucket value (sum of arm-1 frame over `region`) against each arm-2
    /// pixel.
    pub fn bucket(grid2: GridSpec, region: Vec<usize>) -> Result<Self> {
        if region.is_empty() {
            return Err(Error::EmptyRegion("bucket region".into()));
        }
        let n2 = grid2.len();
        Ok(CorrelationAccumulator {
            mode: AccumulatorMode::Bucket,
            n: 0,
            state: State::Bucket(Box::new(BucketState {
                grid2,
                region,
                s_a: 0.0,
                s_a2: 0.0,
                s_b: Compensated::zeros(n2),
                s_b2: Compensated::zeros(n2),
                s_ab: Compensated::zeros(n2),
                s_a2b: vec![0.0; n2],
                s_ab2: vec![0.0; n2],
                s_a2b2: vec![0.0; n2],
            })),
        })
    }

    /// `G(x1, x1 + d)` averaged over `x1` in `roi`, arms on a common grid.
    pub fn difference(grid: GridSpec, roi: Roi, offsets: Vec<(i64, i64)>) -> Result<Self> {
        Self::diff_like(AccumulatorMode::Difference, None, grid, roi, offsets)
    }

    /// Autocorrelation of one arm's frames.
    pub fn auto(arm: Arm, grid: GridSpec, roi: Roi, offsets: Vec<(i64, i64)>) -> Result<Self> {
        Self::diff_like(AccumulatorMode::Auto, Some(arm), grid, roi, offsets)
    }

    fn diff_like(
        mode: AccumulatorMode,
        auto_arm: Option<Arm>,
        grid: GridSpec,
        roi: Roi,
        offsets: Vec<(i64, i64)>,
    ) -> Result<Self> {
        roi.validate(&grid)?;
        if offsets.is_empty() {
            return Err(Error::config("offsets", "need at least one offset"));
        }
        if let Some(d) = offsets.iter().find(|&&(dx, dy)| roi.valid_for(&grid, dx, dy).is_none()) {
            return Err(Error::EmptyRegion(format!("no valid pixel pairs at offset {d:?}")));
        }
        let n = grid.len();
        let k = offsets.len();
        Ok(CorrelationAccumulator {
            mode,
            n: 0,
            state: State::Difference(Box::new(DiffState {
                grid,
                roi,
                offsets,
                auto_arm,
                mean1: vec![0.0; n],
                mean2: vec![0.0; n],
                comoment: vec![0.0; k],
                sq_increment: vec![0.0; k],
            })),
        })
    }

    pub fn mode(&self) -> AccumulatorMode {
        self.mode
    }

    pub fn n_frames(&self) -> u64 {
        self.n
    }

    pub fn accumulate(&mut self, shot: &ShotRecord) -> Result<()> {
        self.accumulate_frames(&shot.frame1, &shot.frame2)
    }

    pub fn accumulate_frames(&mut self, frame1: &IntensityFrame, frame2: &IntensityFrame) -> Result<()> {
        match &mut self.state {
            State::Full(s) => {
                frame1.grid().ensure_same(&s.grid1, "arm-1 frame")?;
                frame2.grid().ensure_same(&s.grid2, "arm-2 frame")?;
                for (i, &a) in frame1.values().iter().enumerate() {
                    s.s_a.add(i, a);
                    s.s_a2.add(i, a * a);
                }
                for (i, &b) in frame2.values().iter().enumerate() {
                    s.s_b.add(i, b);
                    s.s_b2.add(i, b * b);
                }
                s.pending_a.extend_from_slice(frame1.values());
                s.pending_b.extend_from_slice(frame2.values());
                if s.pending_rows() == BLOCK {
                    s.flush();
                }
            }
            State::Bucket(s) => {
                frame2.grid().ensure_same(&s.grid2, "arm-2 frame")?;
                let a = crate::bench::bucket(frame1, &s.region)?;
                s.s_a += a;
                s.s_a2 += a * a;
                for (i, &b) in frame2.values().iter().enumerate() {
                    s.s_b.add(i, b);
                    s.s_b2.add(i, b * b);
                    s.s_ab.add(i, a * b);
                    s.s_a2b[i] += a * a * b;
                    s.s_ab2[i] += a * b * b;
                    s.s_a2b2[i] += a * a * b * b;
                }
            }
            State::Difference(s) => {
                let (f1, f2) = match s.auto_arm {
                    None => (frame1, frame2),
                    Some(Arm::One) => (frame1, frame1),
                    Some(Arm::Two) => (frame2, frame2),
                };
                f1.grid().ensure_same(&s.grid, "first frame")?;
                f2.grid().ensure_same(&s.grid, "second frame")?;
                let k = self.n + 1;
                let kf = k as f64;
                if k > 1 {
                    let c1: Vec<f64> = f1.values().iter().zip(&s.mean1).map(|(v, m)| v - m).collect();
                    let c2: Vec<f64> = if s.auto_arm.is_some() {
                        c1.clone()
                    } else {
                        f2.values().iter().zip(&s.mean2).map(|(v, m)| v - m).collect()
                    };
                    let w = (kf - 1.0) / kf;
                    for (o, &(dx, dy)) in s.offsets.iter().enumerate() {
                        let q = spatial_product(&s.grid, &s.roi, &c1, &c2, dx, dy);
                        s.comoment[o] += w * q;
                        s.sq_increment[o] += (w * q) * (w * q);
                    }
                }
                for (m, v) in s.mean1.iter_mut().zip(f1.values()) {
                    *m += (v - *m) / kf;
                }
                if s.auto_arm.is_some() {
                    s.mean2.copy_from_slice(&s.mean1);
                } else {
                    for (m, v) in s.mean2.iter_mut().zip(f2.values()) {
                        *m += (v - *m) / kf;
                    }
                }
            }
        }
        self.n += 1;
        Ok(())
    }

    fn check_mode(&self, expected: AccumulatorMode) -> Result<()> {
        if self.mode == expected {
            Ok(())
        } else {
            Err(Error::ModeMismatch {
                expected: expected.name(),
                found: self.mode.name(),
            })
        }
    }
}

/// `(1/nv) sum_{x1} a(x1) b(x1 + d)` over the valid part of `roi`.
fn spatial_product(grid: &GridSpec, roi: &Roi, a: &[f64], b: &[f64], dx: i64, dy: i64) -> f64 {
    let (i0, i1, j0, j1) = roi.valid_for(grid, dx, dy).expect("validated offsets");
    let nx = grid.nx();
    let mut total = 0.0;
    for j in j0..j1 {
        let ra = &a[j * nx + i0..j * nx + i1];
        let jb = (j as i64 + dy) as usize;
        let ib = (i0 as i64 + dx) as usize;
        let rb = &b[jb * nx + ib..jb * nx + ib + (i1 - i0)];
        total += ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>();
    }
    total / ((i1 - i0) * (j1 - j0)) as f64
}

impl Merge for CorrelationAccumulator {
    fn merge(&mut self, mut other: Self) -> Result<()> {
        if self.mode != other.mode {
            return Err(Error::ModeMismatch {
                expected: self.mode.name(),
                found: other.mode.name(),
            });
        }
        let (na, nb) = (self.n, other.n);
        match (&mut self.state, &mut other.state) {
            (State::Full(a), State::Full(b)) => {
                a.grid1.ensure_same(&b.grid1, "merge")?;
                a.grid2.ensure_same(&b.grid2, "merge")?;
                a.flush();
                b.flush();
                a.s_a.add_all(&b.s_a);
                a.s_a2.add_all(&b.s_a2);
                a.s_b.add_all(&b.s_b);
                a.s_b2.add_all(&b.s_b2);
                a.s_ab.add_all(&b.s_ab);
                add_into(&mut a.s_a2b, &b.s_a2b);
                add_into(&mut a.s_ab2, &b.s_ab2);
                add_into(&mut a.s_a2b2, &b.s_a2b2);
            }
            (State::Bucket(a), State::Bucket(b)) => {
                a.grid2.ensure_same(&b.grid2, "merge")?;
                if a.region != b.region {
                    return Err(Error::GridMismatch("bucket regions differ".into()));
                }
                a.s_a += b.s_a;
                a.s_a2 += b.s_a2;
                a.s_b.add_all(&b.s_b);
                a.s_b2.add_all(&b.s_b2);
                a.s_ab.add_all(&b.s_ab);
                add_into(&mut a.s_a2b, &b.s_a2b);
                add_into(&mut a.s_ab2, &b.s_ab2);
                add_into(&mut a.s_a2b2, &b.s_a2b2);
            }
            (State::Difference(a), State::Difference(b)) => {
                a.grid.ensure_same(&b.grid, "merge")?;
                if a.roi != b.roi || a.offsets != b.offsets || a.auto_arm != b.auto_arm {
                    return Err(Error::GridMismatch("difference-mode layouts differ".into()));
                }
                if nb == 0 {
                    return Ok(());
                }
                if na == 0 {
                    **a = (**b).clone();
                } else {
                    let n = (na + nb) as f64;
                    let w = na as f64 * nb as f64 / n;
                    let d1: Vec<f64> = a.mean1.iter().zip(&b.mean1).map(|(x, y)| y - x).collect();
                    let d2: Vec<f64> = a.mean2.iter().zip(&b.mean2).map(|(x, y)| y - x).collect();
                    for o in 0..a.offsets.len() {
                        let (dx, dy) = a.offsets[o];
                        let cross = spatial_product(&a.grid, &a.roi, &d1, &d2, dx, dy);
                        a.comoment[o] += b.comoment[o] + w * cross;
                        a.sq_increment[o] += b.sq_increment[o];
                    }
                    let (fa, fb) = (na as f64 / n, nb as f64 / n);
                    for (x, y) in a.mean1.iter_mut().zip(&b.mean1) {
                        *x = fa * *x + fb * y;
                    }
                    for (x, y) in a.mean2.iter_mut().zip(&b.mean2) {
                        *x = fa * *x + fb * y;
                    }
                }
            }
            _ => unreachable!("modes checked above"),
        }
        self.n = na + nb;
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Where the values of a `CorrelationResult` live.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// Row-major over `(x1, x2)`: index `x1 * n2 + x2`.
    Pairs { grid1: GridSpec, grid2: GridSpec },
    /// One value per arm-2 pixel.
    Detector { grid: GridSpec },
    /// One value per pixel offset `d = x2 - x1`.
    Offsets { pitch: f64, offsets: Vec<(i64, i64)> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationResult {
    pub mode: AccumulatorMode,
    pub domain: Domain,
    /// Covariance estimate `G`.
    pub values: Vec<f64>,
    /// `<I1><I2>` for the same coordinates.
    pub baseline: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_frames: u64,
    /// Set when only one frame was accumulated: `G` is then reported as zero.
    pub single_frame: bool,
}

impl CorrelationResult {
    /// `1 + G / baseline`, the normalized second-order correlation.
    pub fn normalized(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.baseline)
            .map(|(g, b)| if *b != 0.0 { 1.0 + g / b } else { f64::NAN })
            .collect()
    }

    /// Writes `coordinates..., value, baseline, stderr` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match &self.domain {
            Domain::Pairs { grid1, grid2 } => {
                writeln!(w, "x1_um,y1_um,x2_um,y2_um,value,baseline,stderr")?;
                let n2 = grid2.len();
                for (k, ((v, b), e)) in self.values.iter().zip(&self.baseline).zip(&self.stderr).enumerate() {
                    let (i1, j1) = grid1.coords_of(k / n2);
                    let (i2, j2) = grid2.coords_of(k % n2);
                    writeln!(
                        w,
                        "{},{},{},{},{v:e},{b:e},{e:e}",
                        grid1.x(i1),
                        grid1.y(j1),
                        grid2.x(i2),
                        grid2.y(j2)
                    )?;
                }
            }
            Domain::Detector { grid } => {
                writeln!(w, "x_um,y_um,value,baseline,stderr")?;
                for (k, ((v, b), e)) in self.values.iter().zip(&self.baseline).zip(&self.stderr).enumerate() {
                    let (i, j) = grid.coords_of(k);
                    writeln!(w, "{},{},{v:e},{b:e},{e:e}", grid.x(i), grid.y(j))?;
                }
            }
            Domain::Offsets { pitch, offsets } => {
                writeln!(w, "dx_um,dy_um,value,baseline,stderr")?;
                for (((dx, dy), v), (b, e)) in offsets.iter().zip(&self.values).zip(self.baseline.iter().zip(&self.stderr)) {
                    writeln!(w, "{},{},{v:e},{b:e},{e:e}", *dx as f64 * pitch, *dy as f64 * pitch)?;
                }
            }
        }
        Ok(())
    }
}

/// Covariance and its standard error from raw moment sums of one pair.
///
/// The error bar uses the sample fourth central moment
/// `mu22 = <(A - a)^2 (B - b)^2>`: `Var(G) ~ (mu22 - G^2) / n`.
#[allow(clippy::too_many_arguments)]
fn raw_cov(n: f64, sa: f64, sa2: f64, sb: f64, sb2: f64, sab: f64, sa2b: f64, sab2: f64, sa2b2: f64) -> (f64, f64, f64) {
    let (a, b) = (sa / n, sb / n);
    let m_ab = sab / n;
    let cov = (m_ab - a * b) * n / (n - 1.0);
    let mu22 = sa2b2 / n - 2.0 * b * sa2b / n - 2.0 * a * sab2 / n
        + b * b * sa2 / n
        + a * a * sb2 / n
        + 4.0 * a * b * m_ab
        - 3.0 * a * a * b * b;
    let var = (mu22 - cov * cov).max(0.0) / n;
    (cov, a * b, var.sqrt())
}

/// Unbiased `G` with per-coordinate standard errors.
///
/// Zero frames is an error. A single frame yields `G = 0` everywhere and
/// sets `single_frame`.
pub fn finalize_g(acc: &CorrelationAccumulator) -> Result<CorrelationResult> {
    if acc.n == 0 {
        return Err(Error::InsufficientFrames {
            required: 1,
            available: 0,
        });
    }
    let single = acc.n == 1;
    let n = acc.n as f64;
    let (domain, values, baseline, stderr) = match &acc.state {
        State::Full(s) => {
            let mut s = s.clone();
            s.flush();
            let (n1, n2) = (s.grid1.len(), s.grid2.len());
            let mut values = vec![0.0; n1 * n2];
            let mut baseline = vec![0.0; n1 * n2];
            let mut stderr = vec![0.0; n1 * n2];
            for x1 in 0..n1 {
                for x2 in 0..n2 {
                    let k = x1 * n2 + x2;
                    let (g, base, se) = if single {
                        (0.0, s.s_a.get(x1) * s.s_b.get(x2), 0.0)
                    } else {
                        raw_cov(
                            n,
                            s.s_a.get(x1),
                            s.s_a2.get(x1),
                            s.s_b.get(x2),
                            s.s_b2.get(x2),
                            s.s_ab.get(k),
                            s.s_a2b[k],
                            s.s_ab2[k],
                            s.s_a2b2[k],
                        )
                    };
                    values[k] = g;
                    baseline[k] = base;
                    stderr[k] = se;
                }
            }
            (
                Domain::Pairs {
                    grid1: s.grid1,
                    grid2: s.grid2,
                },
                values,
                baseline,
                stderr,
            )
        }
        State::Bucket(s) => {
            let n2 = s.grid2.len();
            let mut values = vec![0.0; n2];
            let mut baseline = vec![0.0; n2];
            let mut stderr = vec![0.0; n2];
            for x2 in 0..n2 {
                let (g, base, se) = if single {
                    (0.0, s.s_a * s.s_b.get(x2), 0.0)
                } else {
                    raw_cov(
                        n,
                        s.s_a,
                        s.s_a2,
                        s.s_b.get(x2),
                        s.s_b2.get(x2),
                        s.s_ab.get(x2),
                        s.s_a2b[x2],
                        s.s_ab2[x2],
                        s.s_a2b2[x2],
                    )
                };
                values[x2] = g;
                baseline[x2] = base;
                stderr[x2] = se;
            }
            (Domain::Detector { grid: s.grid2 }, values, baseline, stderr)
        }
        State::Difference(s) => {
            let k = s.offsets.len();
            let mut values = vec![0.0; k];
            let mut baseline = vec![0.0; k];
            let mut stderr = vec![0.0; k];
            for (o, &(dx, dy)) in s.offsets.iter().enumerate() {
                baseline[o] = spatial_product(&s.grid, &s.roi, &s.mean1, &s.mean2, dx, dy);
                if !single {
                    values[o] = s.comoment[o] / (n - 1.0);
                    let mean_inc = s.comoment[o] / n;
                    let var_inc = (s.sq_increment[o] / n - mean_inc * mean_inc).max(0.0);
                    stderr[o] = (n * var_inc).sqrt() / (n - 1.0);
                }
            }
            (
                Domain::Offsets {
                    pitch: s.grid.pitch(),
                    offsets: s.offsets.clone(),
                },
                values,
                baseline,
                stderr,
            )
        }
    };
    Ok(CorrelationResult {
        mode: acc.mode,
        domain,
        values,
        baseline,
        stderr,
        n_frames: acc.n,
        single_frame: single,
    })
}

/// Bucket-correlation image over the arm-2 detector.
pub fn ghost_image(acc: &CorrelationAccumulator) -> Result<CorrelationResult> {
    acc.check_mode(AccumulatorMode::Bucket)?;
    finalize_g(acc)
}

/// Difference-coordinate pattern `G(d)` averaged over `x1`.
pub fn ghost_diffraction(acc: &CorrelationAccumulator) -> Result<CorrelationResult> {
    acc.check_mode(AccumulatorMode::Difference)?;
    finalize_g(acc)
}

/// Normalized autocorrelation `<I I'> / (<I><I'>)` against signed separation.
#[derive(Clone, Debug, PartialEq)]
pub struct SiegertProfile {
    /// Signed separation in micrometres, ascending.
    pub separation: Vec<f64>,
    pub normalized: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Unnormalized covariance and baseline, averaged the same way.
    pub covariance: Vec<f64>,
    pub baseline: Vec<f64>,
    pub n_frames: u64,
}

impl SiegertProfile {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "separation_um,value,baseline,stderr")?;
        for k in 0..self.separation.len() {
            writeln!(
                w,
                "{},{:e},{:e},{:e}",
                self.separation[k], self.normalized[k], 1.0, self.stderr[k]
            )?;
        }
        Ok(())
    }
}

/// Reduces an autocorrelation accumulator to a 1-D profile. Offsets with the
/// same signed length along x or y are averaged.
pub fn siegert_autocorrelation(acc: &CorrelationAccumulator) -> Result<SiegertProfile> {
    acc.check_mode(AccumulatorMode::Auto)?;
    let res = finalize_g(acc)?;
    let Domain::Offsets { pitch, offsets } = &res.domain else {
        unreachable!("auto mode yields offsets")
    };
    let mut keys: Vec<i64> = offsets.iter().map(|&(dx, dy)| if dy == 0 { dx } else { dy }).collect();
    let axial = offsets.iter().all(|&(dx, dy)| dx == 0 || dy == 0);
    if !axial {
        return Err(Error::config("offsets", "autocorrelation profile needs offsets along the axes"));
    }
    keys.sort_unstable();
    keys.dedup();
    let mut out = SiegertProfile {
        separation: Vec::with_capacity(keys.len()),
        normalized: Vec::with_capacity(keys.len()),
        stderr: Vec::with_capacity(keys.len()),
        covariance: Vec::with_capacity(keys.len()),
        baseline: Vec::with_capacity(keys.len()),
        n_frames: res.n_frames,
    };
    for key in keys {
        let idx: Vec<usize> = offsets
            .iter()
            .enumerate()
            .filter(|(_, &(dx, dy))| (if dy == 0 { dx } else { dy }) == key)
            .map(|(i, _)| i)
            .collect();
        let m = idx.len() as f64;
        let g = idx.iter().map(|&i| res.values[i]).sum::<f64>() / m;
        let b = idx.iter().map(|&i| res.baseline[i]).sum::<f64>() / m;
        // Conservative: errors of the averaged directions are not independent.
        let e = idx.iter().map(|&i| res.stderr[i]).sum::<f64>() / m;
        out.separation.push(key as f64 * pitch);
        out.covariance.push(g);
        out.baseline.push(b);
        out.normalized.push(1.0 + g / b);
        out.stderr.push(e / b);
    }
    Ok(out)
}

/// Detection probability at `x2` given a detection at `x1`, split into its
/// two terms: `P(x2|x1) ~ <I2(x2)> + G(x1, x2) / <I1(x1)>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalProfile {
    pub grid2: GridSpec,
    pub x1: usize,
    /// `<I2(x2)>`.
    pub broad: Vec<f64>,
    /// `G(x1, x2) / <I1(x1)>`.
    pub narrow: Vec<f64>,
    pub stderr: Vec<f64>,
}

pub fn conditional_probability(acc: &CorrelationAccumulator, x1: usize) -> Result<ConditionalProfile> {
    acc.check_mode(AccumulatorMode::Full)?;
    let State::Full(s) = &acc.state else {
        unreachable!("mode checked")
    };
    if x1 >= s.grid1.len() {
        return Err(Error::config("x1", format!("pixel {x1} outside the arm-1 grid")));
    }
    let res = finalize_g(acc)?;
    let n = acc.n as f64;
    let mean1 = s.s_a.get(x1) / n;
    let scale = s.s_a.sum.iter().map(|v| v.abs()).fold(0.0, f64::max) / n;
    if mean1 <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!("mean arm-1 intensity at pixel {x1} is zero")));
    }
    let n2 = s.grid2.len();
    let row = x1 * n2..(x1 + 1) * n2;
    Ok(ConditionalProfile {
        grid2: s.grid2,
        x1,
        broad: (0..n2).map(|x2| s.s_b.get(x2) / n).collect(),
        narrow: res.values[row.clone()].iter().map(|g| g / mean1).collect(),
        stderr: res.stderr[row].iter().map(|e| e / mean1).collect(),
    })
}
