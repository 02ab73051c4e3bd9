use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field_grid::{ComplexField, GridSpec};

/// How a mask was built; analytic kinds have closed-form diffraction
/// patterns in `oracle`.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskKind {
    Uniform,
    SingleSlit { width: f64 },
    /// Opaque needle of diameter `needle` centered in a slit of width `slit`.
    NeedleInSlit { needle: f64, slit: f64 },
    /// Two slits of width `width` whose centers are `separation` apart.
    DoubleSlit { width: f64, separation: f64 },
    Custom { source: String },
}

/// Complex amplitude transmission on a grid, `|T| <= 1`.
///
/// The analytic masks are one-dimensional (functions of x, uniform in y) and
/// are rasterized by pixel coverage: each sample holds the open fraction of
/// its pixel, so edges between samples are not lost.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    kind: MaskKind,
    field: Arc<ComplexField>,
}

impl ObjectMask {
    pub fn uniform(grid: GridSpec) -> Self {
        ObjectMask {
            kind: MaskKind::Uniform,
            field: Arc::new(ComplexField::constant(grid, Complex64::new(1.0, 0.0))),
        }
    }

    pub fn single_slit(grid: GridSpec, width: f64) -> Result<Self> {
        positive("slit_um", width)?;
        Ok(Self::from_intervals(grid, MaskKind::SingleSlit { width }, &[(-0.5 * width, 0.5 * width)]))
    }

    pub fn needle_in_slit(grid: GridSpec, needle: f64, slit: f64) -> Result<Self> {
        positive("needle_um", needle)?;
        positive("slit_um", slit)?;
        if needle >= slit {
            return Err(Error::config(
                "needle_um",
                format!("needle ({needle} um) must be narrower than the slit ({slit} um)"),
            ));
        }
        let (h, n) = (0.5 * slit, 0.5 * needle);
        Ok(Self::from_intervals(
            grid,
            MaskKind::NeedleInSlit { needle, slit },
            &[(-h, -n), (n, h)],
        ))
    }

    pub fn double_slit(grid: GridSpec, width: f64, separation: f64) -> Result<Self> {
        positive("slit_um", width)?;
        positive("separation_um", separation)?;
        if separation <= width {
            return Err(Error::config(
                "separation_um",
                format!("slits overlap: separation {separation} um <= width {width} um"),
            ));
        }
        let (c, h) = (0.5 * separation, 0.5 * width);
        Ok(Self::from_intervals(
            grid,
            MaskKind::DoubleSlit { width, separation },
            &[(-c - h, -c + h), (c - h, c + h)],
        ))
    }

    /// Arbitrary transmission; rejects values with `|T| > 1`.
    pub fn custom(grid: GridSpec, values: Vec<Complex64>, source: impl Into<String>) -> Result<Self> {
        let field = ComplexField::new(grid, values)?;
        if let Some(v) = field.values().iter().find(|v| v.norm() > 1.0 + 1e-12) {
            return Err(Error::config("object", format!("transmission modulus {} exceeds 1", v.norm())));
        }
        Ok(ObjectMask {
            kind: MaskKind::Custom { source: source.into() },
            field: Arc::new(field),
        })
    }

    /// Loads an 8-bit graymap whose pixel count matches the grid; gray level
    /// `v` becomes the real transmission `v / 255`.
    pub fn from_pgm(grid: GridSpec, path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::config("object_path", format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        if w as usize != grid.nx() || h as usize != grid.ny() {
            return Err(Error::config(
                "object_path",
                format!("image is {w}x{h}, grid is {}x{}", grid.nx(), grid.ny()),
            ));
        }
        let values = img
            .pixels()
            .map(|p| Complex64::new(p.0[0] as f64 / 255.0, 0.0))
            .collect();
        Self::custom(grid, values, path.display().to_string())
    }

    fn from_intervals(grid: GridSpec, kind: MaskKind, open: &[(f64, f64)]) -> Self {
        let p = grid.pitch();
        let row: Vec<f64> = (0..grid.nx())
            .map(|i| {
                let (a, b) = (grid.x(i) - 0.5 * p, grid.x(i) + 0.5 * p);
                let covered: f64 = open.iter().map(|&(lo, hi)| (b.min(hi) - a.max(lo)).max(0.0)).sum();
                (covered / p).min(1.0)
            })
            .collect();
        let values = (0..grid.ny())
            .flat_map(|_| row.iter().map(|&t| Complex64::new(t, 0.0)))
            .collect();
        ObjectMask {
            kind,
            field: Arc::new(ComplexField::from_parts(grid, values)),
        }
    }

    pub fn kind(&self) -> &MaskKind {
        &self.kind
    }

    pub fn grid(&self) -> &GridSpec {
        self.field.grid()
    }

    pub fn transmission(&self) -> &ComplexField {
        &self.field
    }

    pub(crate) fn shared(&self) -> Arc<ComplexField> {
        Arc::clone(&self.field)
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be > 0, got {v}")))
    }
}

/// Pixel-wise product of a field with the mask transmission.
pub fn apply_object(field: &ComplexField, mask: &ObjectMask) -> Result<ComplexField> {
    mask.grid().ensure_same(field.grid(), "object mask")?;
    let values = field
        .values()
        .iter()
        .zip(mask.transmission().values())
        .map(|(a, t)| a * t)
        .collect();
    Ok(ComplexField::from_parts(*field.grid(), values))
}
