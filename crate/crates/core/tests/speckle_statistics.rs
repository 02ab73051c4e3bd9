//! Intensity statistics of generated speckle frames.

use ghost_core::field_grid::GridSpec;
use ghost_core::speckle_source::{SourceMode, SourceSpec, SpeckleGenerator};

/// `(contrast, <I^2>/<I>^2)` pooled over every pixel of `frames` frames.
fn moments(spec: &SourceSpec, grid: GridSpec, frames: u64) -> (f64, f64) {
    let gen = SpeckleGenerator::new(spec, &grid).unwrap();
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0.0);
    for seed in 0..frames {
        for v in gen.sample(seed).intensity().values() {
            s1 += v;
            s2 += v * v;
            n += 1.0;
        }
    }
    let mean = s1 / n;
    let second = s2 / n;
    ((second - mean * mean).sqrt() / mean, second / (mean * mean))
}

#[test]
fn physical_speckle_is_fully_developed() {
    let (contrast, ratio) = moments(&SourceSpec::default(), GridSpec::square(256, 6.0).unwrap(), 60);
    assert!((contrast - 1.0).abs() < 0.04, "contrast {contrast}");
    assert!((ratio - 2.0).abs() < 0.08, "second moment {ratio}");
}

#[test]
fn spectral_speckle_is_fully_developed() {
    let spec = SourceSpec {
        mode: SourceMode::Spectral,
        ..SourceSpec::default()
    };
    let (contrast, ratio) = moments(&spec, GridSpec::square(128, 6.0).unwrap(), 200);
    assert!((contrast - 1.0).abs() < 0.04, "contrast {contrast}");
    assert!((ratio - 2.0).abs() < 0.08, "second moment {ratio}");
}

#[test]
fn mean_intensity_follows_the_target() {
    let spec = SourceSpec {
        mode: SourceMode::Spectral,
        mean_intensity: 3.5,
        ..SourceSpec::default()
    };
    let gen = SpeckleGenerator::new(&spec, &GridSpec::square(64, 6.0).unwrap()).unwrap();
    let mean: f64 = (0..200).map(|s| gen.sample(s).intensity().mean()).sum::<f64>() / 200.0;
    assert!((mean - 3.5).abs() < 0.1, "{mean}");
}
