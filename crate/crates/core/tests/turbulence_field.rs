#[path = "common/spectra.rs"]
mod spectra;

use std::time::Instant;

use spectra::{loglog_slope, mean_std, vertical_longitudinal_spectrum};
use swarmwind::turbulence::{synthesize_field, TurbulenceSpec, TurbulentField};

#[test]
fn default_grid_statistics() {
    let spec = TurbulenceSpec::default();
    let start = Instant::now();
    let field = synthesize_field(&spec).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "generation took {elapsed:.1} s");

    for grid in field.grids() {
        let (m, s) = mean_std(grid);
        assert!(m.abs() < 0.05 * spec.target_sigma, "mean {m}");
        assert!((0.475..=0.525).contains(&s), "std {s}");
    }

    let (div, grad) = field.divergence_stats();
    assert!(div < 0.02 * grad, "divergence {div} vs gradient {grad}");

    let spectrum = vertical_longitudinal_spectrum(&field);
    let slope = loglog_slope(&spectrum, 0.02, 0.2);
    assert!((slope + 5.0 / 3.0).abs() < 0.3, "slope {slope}");
}

#[test]
fn different_seeds_are_consistent_but_distinct() {
    let base = TurbulenceSpec {
        domain_size: [100.0, 100.0, 200.0],
        grid: [24, 24, 32],
        n_modes: 192,
        length_scale: 25.0,
        target_sigma: 0.7,
        ..TurbulenceSpec::default()
    };
    let a = synthesize_field(&base).unwrap();
    let b = synthesize_field(&TurbulenceSpec { rng_seed: 77, ..base.clone() }).unwrap();
    for (ga, gb) in a.grids().iter().zip(b.grids()) {
        let (sa, sb) = (mean_std(ga).1, mean_std(gb).1);
        assert!((sa - sb).abs() <= 0.1 * sa.max(sb));
    }
    assert_ne!(a.grid_w, b.grid_w);
}

#[test]
fn file_round_trip_preserves_header_and_single_precision_values() {
    let spec = TurbulenceSpec {
        domain_size: [80.0, 60.0, 120.0],
        grid: [16, 12, 20],
        n_modes: 60,
        length_scale: 20.0,
        target_sigma: 1.3,
        rng_seed: 4,
        sigma_profile: Vec::new(),
    };
    let field = synthesize_field(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wind.bin");
    field.save(&path).unwrap();
    let back = TurbulentField::load(&path).unwrap();
    assert_eq!(back.spec.grid, spec.grid);
    assert_eq!(back.spec.domain_size, spec.domain_size);
    assert_eq!(back.spec.target_sigma, spec.target_sigma);
    assert_eq!(back.sigma0, None);
    for (orig, read) in field.grids().iter().zip(back.grids()) {
        for (o, r) in orig.iter().zip(read) {
            assert_eq!(*r, *o as f32 as f64);
        }
    }
    assert!(TurbulentField::load(&dir.path().join("missing.bin")).is_err());
}
