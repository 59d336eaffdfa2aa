//! Transect spectra and power-law fits used as independent checks on
//! generated turbulence.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use swarmwind::turbulence::TurbulentField;

/// Removes the least-squares line from a series.
pub fn detrend(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64 - mx) * (v - my))
        .sum();
    let sxx: f64 = (0..y.len()).map(|i| (i as f64 - mx).powi(2)).sum();
    let b = sxy / sxx;
    y.iter()
        .enumerate()
        .map(|(i, v)| v - my - b * (i as f64 - mx))
        .collect()
}

/// Mean Hann-windowed periodogram of `w` along every vertical transect,
/// as (wavenumber rad/m, power) for bins 1..Nz/2.
pub fn vertical_longitudinal_spectrum(field: &TurbulentField) -> Vec<(f64, f64)> {
    let [nx, ny, nz] = field.spec.grid;
    let dz = field.spec.spacing()[2];
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nz);
    let hann: Vec<f64> = (0..nz)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nz as f64).cos())
        .collect();
    let mut power = vec![0.0; nz / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); nz];
    for j in 0..ny {
        for i in 0..nx {
            let column: Vec<f64> = (0..nz).map(|k| field.grid_w[field.index(i, j, k)]).collect();
            for ((b, v), h) in buf.iter_mut().zip(detrend(&column)).zip(&hann) {
                *b = Complex::new(v * h, 0.0);
            }
            fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p += c.norm_sqr();
            }
        }
    }
    let transects = (nx * ny) as f64;
    (1..=nz / 2)
        .map(|b| {
            let k = 2.0 * std::f64::consts::PI * b as f64 / (nz as f64 * dz);
            (k, power[b] / transects)
        })
        .collect()
}

/// Least-squares slope of ln(power) against ln(k) over `[lo, hi]`.
pub fn loglog_slope(spectrum: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let pts: Vec<(f64, f64)> = spectrum
        .iter()
        .filter(|(k, _)| *k >= lo && *k <= hi)
        .map(|(k, p)| (k.ln(), p.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}
