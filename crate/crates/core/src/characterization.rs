//! Ramsey and relaxation model functions, weighted Levenberg-Marquardt
//! fitting with reduced chi-squared reporting, synthetic shot-noise data,
//! and readout-error mitigation.
//!
//! All model frequencies are quoted in Hz and times in microseconds; the
//! angular conversion happens inside the model evaluations. The frame
//! offset omega_s is always a known input, never a fitted quantity.

use crate::device::angular;
use crate::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("dataset invalid: {0}")]
    Data(String),
    #[error("model parameters invalid: {0}")]
    Params(String),
    #[error("singular normal equations; parameters are degenerate")]
    Singular,
    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),
    #[error("confusion matrix not invertible: p00 + p11 must exceed 1, got {0}")]
    NotInvertible(f64),
}

pub type Result<T> = std::result::Result<T, FitError>;

/// Ramsey model parameters. `delta`, `nu`, and `omega_s` are in Hz, `t2`
/// in microseconds, `kappa` in inverse microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct RamseyParams {
    pub a: f64,
    pub b_offset: f64,
    pub phi: f64,
    pub t2: f64,
    pub delta: f64,
    pub nu: f64,
    pub omega_s: f64,
    pub even_fraction: f64,
    pub kappa: f64,
}

impl RamseyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t2 > 0.0) {
            return Err(FitError::Params(format!("t2 must be positive, got {}", self.t2)));
        }
        if self.nu < 0.0 {
            return Err(FitError::Params(format!("nu must be nonnegative, got {}", self.nu)));
        }
        if !(0.0..=1.0).contains(&self.even_fraction) {
            return Err(FitError::Params(format!(
                "even_fraction must lie in [0, 1], got {}",
                self.even_fraction
            )));
        }
        if self.kappa < 0.0 {
            return Err(FitError::Params(format!("kappa must be nonnegative, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Which fit model is in play.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    /// Even fraction pinned at 1/2: product of two decaying oscillations.
    FixedB,
    /// Two explicit parity branches weighted b and 1-b.
    FreeB,
    /// FixedB times an extra Gaussian envelope exp(-kappa^2 t^2).
    Gaussian,
    /// Exponential relaxation toward a heating floor.
    T1Decay,
}

impl ModelVariant {
    fn param_names(self) -> &'static [&'static str] {
        match self {
            Self::FixedB => &["A", "B", "phi", "t2_us", "delta_hz", "nu_hz"],
            Self::FreeB => &["A", "B", "phi", "t2_us", "delta_hz", "nu_hz", "b"],
            Self::Gaussian => &["A", "B", "phi", "t2_us", "delta_hz", "nu_hz", "kappa_per_us"],
            Self::T1Decay => &["A", "B", "t1_us"],
        }
    }
}

/// (P_x, P_y) at time `t` us.
///
/// FixedB:   A exp(-t/T2) cos(u) cos(v) + B   with u = ang(delta+omega_s) t + phi, v = ang(nu) t
/// FreeB:    branch weights b at u+v and 1-b at u-v
/// Gaussian: FixedB times exp(-kappa^2 t^2)
pub fn ramsey_model(t: f64, p: &RamseyParams, variant: ModelVariant) -> (f64, f64) {
    let u = angular(p.delta + p.omega_s) * t + p.phi;
    let v = angular(p.nu) * t;
    let env = p.a * (-t / p.t2).exp();
    match variant {
        ModelVariant::FixedB => {
            (env * u.cos() * v.cos() + p.b_offset, env * u.sin() * v.cos() + p.b_offset)
        }
        ModelVariant::FreeB => {
            let (b, c) = (p.even_fraction, 1.0 - p.even_fraction);
            (
                env * (b * (u + v).cos() + c * (u - v).cos()) + p.b_offset,
                env * (b * (u + v).sin() + c * (u - v).sin()) + p.b_offset,
            )
        }
        ModelVariant::Gaussian => {
            let g = (-p.kappa * p.kappa * t * t).exp();
            (
                env * g * u.cos() * v.cos() + p.b_offset,
                env * g * u.sin() * v.cos() + p.b_offset,
            )
        }
        ModelVariant::T1Decay => panic!("T1Decay is not a Ramsey model"),
    }
}

/// Excited-state population A exp(-t/T1) + B; the floor B is the heating
/// fraction of the relaxation budget.
pub fn t1_model(t: f64, a: f64, b: f64, t1: f64) -> f64 {
    a * (-t / t1).exp() + b
}

/// Ramsey measurement record; `shots[i] == 0` marks an exact (noiseless)
/// point that enters the fit with unit weight.
#[derive(Debug, Clone, PartialEq)]
pub struct RamseyDataset {
    pub times: Vec<f64>,
    pub p_x: Vec<f64>,
    pub p_y: Vec<f64>,
    pub shots: Vec<u64>,
}

/// Relaxation measurement record with the same shot conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayDataset {
    pub times: Vec<f64>,
    pub p1: Vec<f64>,
    pub shots: Vec<u64>,
}

impl RamseyDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.p_x.len() != n || self.p_y.len() != n || self.shots.len() != n {
            return Err(FitError::Data("columns must have equal lengths".into()));
        }
        if self.p_x.iter().chain(&self.p_y).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(FitError::Data("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_us,p_x,p_y,shots\n");
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{}\n",
                self.times[i], self.p_x[i], self.p_y[i], self.shots[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| FitError::Data("empty file".into()))?;
        if header.trim() != "time_us,p_x,p_y,shots" {
            return Err(FitError::Data(format!("unexpected header {header:?}")));
        }
        let (mut times, mut p_x, mut p_y, mut shots) = (vec![], vec![], vec![], vec![]);
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(FitError::Data(format!("row {} has {} fields", k + 2, f.len())));
            }
            let bad = |e: std::num::ParseFloatError| FitError::Data(format!("row {}: {e}", k + 2));
            times.push(f[0].parse().map_err(bad)?);
            p_x.push(f[1].parse().map_err(bad)?);
            p_y.push(f[2].parse().map_err(bad)?);
            shots.push(
                f[3].parse().map_err(|e| FitError::Data(format!("row {}: {e}", k + 2)))?,
            );
        }
        let ds = Self { times, p_x, p_y, shots };
        ds.validate()?;
        Ok(ds)
    }
}

impl DecayDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.p1.len() != n || self.shots.len() != n {
            return Err(FitError::Data("columns must have equal lengths".into()));
        }
        if self.p1.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(FitError::Data("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_us,p1,shots\n");
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{}\n",
                self.times[i], self.p1[i], self.shots[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| FitError::Data("empty file".into()))?;
        if header.trim() != "time_us,p1,shots" {
            return Err(FitError::Data(format!("unexpected header {header:?}")));
        }
        let (mut times, mut p1, mut shots) = (vec![], vec![], vec![]);
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 3 {
                return Err(FitError::Data(format!("row {} has {} fields", k + 2, f.len())));
            }
            let bad = |e: std::num::ParseFloatError| FitError::Data(format!("row {}: {e}", k + 2));
            times.push(f[0].parse().map_err(bad)?);
            p1.push(f[1].parse().map_err(bad)?);
            shots.push(
                f[2].parse().map_err(|e| FitError::Data(format!("row {}: {e}", k + 2)))?,
            );
        }
        let ds = Self { times, p1, shots };
        ds.validate()?;
        Ok(ds)
    }
}

fn draw_binomial(rng: &mut ChaCha8Rng, prob: f64, shots: u64) -> Result<f64> {
    if !(-1e-9..=1.0 + 1e-9).contains(&prob) {
        return Err(FitError::Params(format!("model probability {prob} outside [0, 1]")));
    }
    let bin = Binomial::new(shots, prob.clamp(0.0, 1.0)).expect("validated probability");
    Ok(bin.sample(rng) as f64 / shots as f64)
}

/// Draws Binomial(shots, p)/shots at every point; deterministic for a given
/// seed. Per point the x draw precedes the y draw. Probabilities may stray
/// from [0, 1] by at most 1e-9 (integrator roundoff) and are clamped.
pub fn sample_ramsey_points(
    times: &[f64],
    p_x: &[f64],
    p_y: &[f64],
    shots: u64,
    seed: u64,
) -> Result<RamseyDataset> {
    if shots == 0 {
        return Err(FitError::Data("shots must be at least 1".into()));
    }
    if p_x.len() != times.len() || p_y.len() != times.len() {
        return Err(FitError::Data("columns must have equal lengths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sx, mut sy) = (Vec::new(), Vec::new());
    for i in 0..times.len() {
        sx.push(draw_binomial(&mut rng, p_x[i], shots)?);
        sy.push(draw_binomial(&mut rng, p_y[i], shots)?);
    }
    Ok(RamseyDataset { times: times.to_vec(), p_x: sx, p_y: sy, shots: vec![shots; times.len()] })
}

/// Shot-sampled excited-state populations, same conventions as
/// [`sample_ramsey_points`].
pub fn sample_decay_points(
    times: &[f64],
    p1: &[f64],
    shots: u64,
    seed: u64,
) -> Result<DecayDataset> {
    if shots == 0 {
        return Err(FitError::Data("shots must be at least 1".into()));
    }
    if p1.len() != times.len() {
        return Err(FitError::Data("columns must have equal lengths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled = Vec::new();
    for &p in p1 {
        sampled.push(draw_binomial(&mut rng, p, shots)?);
    }
    Ok(DecayDataset { times: times.to_vec(), p1: sampled, shots: vec![shots; times.len()] })
}

/// Samples the Ramsey model itself at every delay.
pub fn synth_ramsey(
    p: &RamseyParams,
    variant: ModelVariant,
    times: &[f64],
    shots: u64,
    seed: u64,
) -> Result<RamseyDataset> {
    p.validate()?;
    let (p_x, p_y): (Vec<f64>, Vec<f64>) =
        times.iter().map(|&t| ramsey_model(t, p, variant)).unzip();
    sample_ramsey_points(times, &p_x, &p_y, shots, seed)
}

/// Samples the relaxation model at every delay.
pub fn synth_decay(
    a: f64,
    b: f64,
    t1: f64,
    times: &[f64],
    shots: u64,
    seed: u64,
) -> Result<DecayDataset> {
    if !(t1 > 0.0) {
        return Err(FitError::Params(format!("t1 must be positive, got {t1}")));
    }
    let p1: Vec<f64> = times.iter().map(|&t| t1_model(t, a, b, t1)).collect();
    sample_decay_points(times, &p1, shots, seed)
}

/// Fit outcome: parameter names, values, 1-sigma uncertainties.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub variant: ModelVariant,
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub reduced_chi2: f64,
    pub iterations: usize,
}

impl FitResult {
    /// (value, sigma) looked up by parameter name.
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.names.iter().position(|&n| n == name).map(|i| (self.values[i], self.sigmas[i]))
    }

    pub fn to_report(&self) -> String {
        let mut out = format!("variant: {:?}\nreduced_chi2: {:.6}\n", self.variant, self.reduced_chi2);
        for i in 0..self.names.len() {
            out.push_str(&format!(
                "{}: {:.9e} +- {:.3e}\n",
                self.names[i], self.values[i], self.sigmas[i]
            ));
        }
        out
    }
}

/// Binomial standard error with a floor that keeps p = 0 or 1 points from
/// acquiring infinite weight; shots = 0 marks an exact point (unit weight).
pub fn binomial_sigma(p: f64, shots: u64) -> f64 {
    if shots == 0 {
        return 1.0;
    }
    let s = shots as f64;
    (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / s).sqrt().max(0.5 / s)
}

/// Discrete demodulated spectrum |sum_k z_k exp(-i 2 pi f t_k)| of
/// z = (p_x - B) + i (p_y - B), sampled on a grid four bins per Rayleigh
/// width. Returns (frequency_hz, amplitude) pairs plus the time span.
fn demod_spectrum(ds: &RamseyDataset, b_offset: f64) -> (Vec<(f64, f64)>, f64) {
    let z: Vec<C64> =
        ds.p_x.iter().zip(&ds.p_y).map(|(&x, &y)| C64::new(x - b_offset, y - b_offset)).collect();
    let t0 = ds.times.iter().copied().fold(f64::INFINITY, f64::min);
    let t1 = ds.times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (t1 - t0).max(1e-9);

    let mut sorted = ds.times.clone();
    sorted.sort_by(f64::total_cmp);
    let dt_min = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(span);
    // frequencies in Hz; times are in us
    let f_max = 0.5e6 / dt_min;
    let mut df = 0.25e6 / span;
    while 2.0 * f_max / df > 20_000.0 {
        df *= 2.0;
    }
    let spectrum = |f: f64| -> f64 {
        let w = -2.0 * std::f64::consts::PI * f * 1e-6;
        z.iter()
            .zip(&ds.times)
            .map(|(zk, &tk)| zk * C64::from_polar(1.0, w * tk))
            .sum::<C64>()
            .norm()
    };
    let bins = (2.0 * f_max / df).ceil() as i64;
    let amp =
        (-bins / 2..=bins / 2).map(|k| (k as f64 * df, spectrum(k as f64 * df))).collect();
    (amp, span)
}

/// Up to `k` strongest lines of `amp`, greedily picked with a `min_sep` Hz
/// exclusion zone around each previous pick. Strongest first.
fn spectral_peaks(amp: &[(f64, f64)], k: usize, min_sep: f64) -> Vec<(f64, f64)> {
    let mut peaks: Vec<(f64, f64)> = Vec::with_capacity(k);
    while peaks.len() < k {
        let best = amp
            .iter()
            .copied()
            .filter(|&(f, _)| peaks.iter().all(|&(g, _)| (f - g).abs() > min_sep))
            .fold((0.0, f64::NEG_INFINITY), |m, c| if c.1 > m.1 { c } else { m });
        if !best.1.is_finite() {
            break;
        }
        peaks.push(best);
    }
    peaks
}

/// Spectral initial guess: the discrete spectrum of (p_x - B) + i (p_y - B)
/// carries one line per parity branch at delta + omega_s +- nu.
pub fn auto_guess(ds: &RamseyDataset, omega_s: f64) -> RamseyParams {
    let n = ds.times.len().max(1) as f64;
    let b_offset = (ds.p_x.iter().sum::<f64>() + ds.p_y.iter().sum::<f64>()) / (2.0 * n);
    let (amp, span) = demod_spectrum(ds, b_offset);
    // one Rayleigh width: lines closer than this blur into one peak anyway
    let peaks = spectral_peaks(&amp, 2, 1.0e6 / span);
    let (f1, a1) = peaks[0];
    let (delta, nu) = match peaks.get(1) {
        Some(&(f2, a2)) if a2 > 0.2 * a1 => {
            (0.5 * (f1 + f2) - omega_s, 0.5 * (f1 - f2).abs())
        }
        _ => (f1 - omega_s, 0.0),
    };
    let a = ds
        .p_x
        .iter()
        .zip(&ds.p_y)
        .map(|(&x, &y)| C64::new(x - b_offset, y - b_offset).norm())
        .fold(0.0, f64::max);
    RamseyParams {
        a,
        b_offset,
        phi: 0.0,
        t2: 0.5 * span,
        delta,
        nu,
        omega_s,
        even_fraction: 0.5,
        kappa: 0.0,
    }
}

/// Model values and analytic gradients for one Ramsey point; the Gaussian
/// envelope is parameterized internally by q = kappa^2 so the fit stays
/// well-conditioned through q = 0.
fn ramsey_point(
    t: f64,
    p: &[f64],
    variant: ModelVariant,
    omega_s: f64,
) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let k = angular(1.0);
    let (a, b_off, phi, t2, delta) = (p[0], p[1], p[2], p[3], p[4]);
    let nu = p[5];
    let u = k * (delta + omega_s) * t + phi;
    let v = k * nu * t;
    let decay = (-t / t2).exp();
    match variant {
        ModelVariant::FixedB | ModelVariant::Gaussian => {
            let g = if variant == ModelVariant::Gaussian { (-p[6] * t * t).exp() } else { 1.0 };
            let base = decay * g;
            let (cu, su, cv, sv) = (u.cos(), u.sin(), v.cos(), v.sin());
            let px = a * base * cu * cv + b_off;
            let py = a * base * su * cv + b_off;
            let mut gx = vec![
                base * cu * cv,
                1.0,
                -a * base * su * cv,
                a * base * cu * cv * t / (t2 * t2),
                -a * base * su * cv * k * t,
                -a * base * cu * sv * k * t,
            ];
            let mut gy = vec![
                base * su * cv,
                1.0,
                a * base * cu * cv,
                a * base * su * cv * t / (t2 * t2),
                a * base * cu * cv * k * t,
                -a * base * su * sv * k * t,
            ];
            if variant == ModelVariant::Gaussian {
                gx.push(-t * t * a * base * cu * cv);
                gy.push(-t * t * a * base * su * cv);
            }
            (px, py, gx, gy)
        }
        ModelVariant::FreeB => {
            let b = p[6];
            let (cp, sp) = ((u + v).cos(), (u + v).sin());
            let (cm, sm) = ((u - v).cos(), (u - v).sin());
            let mx = b * cp + (1.0 - b) * cm;
            let my = b * sp + (1.0 - b) * sm;
            let px = a * decay * mx + b_off;
            let py = a * decay * my + b_off;
            let gx = vec![
                decay * mx,
                1.0,
                -a * decay * (b * sp + (1.0 - b) * sm),
                a * decay * mx * t / (t2 * t2),
                -a * decay * (b * sp + (1.0 - b) * sm) * k * t,
                a * decay * (-b * sp + (1.0 - b) * sm) * k * t,
                a * decay * (cp - cm),
            ];
            let gy = vec![
                decay * my,
                1.0,
                a * decay * (b * cp + (1.0 - b) * cm),
                a * decay * my * t / (t2 * t2),
                a * decay * (b * cp + (1.0 - b) * cm) * k * t,
                a * decay * (b * cp - (1.0 - b) * cm) * k * t,
                a * decay * (sp - sm),
            ];
            (px, py, gx, gy)
        }
        ModelVariant::T1Decay => panic!("T1Decay is not a Ramsey model"),
    }
}

/// Weighted Levenberg-Marquardt fit of a Ramsey dataset. Residuals stack
/// both quadratures. When every point carries shot counts the covariance
/// comes straight from the normal equations; for exact (shots = 0) data it
/// is rescaled by the reduced chi-squared.
pub fn fit_ramsey(
    ds: &RamseyDataset,
    variant: ModelVariant,
    omega_s: f64,
    guess: Option<RamseyParams>,
) -> Result<FitResult> {
    ds.validate()?;
    if variant == ModelVariant::T1Decay {
        return Err(FitError::Params("use fit_t1 for relaxation data".into()));
    }
    let names = variant.param_names();
    let n_par = names.len();
    if ds.times.len() < 2 * n_par {
        return Err(FitError::Data(format!(
            "{} points cannot constrain {n_par} parameters (need at least {})",
            ds.times.len(),
            2 * n_par
        )));
    }
    let had_guess = guess.is_some();
    let base = guess.unwrap_or_else(|| auto_guess(ds, omega_s));

    let sig_x: Vec<f64> =
        ds.p_x.iter().zip(&ds.shots).map(|(&p, &s)| binomial_sigma(p, s)).collect();
    let sig_y: Vec<f64> =
        ds.p_y.iter().zip(&ds.shots).map(|(&p, &s)| binomial_sigma(p, s)).collect();

    let eval = |p: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut r = Vec::with_capacity(2 * ds.times.len());
        let mut j = Vec::with_capacity(2 * ds.times.len());
        for (i, &t) in ds.times.iter().enumerate() {
            let (px, py, gx, gy) = ramsey_point(t, p, variant, omega_s);
            r.push((px - ds.p_x[i]) / sig_x[i]);
            j.push(gx.iter().map(|d| d / sig_x[i]).collect());
            r.push((py - ds.p_y[i]) / sig_y[i]);
            j.push(gy.iter().map(|d| d / sig_y[i]).collect());
        }
        (r, j)
    };

    let p0_of = |delta: f64, nu: f64| -> Vec<f64> {
        let mut p = vec![base.a, base.b_offset, base.phi, base.t2, delta, nu];
        match variant {
            ModelVariant::FreeB => p.push(base.even_fraction),
            ModelVariant::Gaussian => p.push(base.kappa * base.kappa),
            _ => {}
        }
        p
    };

    // Multi-start over spectral line pairs. The slow branch of a two-tone
    // signal is weakly identifiable over a short window: a single start can
    // settle in a neighboring basin whose residuals the data cannot reject,
    // with error bars from that basin's local curvature. Comparing the
    // converged chi-squared across candidate basins restores the global
    // minimum. An explicit caller guess suppresses the search.
    let mut starts: Vec<(f64, f64)> = vec![(base.delta, base.nu)];
    if !had_guess {
        let (amp, span) = demod_spectrum(ds, base.b_offset);
        let peaks = spectral_peaks(&amp, 4, 0.75e6 / span);
        let quantum = 0.25e6 / span;
        for (i, &(fi, _)) in peaks.iter().enumerate() {
            starts.push((fi - omega_s, 0.0));
            starts.push((fi - omega_s, quantum));
            for &(fj, _) in &peaks[i + 1..] {
                starts.push((0.5 * (fi + fj) - omega_s, 0.5 * (fi - fj).abs()));
            }
        }
        starts.dedup_by(|a, b| {
            (a.0 - b.0).abs() < 0.5 * quantum && (a.1 - b.1).abs() < 0.5 * quantum
        });
    }

    let uniform = ds.shots.iter().all(|&s| s == 0);
    let mut best: Option<LmOutput> = None;
    let mut last_err = None;
    for (delta, nu) in starts {
        match levenberg_marquardt(p0_of(delta, nu), &eval) {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.chi2 < b.chi2) {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(lm) = best else {
        return Err(last_err.expect("at least one start was attempted"));
    };
    let dof = (2 * ds.times.len()).saturating_sub(n_par).max(1) as f64;
    let reduced_chi2 = lm.chi2 / dof;
    let scale = if uniform { reduced_chi2 } else { 1.0 };
    let mut values = lm.params;
    let mut sigmas: Vec<f64> = (0..n_par).map(|i| (lm.cov[i][i] * scale).max(0.0).sqrt()).collect();

    // canonical form: positive amplitude, phase in (-pi, pi], nu >= 0
    if values[0] < 0.0 {
        values[0] = -values[0];
        values[2] += std::f64::consts::PI;
    }
    values[2] = wrap_angle(values[2]);
    if values[5] < 0.0 {
        values[5] = -values[5];
        // negating nu exchanges the parity branches
        if variant == ModelVariant::FreeB {
            values[6] = 1.0 - values[6];
        }
    }
    if variant == ModelVariant::Gaussian {
        let q = values[6];
        let sq = sigmas[6];
        let kappa = q.max(0.0).sqrt();
        values[6] = kappa;
        // error propagation through kappa = sqrt(q); near zero the flat
        // direction makes kappa itself uncertain at the sqrt(sigma_q) scale
        sigmas[6] = if kappa > sq.sqrt() { sq / (2.0 * kappa) } else { sq.max(0.0).sqrt() };
    }
    Ok(FitResult {
        variant,
        names: names.to_vec(),
        values,
        sigmas,
        reduced_chi2,
        iterations: lm.iterations,
    })
}

/// Weighted fit of relaxation data to A exp(-t/T1) + B.
pub fn fit_t1(ds: &DecayDataset, guess: Option<(f64, f64, f64)>) -> Result<FitResult> {
    ds.validate()?;
    if ds.times.len() < 6 {
        return Err(FitError::Data(format!(
            "{} points cannot constrain 3 parameters (need at least 6)",
            ds.times.len()
        )));
    }
    let p0 = guess.map(|(a, b, t1)| vec![a, b, t1]).unwrap_or_else(|| {
        let tail = *ds.p1.last().unwrap();
        let head = ds.p1[0];
        let span = ds.times.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - ds.times.iter().copied().fold(f64::INFINITY, f64::min);
        vec![head - tail, tail, (span / 3.0).max(1e-6)]
    });
    let sig: Vec<f64> = ds.p1.iter().zip(&ds.shots).map(|(&p, &s)| binomial_sigma(p, s)).collect();
    let eval = |p: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut r = Vec::with_capacity(ds.times.len());
        let mut j = Vec::with_capacity(ds.times.len());
        for (i, &t) in ds.times.iter().enumerate() {
            let e = (-t / p[2]).exp();
            r.push((p[0] * e + p[1] - ds.p1[i]) / sig[i]);
            j.push(vec![e / sig[i], 1.0 / sig[i], p[0] * e * t / (p[2] * p[2]) / sig[i]]);
        }
        (r, j)
    };
    let uniform = ds.shots.iter().all(|&s| s == 0);
    let lm = levenberg_marquardt(p0, eval)?;
    let dof = ds.times.len().saturating_sub(3).max(1) as f64;
    let reduced_chi2 = lm.chi2 / dof;
    let scale = if uniform { reduced_chi2 } else { 1.0 };
    let sigmas = (0..3).map(|i| (lm.cov[i][i] * scale).max(0.0).sqrt()).collect();
    Ok(FitResult {
        variant: ModelVariant::T1Decay,
        names: ModelVariant::T1Decay.param_names().to_vec(),
        values: lm.params,
        sigmas,
        reduced_chi2,
        iterations: lm.iterations,
    })
}

fn wrap_angle(phi: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

struct LmOutput {
    params: Vec<f64>,
    cov: Vec<Vec<f64>>,
    chi2: f64,
    iterations: usize,
}

/// Damped Gauss-Newton with Marquardt diagonal scaling: lambda starts at
/// 1e-3, divides by 10 on success, multiplies by 10 on rejection; stops on
/// relative chi-squared change below 1e-10 or 200 iterations.
fn levenberg_marquardt<F>(init: Vec<f64>, eval: F) -> Result<LmOutput>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    const MAX_ITER: usize = 200;
    let n = init.len();
    let mut params = init;
    let (mut r, mut jac) = eval(&params);
    let mut chi2: f64 = r.iter().map(|x| x * x).sum();
    if !chi2.is_finite() {
        return Err(FitError::Data("initial guess evaluates to a non-finite residual".into()));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITER {
        iterations += 1;
        let jtj = normal_matrix(&jac, n);
        let jtr = gradient(&jac, &r, n);
        let mut accepted = false;
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[k][k] += lambda * jtj[k][k].max(1e-30);
            }
            let rhs: Vec<f64> = jtr.iter().map(|g| -g).collect();
            if let Some(step) = solve_linear(a, rhs) {
                let trial: Vec<f64> = params.iter().zip(&step).map(|(p, d)| p + d).collect();
                let (r_t, j_t) = eval(&trial);
                let c_t: f64 = r_t.iter().map(|x| x * x).sum();
                if c_t.is_finite() && c_t <= chi2 {
                    let rel = (chi2 - c_t) / chi2.max(f64::MIN_POSITIVE);
                    params = trial;
                    r = r_t;
                    jac = j_t;
                    chi2 = c_t;
                    lambda = (lambda * 0.1).max(1e-15);
                    accepted = true;
                    if rel < 1e-10 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                // the step size has collapsed to nothing: a stationary point
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
        if !accepted {
            break;
        }
    }
    if !converged && iterations >= MAX_ITER {
        return Err(FitError::NonConvergence(MAX_ITER));
    }
    let cov = invert(normal_matrix(&jac, n)).ok_or(FitError::Singular)?;
    Ok(LmOutput { params, cov, chi2, iterations })
}

fn normal_matrix(jac: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for row in jac {
        for i in 0..n {
            for k in i..n {
                a[i][k] += row[i] * row[k];
            }
        }
    }
    for i in 0..n {
        for k in 0..i {
            a[i][k] = a[k][i];
        }
    }
    a
}

fn gradient(jac: &[Vec<f64>], r: &[f64], n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n];
    for (row, &ri) in jac.iter().zip(r) {
        for i in 0..n {
            g[i] += row[i] * ri;
        }
    }
    g
}

/// Gaussian elimination with partial pivoting; None on a numerically
/// singular pivot.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

fn invert(a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        cols.push(solve_linear(a.clone(), e)?);
    }
    let mut inv = vec![vec![0.0; n]; n];
    for (k, col) in cols.iter().enumerate() {
        for i in 0..n {
            inv[i][k] = col[i];
        }
    }
    Some(inv)
}

/// Per-qubit symmetric readout description: P(read 0 | prepared 0) and
/// P(read 1 | prepared 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMatrix {
    pub p00: f64,
    pub p11: f64,
}

impl ConfusionMatrix {
    pub fn new(p00: f64, p11: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p00) || !(0.0..=1.0).contains(&p11) {
            return Err(FitError::Params(format!("probabilities out of range: {p00}, {p11}")));
        }
        if p00 + p11 <= 1.0 {
            return Err(FitError::NotInvertible(p00 + p11));
        }
        Ok(Self { p00, p11 })
    }

    pub fn ideal() -> Self {
        Self { p00: 1.0, p11: 1.0 }
    }

    /// Contrast factor applied to every measured eigenvalue.
    fn scale(&self) -> f64 {
        self.p00 + self.p11 - 1.0
    }

    /// Constant bias on a single measured eigenvalue.
    fn bias(&self) -> f64 {
        self.p00 - self.p11
    }
}

/// Forward readout model on a Pauli expectation measured over `support`:
/// one qubit picks up scale and bias; products of several measured qubits
/// are treated with uncorrelated scales (biases average out in products
/// only when they vanish; the mean-mitigation convention keeps the scale
/// factors alone).
pub fn apply_confusion(expectation: f64, support: &[usize], cms: &[ConfusionMatrix]) -> f64 {
    match support {
        [q] => cms[*q].scale() * expectation + cms[*q].bias(),
        _ => support.iter().fold(expectation, |acc, &q| acc * cms[q].scale()),
    }
}

/// Inverse of [`apply_confusion`]: exact whenever every involved qubit has
/// p00 + p11 > 1.
pub fn mitigate(raw: f64, support: &[usize], cms: &[ConfusionMatrix]) -> Result<f64> {
    for &q in support {
        if cms[q].scale() <= 0.0 {
            return Err(FitError::NotInvertible(cms[q].p00 + cms[q].p11));
        }
    }
    Ok(match support {
        [q] => (raw - cms[*q].bias()) / cms[*q].scale(),
        _ => support.iter().fold(raw, |acc, &q| acc / cms[q].scale()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table1_q22() -> RamseyParams {
        RamseyParams {
            a: 0.5,
            b_offset: 0.5,
            phi: 0.0,
            t2: 84.0,
            delta: -9088.0,
            nu: 3308.0,
            omega_s: 5000.0,
            even_fraction: 0.5,
            kappa: 0.0,
        }
    }

    #[test]
    fn model_limits() {
        let p = table1_q22();
        let (px, py) = ramsey_model(0.0, &p, ModelVariant::FixedB);
        assert_abs_diff_eq!(px, p.a + p.b_offset, epsilon = 1e-15);
        assert_abs_diff_eq!(py, p.b_offset, epsilon = 1e-15);

        // nu t = pi/2 kills the parity envelope
        let t = 0.25e6 / p.nu;
        let (px, _) = ramsey_model(t, &p, ModelVariant::FixedB);
        assert_abs_diff_eq!(px, p.b_offset, epsilon = 1e-12);

        assert_abs_diff_eq!(t1_model(0.0, 0.9, 0.043, 120.0), 0.943, epsilon = 1e-15);
        assert_abs_diff_eq!(t1_model(1e9, 0.9, 0.043, 120.0), 0.043, epsilon = 1e-15);
    }

    #[test]
    fn half_half_branches_collapse_to_the_product_form() {
        let mut p = table1_q22();
        p.phi = 0.7;
        p.even_fraction = 0.5;
        for k in 0..200 {
            let t = 1.7 * k as f64;
            let (fx, fy) = ramsey_model(t, &p, ModelVariant::FixedB);
            let (gx, gy) = ramsey_model(t, &p, ModelVariant::FreeB);
            assert_abs_diff_eq!(fx, gx, epsilon = 1e-12);
            assert_abs_diff_eq!(fy, gy, epsilon = 1e-12);
        }
    }

    #[test]
    fn synthetic_data_is_deterministic_and_unbiased() {
        let p = table1_q22();
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 2.0).collect();
        let d1 = synth_ramsey(&p, ModelVariant::FixedB, &times, 1024, 7).unwrap();
        let d2 = synth_ramsey(&p, ModelVariant::FixedB, &times, 1024, 7).unwrap();
        assert_eq!(d1, d2);
        let d3 = synth_ramsey(&p, ModelVariant::FixedB, &times, 1024, 8).unwrap();
        assert_ne!(d1, d3);

        // law of large numbers at one million shots
        let big = synth_ramsey(&p, ModelVariant::FixedB, &[3.0, 17.0], 1_000_000, 3).unwrap();
        for (i, &t) in big.times.iter().enumerate() {
            let (mx, my) = ramsey_model(t, &p, ModelVariant::FixedB);
            assert!((big.p_x[i] - mx).abs() <= 3.0 * binomial_sigma(mx, 1_000_000));
            assert!((big.p_y[i] - my).abs() <= 3.0 * binomial_sigma(my, 1_000_000));
        }

        let mut flat = table1_q22();
        flat.a = 0.0;
        let d = synth_ramsey(&flat, ModelVariant::FixedB, &times, 4096, 11).unwrap();
        for &px in &d.p_x {
            assert!((px - flat.b_offset).abs() < 0.05);
        }
    }

    #[test]
    fn guess_locates_both_spectral_lines() {
        let p = table1_q22();
        let times: Vec<f64> = (0..120).map(|k| k as f64 * 2.5).collect();
        let (px, py): (Vec<f64>, Vec<f64>) =
            times.iter().map(|&t| ramsey_model(t, &p, ModelVariant::FixedB)).unzip();
        let ds = RamseyDataset { times, p_x: px, p_y: py, shots: vec![0; 120] };
        let g = auto_guess(&ds, p.omega_s);
        assert!((g.delta - p.delta).abs() < 1.5e3, "delta guess {}", g.delta);
        assert!((g.nu - p.nu).abs() < 1.5e3, "nu guess {}", g.nu);
    }

    #[test]
    fn noiseless_round_trip_is_exact() {
        for (variant, tweak) in [
            (ModelVariant::FixedB, None),
            (ModelVariant::FreeB, Some(0.3)),
            (ModelVariant::Gaussian, None),
        ] {
            let mut p = table1_q22();
            p.phi = 0.4;
            if let Some(b) = tweak {
                p.even_fraction = b;
            }
            if variant == ModelVariant::Gaussian {
                p.kappa = 0.02;
            }
            let times: Vec<f64> = (0..80).map(|k| k as f64 * 3.0).collect();
            let (px, py): (Vec<f64>, Vec<f64>) =
                times.iter().map(|&t| ramsey_model(t, &p, variant)).unzip();
            let ds = RamseyDataset { times, p_x: px, p_y: py, shots: vec![0; 80] };
            let fit = fit_ramsey(&ds, variant, p.omega_s, None).unwrap();
            let rel = |name: &str, want: f64| {
                let (got, _) = fit.get(name).unwrap();
                assert!(
                    (got - want).abs() <= 1e-6 * want.abs().max(1e-3),
                    "{variant:?} {name}: got {got}, want {want}"
                );
            };
            rel("A", p.a);
            rel("B", p.b_offset);
            rel("phi", p.phi);
            rel("t2_us", p.t2);
            rel("delta_hz", p.delta);
            rel("nu_hz", p.nu);
            if variant == ModelVariant::FreeB {
                rel("b", p.even_fraction);
            }
            if variant == ModelVariant::Gaussian {
                rel("kappa_per_us", p.kappa);
            }
            assert!(fit.reduced_chi2 < 1e-12);
        }
    }

    #[test]
    fn shot_noise_round_trip_recovers_frequencies() {
        let p = table1_q22();
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 300.0 / 49.0).collect();
        let ds = synth_ramsey(&p, ModelVariant::FixedB, &times, 1024, 42).unwrap();
        let fit = fit_ramsey(&ds, ModelVariant::FixedB, p.omega_s, None).unwrap();
        let (nu, s_nu) = fit.get("nu_hz").unwrap();
        let (delta, s_delta) = fit.get("delta_hz").unwrap();
        assert!((nu - p.nu).abs() <= 3.0 * s_nu, "nu {nu} +- {s_nu}");
        assert!((delta - p.delta).abs() <= 3.0 * s_delta, "delta {delta} +- {s_delta}");
        assert!(
            fit.reduced_chi2 > 0.7 && fit.reduced_chi2 < 1.3,
            "reduced chi2 {}",
            fit.reduced_chi2
        );
    }

    #[test]
    fn parity_weight_misfit_shows_in_chi2() {
        let mut p = table1_q22();
        p.even_fraction = 0.368;
        let times: Vec<f64> = (0..60).map(|k| k as f64 * 250.0 / 59.0).collect();
        let ds = synth_ramsey(&p, ModelVariant::FreeB, &times, 4096, 5).unwrap();

        let wrong = fit_ramsey(&ds, ModelVariant::FixedB, p.omega_s, None).unwrap();
        let right = fit_ramsey(&ds, ModelVariant::FreeB, p.omega_s, None).unwrap();
        assert!(wrong.reduced_chi2 > 3.0, "fixed-b chi2 {}", wrong.reduced_chi2);
        assert!(right.reduced_chi2 < 1.5, "free-b chi2 {}", right.reduced_chi2);
        let (b, s_b) = right.get("b").unwrap();
        assert!((b - 0.368).abs() <= 3.0 * s_b, "b {b} +- {s_b}");
    }

    #[test]
    fn kappa_on_plain_exponential_data_is_consistent_with_zero() {
        let p = table1_q22();
        let times: Vec<f64> = (0..60).map(|k| k as f64 * 4.0).collect();
        let ds = synth_ramsey(&p, ModelVariant::FixedB, &times, 2048, 9).unwrap();
        let fit = fit_ramsey(&ds, ModelVariant::Gaussian, p.omega_s, None).unwrap();
        let (kappa, s_kappa) = fit.get("kappa_per_us").unwrap();
        assert!(kappa <= 2.0 * s_kappa, "kappa {kappa} +- {s_kappa}");
    }

    #[test]
    fn relaxation_fit_recovers_the_heating_floor() {
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 15.0).collect();
        let ds = synth_decay(0.9, 0.043, 120.0, &times, 8192, 21).unwrap();
        let fit = fit_t1(&ds, None).unwrap();
        let (b, s_b) = fit.get("B").unwrap();
        let (t1, s_t1) = fit.get("t1_us").unwrap();
        assert!((b - 0.043).abs() <= 3.0 * s_b, "B {b} +- {s_b}");
        assert!((t1 - 120.0).abs() <= 3.0 * s_t1, "T1 {t1} +- {s_t1}");
    }

    #[test]
    fn insufficient_points_are_rejected() {
        let ds = RamseyDataset {
            times: vec![0.0, 1.0, 2.0],
            p_x: vec![0.5; 3],
            p_y: vec![0.5; 3],
            shots: vec![100; 3],
        };
        assert!(matches!(
            fit_ramsey(&ds, ModelVariant::FixedB, 0.0, None),
            Err(FitError::Data(_))
        ));
    }

    #[test]
    fn mitigation_inverts_the_readout_model() {
        let cms = vec![
            ConfusionMatrix::new(0.95, 0.95).unwrap(),
            ConfusionMatrix::new(0.99, 0.93).unwrap(),
            ConfusionMatrix::new(0.97, 0.9).unwrap(),
        ];
        assert_abs_diff_eq!(
            mitigate(0.9, &[0], &[ConfusionMatrix::new(0.95, 0.95).unwrap()]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let ident = vec![ConfusionMatrix::ideal()];
        assert_abs_diff_eq!(apply_confusion(0.37, &[0], &ident), 0.37, epsilon = 1e-15);
        assert_abs_diff_eq!(mitigate(0.37, &[0], &ident).unwrap(), 0.37, epsilon = 1e-15);

        for x in [-1.0, -0.4, 0.0, 0.2, 0.77, 1.0] {
            for support in [vec![1], vec![0, 2], vec![0, 1, 2]] {
                let fwd = apply_confusion(x, &support, &cms);
                assert_abs_diff_eq!(mitigate(fwd, &support, &cms).unwrap(), x, epsilon = 1e-12);
            }
        }
        assert!(ConfusionMatrix::new(0.5, 0.5).is_err());
    }

    #[test]
    fn dataset_csv_round_trips() {
        let p = table1_q22();
        let times: Vec<f64> = (0..10).map(|k| k as f64 * 7.0 / 3.0).collect();
        let ds = synth_ramsey(&p, ModelVariant::FixedB, &times, 512, 2).unwrap();
        let back = RamseyDataset::from_csv(&ds.to_csv()).unwrap();
        assert_eq!(ds, back);

        let dd = synth_decay(0.8, 0.05, 90.0, &times, 512, 2).unwrap();
        let back = DecayDataset::from_csv(&dd.to_csv()).unwrap();
        assert_eq!(dd, back);
        assert!(RamseyDataset::from_csv("time_us,nope\n").is_err());
    }
}
