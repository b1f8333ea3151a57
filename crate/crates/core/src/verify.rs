//! Executable theory checks: transform identities, the convolution theorem,
//! filter/convolution equivalence and gradient correctness.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::disentangle::{modulate, recombine, subtract_invariant, FrequencyFilter};
use crate::error::Result;
use crate::model::{Batch, Model, ModelConfig};
use crate::numcore::gradcheck::{finite_difference_check_with, GradientTamper};
use crate::numcore::{ParamSet, RealArray};
use crate::spectral::{circular_convolve, forward_rfft, inverse_rfft, irfft_1d, kernels, rfft_1d};
use crate::train::{loss_node, FreqLoss};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error < self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{:<width$}  max error {:.3e}  tolerance {:.0e}  {}\n",
                    c.name,
                    c.max_error,
                    c.tolerance,
                    if c.passed() { "PASS" } else { "FAIL" }
                )
            })
            .collect()
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn fft_roundtrip(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for l in [7, 8, 96, 337] {
        let w = RealArray::from_vec(&[l, 3], random_vec(rng, 3 * l))?;
        let back = inverse_rfft(&forward_rfft(&w)?)?;
        worst = worst.max(back.max_abs_diff(&w));
    }
    Ok(worst)
}

pub fn naive_dft_agreement(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for l in 2..=32 {
        let x = random_vec(rng, l);
        let (re, im) = rfft_1d(&x)?;
        for k in 0..kernels::bins_for(l) {
            let (mut r, mut i) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / l as f64;
                r += v * a.cos();
                i += v * a.sin();
            }
            worst = worst.max((re[k] - r).abs()).max((im[k] - i).abs());
        }
    }
    Ok(worst)
}

pub fn parseval(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for l in [7, 8, 96, 337] {
        let x = random_vec(rng, l);
        let (re, im) = rfft_1d(&x)?;
        let f = re.len();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let mut spec = 0.0;
        for k in 0..f {
            let w = if k == 0 || (l % 2 == 0 && k == f - 1) { 1.0 } else { 2.0 };
            spec += w * (re[k] * re[k] + im[k] * im[k]);
        }
        worst = worst.max((energy - spec / l as f64).abs());
    }
    Ok(worst)
}

pub fn convolution_theorem(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for l in 4..=64 {
        let (x, h) = (random_vec(rng, l), random_vec(rng, l));
        let direct = circular_convolve(&x, &h)?;
        let (xr, xi) = rfft_1d(&x)?;
        let (hr, hi) = rfft_1d(&h)?;
        let re: Vec<f64> = (0..xr.len()).map(|k| xr[k] * hr[k] - xi[k] * hi[k]).collect();
        let im: Vec<f64> = (0..xr.len()).map(|k| xr[k] * hi[k] + xi[k] * hr[k]).collect();
        worst = worst.max(max_diff(&irfft_1d(&re, &im, l)?, &direct));
    }
    Ok(worst)
}

/// Filtering a zero-bank residual by `ω` against circular convolution with `IFFT(ω)`.
pub fn lti_equivalence(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for l in [8, 15, 16, 96] {
        for _ in 0..5 {
            let f = kernels::bins_for(l);
            let filter = FrequencyFilter {
                re: random_vec(rng, f),
                im: random_vec(rng, f),
            };
            let x = random_vec(rng, l);
            let spectrum = forward_rfft(&RealArray::from_vec(&[l, 1], x.clone())?)?;
            let zero = RealArray::zeros(&[f, 1]);
            let residual = subtract_invariant(&spectrum, &zero)?;
            let out = inverse_rfft(&recombine(&modulate(&residual, &filter)?, &zero, l)?)?;
            let kernel = irfft_1d(&filter.re, &filter.im, l)?;
            worst = worst.max(max_diff(out.data(), &circular_convolve(&x, &kernel)?));
        }
    }
    Ok(worst)
}

/// Toy model and batch used for gradient checks (`L=16, H=8, D=3, M=4, d=8`).
pub fn toy_problem(seed: u64) -> Result<(Model, Batch)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(ModelConfig::new(16, 8, 3, 4, 8), seed)?;
    let bank = model.bank_params()[0];
    for v in model.params.get_mut(bank).value.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let (fre, fim) = model.filter_params().expect("toy model has a filter");
    for v in model.params.get_mut(fre).value.data_mut() {
        *v = 1.0 + rng.random_range(-0.5..0.5);
    }
    for v in model.params.get_mut(fim).value.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let b = 4;
    let x = RealArray::from_vec(&[b * 3, 16], random_vec(&mut rng, b * 3 * 16).iter().map(|v| 3.0 * v + 0.5).collect())?;
    let y = RealArray::from_vec(&[b * 3, 8], random_vec(&mut rng, b * 3 * 8))?;
    let batch = Batch::new(x, Some(y), vec![3, 4, 9, 30], 3)?;
    Ok((model, batch))
}

/// Worst relative error per parameter group of the toy problem's combined loss.
pub fn gradient_check(seed: u64, tamper: Option<GradientTamper<'_>>) -> Result<Vec<(String, f64)>> {
    let (model, batch) = toy_problem(seed)?;
    let target = batch.y.clone().expect("toy batch has targets");
    let report = finite_difference_check_with(
        &model.params,
        |g| {
            let nodes = model.forward(g, &batch)?;
            loss_node(g, nodes.prediction, &target, 0.5, FreqLoss::Modulus)
        },
        1e-6,
        tamper,
    )?;
    Ok(report.groups.into_iter().map(|(k, v)| (k, v.max_rel_error)).collect())
}

/// Adds `0.01` to the first entry of the `filter.re` gradient.
pub fn perturb_filter_gradient(params: &mut ParamSet) {
    if let Some(id) = params.find("filter.re") {
        params.get_mut(id).grad.data_mut()[0] += 0.01;
    }
}

/// Runs every check. `perturb_filter_grad` corrupts the analytic filter gradient (negative control).
pub fn run_suite(seed: u64, perturb_filter_grad: bool) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![
        CheckResult {
            name: "fft_roundtrip".into(),
            max_error: fft_roundtrip(&mut rng)?,
            tolerance: 1e-9,
        },
        CheckResult {
            name: "naive_dft".into(),
            max_error: naive_dft_agreement(&mut rng)?,
            tolerance: 1e-10,
        },
        CheckResult {
            name: "parseval".into(),
            max_error: parseval(&mut rng)?,
            tolerance: 1e-9,
        },
        CheckResult {
            name: "convolution_theorem".into(),
            max_error: convolution_theorem(&mut rng)?,
            tolerance: 1e-9,
        },
        CheckResult {
            name: "lti_equivalence".into(),
            max_error: lti_equivalence(&mut rng)?,
            tolerance: 1e-9,
        },
    ];
    let tamper: Option<GradientTamper<'_>> = if perturb_filter_grad { Some(&perturb_filter_gradient) } else { None };
    for (group, err) in gradient_check(seed, tamper)? {
        checks.push(CheckResult {
            name: format!("gradient_check[{group}]"),
            max_error: err,
            tolerance: 1e-4,
        });
    }
    Ok(Report { checks })
}
