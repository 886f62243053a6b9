//! Values checked against independent computations written out here: closed
//! forms, brute-force quadrature, fine Riemann sums and hand evaluation.

use std::sync::Arc;

use approx::assert_relative_eq;

use trimlstat::bounds::{hoeffding_binomial_bound, uniform_os_bound};
use trimlstat::lstat::{asymptotic_sigma2, centering_mu, trimmed_lstat};
use trimlstat::mc::{binomial_exceedance_frequency, uniform_os_exceedance_frequency};
use trimlstat::quantile::{std_normal_quantile, stieltjes_2d_kernel, QuantileModel};
use trimlstat::stream::{open_unit, seed_stream};
use trimlstat::weights::{alternating_perturbation, extended_weight, generated_weights, WeightFunction};
use trimlstat::winsor::{
    approx_centering, approx_lstat, decomposition_report, remainder_r1, remainder_r2, weight_perturbation_vn,
    winsorize, WinsorizedModel,
};
use trimlstat::{Model, SampleFrame, TrimSpec, WeightFn, WeightScheme};

fn draw(model: &Model, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed_stream(seed, 0);
    (0..n).map(|_| model.quantile(open_unit(&mut rng))).collect()
}

/// `Φ` from the Maclaurin series of erf, summed to convergence.
fn cdf_series(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let mut term = z;
    let mut sum = z;
    for k in 1..200 {
        term *= -z * z / k as f64;
        let add = term / (2 * k + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 {
            break;
        }
    }
    0.5 + sum / std::f64::consts::PI.sqrt()
}

#[test]
fn normal_quantile_matches_bisection() {
    let (mut lo, mut hi) = (0.0, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf_series(mid) < 0.975 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((std_normal_quantile(0.975) - lo).abs() < 1e-13);
    assert!((lo - 1.959_963_984_540_054).abs() < 1e-13);
}

/// Composite Simpson in both axes for `∫∫_[a,b)² K(u,v) du dv`.
fn simpson_2d(k: impl Fn(f64, f64) -> f64, a: f64, b: f64, cells: usize) -> f64 {
    let h = (b - a) / cells as f64;
    let w = |i: usize| {
        if i == 0 || i == cells {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut total = 0.0;
    for i in 0..=cells {
        let u = a + h * i as f64;
        let mut row = 0.0;
        for jj in 0..=cells {
            row += w(jj) * k(u, a + h * jj as f64);
        }
        total += w(i) * row;
    }
    total * h * h / 9.0
}

#[test]
fn sigma2_uniform_quarter_matches_simpson() {
    let s = simpson_2d(|u, v| u.min(v) - u * v, 0.25, 0.75, 2000);
    assert!((s - 1.0 / 24.0).abs() < 1e-6);
    let q = stieltjes_2d_kernel(&WeightFn::Constant(1.0), &Model::uniform(), 0.25, 0.75).unwrap();
    assert!((q - 1.0 / 24.0).abs() < 1e-12);
    assert!((q - s).abs() < 1e-6);
}

#[test]
fn sigma2_exponential_matches_brute_force_and_winsorized_variance() {
    let dens = |u: f64| 1.0 / (1.0 - u);
    let brute = simpson_2d(|u, v| (u.min(v) - u * v) * dens(u) * dens(v), 0.25, 0.75, 2000);
    let q = stieltjes_2d_kernel(&WeightFn::Constant(1.0), &Model::exponential(), 0.25, 0.75).unwrap();
    assert!((q - brute).abs() < 1e-6 * q);

    // For J ≡ 1 the kernel integral is the variance of the Winsorized variable.
    let (a, b) = ((4.0f64 / 3.0).ln(), 4.0f64.ln());
    // ∫_a^b x e^{-x} and ∫_a^b x² e^{-x} from their antiderivatives.
    let m1 = |x: f64| -(x + 1.0) * (-x).exp();
    let m2 = |x: f64| -(x * x + 2.0 * x + 2.0) * (-x).exp();
    let mean = 0.25 * a + (m1(b) - m1(a)) + 0.25 * b;
    let second = 0.25 * a * a + (m2(b) - m2(a)) + 0.25 * b * b;
    let var = second - mean * mean;
    assert!((q - var).abs() < 1e-9);
    assert_relative_eq!(q, 0.200_693_855_665_945_15, max_relative = 1e-9);
    assert_relative_eq!(mean, 0.787_682_072_451_780_9, max_relative = 1e-14);
}

#[test]
fn sigma2_goldens() {
    let lin = WeightFn::Linear { intercept: 0.0, slope: 1.0 };
    let cases = [
        (Model::normal(), WeightFn::Constant(1.0), 0.298_794_129_304_045_78),
        (Model::normal(), lin.clone(), 0.075_915_280_887_087_3),
        (Model::uniform(), lin.clone(), 0.010_568_576_388_888_89),
        (Model::exponential(), lin, 0.061_023_790_374_368_68),
    ];
    for (model, j, want) in cases {
        let got = asymptotic_sigma2(&j, &model, 0.25, 0.25).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-8);
    }
}

#[test]
fn exponential_centering_antiderivative() {
    let spec = TrimSpec::new(100, 25, 25, 0.25, 0.25, 1.0).unwrap();
    let mu = centering_mu(&WeightFn::Constant(1.0), &Model::exponential(), &spec).unwrap();
    // ∫ −ln(1−u) du = (1−u)ln(1−u) − (1−u) + u
    let g = |u: f64| (1.0 - u) * (1.0 - u).ln() + u;
    assert!((mu - (g(0.75) - g(0.25))).abs() < 1e-10);
    assert!((mu - 0.369_187_964_058_863_04).abs() < 1e-10);
}

#[test]
fn approx_centering_piecewise_oracle() {
    // J(u) = u on uniform: ξ_α ∫₀^α u + ∫_α^{1−β} u² + ξ_{1−β} ∫_{1−β}^1 (1−β)
    let (a, b) = (0.25, 0.25);
    let jw = extended_weight(WeightFn::Linear { intercept: 0.0, slope: 1.0 }.shared(), a, b).unwrap();
    let w = WinsorizedModel::new(Model::uniform(), a, b).unwrap();
    let want = 0.25 * (0.25 * 0.25) + (0.75f64.powi(3) - 0.25f64.powi(3)) / 3.0 + 0.75 * 0.75 * 0.25;
    assert!((approx_centering(&jw, &w).unwrap() - want).abs() < 1e-10);
}

#[test]
fn approx_lstat_matches_step_function_oracle() {
    // J_w for J(u) = 0.5 + u is piecewise linear, so ∫ over each cell is
    // exact by the trapezoid rule split at α and 1−β.
    let (a, b) = (0.2, 0.3);
    let j = WeightFn::Linear { intercept: 0.5, slope: 1.0 };
    let jw = extended_weight(j.clone().shared(), a, b).unwrap();
    let xs = draw(&Model::normal(), 37, 9);
    let w = WinsorizedModel::new(Model::normal(), a, b).unwrap();
    let wins = winsorize(&xs, w.xi_alpha(), w.xi_upper()).unwrap();
    let frame = SampleFrame::new(wins.clone()).unwrap();
    let clamp = |u: f64| u.clamp(a, 1.0 - b);
    let n = 37.0;
    let mut oracle = 0.0;
    for (i, x) in frame.values().iter().enumerate() {
        let (lo, hi) = (i as f64 / n, (i + 1) as f64 / n);
        let mut cuts = vec![lo, hi];
        cuts.extend([a, 1.0 - b].into_iter().filter(|&c| c > lo && c < hi));
        cuts.sort_by(f64::total_cmp);
        let cell: f64 =
            cuts.windows(2).map(|s| 0.5 * (s[1] - s[0]) * (j.eval(clamp(s[0])) + j.eval(clamp(s[1])))).sum();
        oracle += cell * x;
    }
    assert!((approx_lstat(&frame, &jw) - oracle).abs() < 1e-13);
}

#[test]
fn r1_matches_identity_oracle() {
    let spec = TrimSpec::new(40, 9, 11, 0.25, 0.25, 1.0).unwrap();
    let j = WeightFn::Linear { intercept: 1.0, slope: -0.5 }.shared();
    let model = Model::uniform();
    let frame = SampleFrame::new(draw(&model, 40, 4)).unwrap();
    let w = WinsorizedModel::new(model, 0.25, 0.25).unwrap();
    let jw = extended_weight(Arc::clone(&j), 0.25, 0.25).unwrap();
    let scheme = WeightScheme::generated(Arc::clone(&j));
    let l0 = trimmed_lstat(&frame, &scheme, &spec).unwrap();
    let mu = centering_mu(j.as_ref(), &model, &spec).unwrap();
    let wframe = SampleFrame::new(winsorize(frame.values(), w.xi_alpha(), w.xi_upper()).unwrap()).unwrap();
    let lt = approx_lstat(&wframe, &jw);
    let mu_t = approx_centering(&jw, &w).unwrap();
    let r2 = remainder_r2(&frame, j.as_ref(), &model, &spec).unwrap();
    let rn = (l0 - mu) - (lt - mu_t);
    assert!((remainder_r1(&frame, &jw, &w) - (rn - r2)).abs() < 1e-12);
}

#[test]
fn r2_matches_fine_riemann_oracle() {
    let model = Model::exponential();
    let spec = TrimSpec::new(60, 12, 12, 0.25, 0.25, 1.0).unwrap();
    let j = WeightFn::Quadratic { c0: 1.0, c1: 0.5, c2: -0.25 };
    let frame = SampleFrame::new(draw(&model, 60, 17)).unwrap();
    let fn_inv = |u: f64| frame.empirical_inverse(u).unwrap();
    let riemann = |a: f64, b: f64| {
        let cells = 1_000_000;
        let h = (b - a) / cells as f64;
        (0..cells)
            .map(|i| {
                let u = a + h * (i as f64 + 0.5);
                j.eval(u) * (fn_inv(u) - model.quantile(u))
            })
            .sum::<f64>()
            * h
    };
    let oracle = riemann(0.2, 0.25) - riemann(0.8, 0.75);
    let got = remainder_r2(&frame, &j, &model, &spec).unwrap();
    assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
}

#[test]
fn vn_matches_direct_subtraction() {
    let spec = TrimSpec::new(50, 10, 7, 0.2, 0.15, 1.0).unwrap();
    let j = WeightFn::Quadratic { c0: 0.5, c1: 1.0, c2: -0.5 }.shared();
    let c0 = generated_weights(j.as_ref(), &spec).unwrap();
    let mut rng = seed_stream(3, 1);
    let c: Vec<f64> = c0.iter().map(|v| v + 0.3 * (open_unit(&mut rng) - 0.5)).collect();
    let frame = SampleFrame::new(draw(&Model::normal(), 50, 5)).unwrap();
    let explicit = WeightScheme::explicit(c, Some(Arc::clone(&j)));
    let ln = trimmed_lstat(&frame, &explicit, &spec).unwrap();
    let l0 = trimmed_lstat(&frame, &WeightScheme::generated(j), &spec).unwrap();
    assert!((weight_perturbation_vn(&frame, &explicit, &spec).unwrap() - (ln - l0)).abs() < 1e-12);
}

/// Hand evaluation for n = 5, uniform, `J ≡ 1`, `k = m = 1`, `α = β = 1/4`:
/// `α_n = 0.2`, `1−β_n = 0.8`, `ξ_α = 0.25`, `ξ_{1−β} = 0.75`, `μ_n = 0.3`,
/// `μ_L̃ = 0.5`, and on `(0.2, 0.4]` and `(0.6, 0.8]` the empirical quantile
/// is `X_{2:5}` and `X_{4:5}`.
#[test]
fn hand_worked_decompositions() {
    let spec = TrimSpec::new(5, 1, 1, 0.25, 0.25, 1.0).unwrap();
    let scheme = WeightScheme::generated(WeightFn::Constant(1.0).shared());

    // [0.1, 0.3, 0.5, 0.7, 0.9]: W = [.25, .3, .5, .7, .75];
    // R1 = (0.3−0.25)(0.2−0.25) − (0.7−0.75)(0.8−0.75) = 0,
    // R2 = ∫_{.2}^{.25}(0.3−u) − ∫_{.8}^{.75}(0.7−u) = 0.00375 − 0.00375 = 0.
    let f = SampleFrame::new(vec![0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
    let r = decomposition_report(&f, &scheme, Model::uniform(), &spec).unwrap();
    let want = [(r.l0, 0.3), (r.mu_n, 0.3), (r.ltilde, 0.5), (r.mu_ltilde, 0.5), (r.r1, 0.0), (r.r2, 0.0)];
    for (got, w) in want {
        assert!((got - w).abs() < 1e-14, "{r}");
    }
    assert_eq!((r.n_alpha, r.n_upper), (1, 4));
    assert_eq!(r.case.0, 4);
    assert!(r.residual <= 1e-15 && r.pass());

    // [0.1, 0.2, 0.35, 0.6, 0.9]: L0 = 1.15/5, W mean = 2.2/5,
    // R1 = (0.2−0.25)(0.4−0.25) − (0.6−0.75)(0.8−0.75) = 0,
    // R2 = ∫_{.2}^{.25}(0.2−u) − ∫_{.8}^{.75}(0.6−u) = −0.00125 − 0.00875.
    let f = SampleFrame::new(vec![0.1, 0.2, 0.35, 0.6, 0.9]).unwrap();
    let r = decomposition_report(&f, &scheme, Model::uniform(), &spec).unwrap();
    let want = [(r.l0, 0.23), (r.ltilde, 0.44), (r.r1, 0.0), (r.r2, -0.01), (r.a_n, 0.4), (r.b_n, 0.2)];
    for (got, w) in want {
        assert!((got - w).abs() < 1e-14, "{r}");
    }
    assert_eq!(r.case.0, 2);
    assert!(r.pass());
}

#[test]
fn uniform_sample_with_exact_trims_passes_tightly() {
    let spec = TrimSpec::new(20, 5, 5, 0.25, 0.25, 1.0).unwrap();
    let scheme = WeightScheme::generated(WeightFn::Constant(1.0).shared());
    for seed in 0..50 {
        let f = SampleFrame::new(draw(&Model::uniform(), 20, seed)).unwrap();
        let r = decomposition_report(&f, &scheme, Model::uniform(), &spec).unwrap();
        assert!(r.residual <= 1e-12 && r.pass());
        assert_eq!(r.r2, 0.0);
    }
}

#[test]
fn constant_sample_inside_band() {
    let spec = TrimSpec::new(30, 6, 9, 0.25, 0.25, 1.0).unwrap();
    let scheme = WeightScheme::generated(WeightFn::Linear { intercept: 0.5, slope: 1.0 }.shared());
    let f = SampleFrame::new(vec![0.4; 30]).unwrap();
    let r = decomposition_report(&f, &scheme, Model::uniform(), &spec).unwrap();
    assert!(r.residual <= 1e-12);
    // No value at or below ξ_α, none above ξ_{1−β}: A_n = 0, 1−B_n = 1.
    assert_eq!(r.case.0, 4);
}

#[test]
fn hoeffding_frequency_below_bound() {
    let freq = binomial_exceedance_frequency(100, 0.3, 0.1, 100_000, 11, 1).unwrap();
    assert!(freq <= hoeffding_binomial_bound(100, 0.1).unwrap());
}

#[test]
fn uniform_order_statistic_frequency_below_bound() {
    let p = 50.0 / 101.0;
    for lambda in [0.5, 1.0, 2.0] {
        let freq = uniform_os_exceedance_frequency(100, 50, p, lambda, 100_000, 12, 1).unwrap();
        assert!(freq <= uniform_os_bound(lambda, p, 100).unwrap(), "λ={lambda}: {freq}");
    }
}

#[test]
fn alternating_perturbation_is_balanced() {
    let spec = TrimSpec::new(100, 20, 20, 0.2, 0.2, 1.0).unwrap();
    let c0 = generated_weights(&WeightFn::Constant(1.0), &spec).unwrap();
    let c = alternating_perturbation(&c0, 21, 100, 1.0);
    let net: f64 = c.iter().zip(&c0).map(|(a, b)| a - b).sum();
    assert!(net.abs() < 1e-14);
}
