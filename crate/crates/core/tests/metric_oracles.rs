//! Metrics checked against independent oracles: analytic Gaussian values,
//! brute-force window sums and exact discrete mutual information.
//!
//! The checks are also run by the acceptance report.

mod common;

use favae_core::metrics::{
    discretize, gtc, mir_score, mis, mutual_information, psnr, ssim, zmin_score, FactorSampler,
    LatentTable, ZminConfig,
};
use favae_core::{Error, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(w: usize, h: usize, r: &mut ChaCha8Rng) -> Image {
    Image::new(w, h, (0..w * h * 3).map(|_| r.random::<f32>()).collect()).unwrap()
}

fn psnr_analytic_values() {
    let a = Image::filled(8, 8, [0.2; 3]);
    assert!((psnr(&a, &Image::filled(8, 8, [0.3; 3])).unwrap() - 20.0).abs() < 1e-5);
    assert_eq!(
        psnr(&Image::black(8, 8), &Image::filled(8, 8, [1.0; 3])).unwrap(),
        0.0
    );
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert!(psnr(&a, &Image::black(8, 4)).is_err());
}

/// Direct windowed SSIM: every window is summed explicitly with a 2-D
/// Gaussian built from scratch.
fn ssim_brute_force(a: &Image, b: &Image) -> f64 {
    const K: usize = 11;
    const SIGMA: f64 = 1.5;
    let (c1, c2) = (1e-4, 9e-4);
    let gray = |img: &Image, x: usize, y: usize| {
        let p = img.pixel(x, y);
        (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0
    };
    let mut kernel = [[0.0; K]; K];
    let mut total = 0.0;
    for (u, row) in kernel.iter_mut().enumerate() {
        for (v, w) in row.iter_mut().enumerate() {
            let (du, dv) = (u as f64 - 5.0, v as f64 - 5.0);
            *w = (-(du * du + dv * dv) / (2.0 * SIGMA * SIGMA)).exp();
            total += *w;
        }
    }
    let mut sum = 0.0;
    let mut windows = 0;
    for y0 in 0..=a.height() - K {
        for x0 in 0..=a.width() - K {
            let (mut mx, mut my) = (0.0, 0.0);
            for v in 0..K {
                for u in 0..K {
                    let w = kernel[v][u] / total;
                    mx += w * gray(a, x0 + u, y0 + v);
                    my += w * gray(b, x0 + u, y0 + v);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for v in 0..K {
                for u in 0..K {
                    let w = kernel[v][u] / total;
                    let dx = gray(a, x0 + u, y0 + v) - mx;
                    let dy = gray(b, x0 + u, y0 + v) - my;
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cxy += w * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            windows += 1;
        }
    }
    sum / windows as f64
}

fn ssim_matches_brute_force_windows() {
    let mut r = rng(1);
    for case in 0..5 {
        let (w, h) = (11 + 3 * case, 24 - case);
        let a = random_image(w, h, &mut r);
        // Correlated partner so the structure term is far from zero.
        let mut b = a.clone();
        for v in b.data_mut() {
            *v = (0.7 * *v + 0.3 * r.random::<f32>()).clamp(0.0, 1.0);
        }
        let got = ssim(&a, &b).unwrap();
        let want = ssim_brute_force(&a, &b);
        assert!((got - want).abs() < 1e-6, "case {case}: {got} vs {want}");
    }
}

fn ssim_edge_cases() {
    let mut r = rng(2);
    let a = random_image(16, 16, &mut r);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let flat = Image::filled(16, 16, [0.2; 3]);
    let brighter = Image::filled(16, 16, [0.7; 3]);
    let s = ssim(&flat, &brighter).unwrap();
    let luminance = (2.0 * 0.2 * 0.7 + 1e-4) / (0.04 + 0.49 + 1e-4);
    assert!(s < 1.0);
    assert!(
        (s - luminance).abs() < 1e-6,
        "flat images leave only the luminance term: {s} vs {luminance}"
    );
    assert!(ssim(&Image::black(10, 16), &Image::black(10, 16)).is_err());
}

/// Rows of `N(0, Σ)` using the Cholesky factor `l` (lower, row-major).
fn gaussian_rows(l: &[f64], d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            (0..d)
                .map(|i| (0..=i).map(|k| l[i * d + k] * e[k]).sum())
                .collect()
        })
        .collect()
}

fn gtc_of_correlated_gaussians_is_analytic() {
    let rho: f64 = 0.5;
    let l = [1.0, 0.0, rho, (1.0 - rho * rho).sqrt()];
    let g = gtc(&gaussian_rows(&l, 2, 50_000, 3)).unwrap();
    let analytic = -0.5 * (1.0 - rho * rho).ln();
    assert!((analytic - 0.1438).abs() < 1e-4);
    assert!(
        (g.value - analytic).abs() < 0.01,
        "{} vs {analytic}",
        g.value
    );
    assert!(!g.degenerate);

    // 3-D: Σ = [[4, 1.2, 0], [1.2, 1, 0.5], [0, 0.5, 2]], factored by hand.
    let s: [[f64; 3]; 3] = [[4.0, 1.2, 0.0], [1.2, 1.0, 0.5], [0.0, 0.5, 2.0]];
    let l11 = 2.0;
    let l21 = 1.2 / l11;
    let l22 = (1.0f64 - l21 * l21).sqrt();
    let l32 = 0.5 / l22;
    let l33 = (2.0f64 - l32 * l32).sqrt();
    let l = [l11, 0.0, 0.0, l21, l22, 0.0, 0.0, l32, l33];
    let det = s[0][0] * (s[1][1] * s[2][2] - s[1][2] * s[2][1])
        - s[0][1] * (s[1][0] * s[2][2] - s[1][2] * s[2][0]);
    let analytic = 0.5 * ((s[0][0] * s[1][1] * s[2][2]).ln() - det.ln());
    let g = gtc(&gaussian_rows(&l, 3, 50_000, 4)).unwrap();
    assert!(
        (g.value - analytic).abs() < 0.01,
        "{} vs {analytic}",
        g.value
    );
}

fn gtc_of_independent_columns_is_near_zero() {
    let l = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let g = gtc(&gaussian_rows(&l, 3, 50_000, 5)).unwrap();
    assert!(g.value.abs() < 0.01, "{}", g.value);
}

fn gtc_flags_duplicated_columns() {
    let rows: Vec<Vec<f64>> = gaussian_rows(&[1.0, 0.0, 0.3, 1.0], 2, 500, 6)
        .into_iter()
        .map(|r| vec![r[0], r[1], r[0]])
        .collect();
    let g = gtc(&rows).unwrap();
    assert!(g.degenerate);
    assert!(g.value > 5.0, "{}", g.value);
    assert!(gtc(&rows[..3]).is_err(), "needs more rows than dimensions");
}

/// Exact MI of a discrete joint pmf.
fn exact_mi(p: &[Vec<f64>]) -> f64 {
    let pa: Vec<f64> = p.iter().map(|r| r.iter().sum()).collect();
    let pb: Vec<f64> = (0..p[0].len())
        .map(|j| p.iter().map(|r| r[j]).sum())
        .collect();
    let mut mi = 0.0;
    for (i, row) in p.iter().enumerate() {
        for (j, &pij) in row.iter().enumerate() {
            if pij > 0.0 {
                mi += pij * (pij / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi
}

fn sample_joint(p: &[Vec<f64>], n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let cells: Vec<(usize, usize, f64)> = p
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &v)| (i, j, v)))
        .collect();
    let mut r = rng(seed);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = r.random();
        let &(i, j, _) = cells
            .iter()
            .find(|c| {
                u -= c.2;
                u < 0.0
            })
            .unwrap_or(cells.last().unwrap());
        // Arbitrary level values: the estimator must only see their order.
        a.push(i as f64 * 1.7 - 3.0);
        b.push((j as f64).powi(2));
    }
    (a, b)
}

fn histogram_mi_matches_exact_discrete_mi() {
    let dependent = vec![
        vec![0.10, 0.02, 0.03, 0.00, 0.05],
        vec![0.01, 0.12, 0.02, 0.05, 0.00],
        vec![0.04, 0.01, 0.15, 0.02, 0.03],
        vec![0.00, 0.06, 0.04, 0.20, 0.05],
    ];
    let total: f64 = dependent.iter().flatten().sum();
    assert!((total - 1.0).abs() < 1e-12);
    let independent: Vec<Vec<f64>> = [0.1, 0.2, 0.3, 0.4]
        .iter()
        .map(|pa| [0.3, 0.3, 0.2, 0.1, 0.1].iter().map(|pb| pa * pb).collect())
        .collect();
    for (seed, p) in [(7, &dependent), (8, &independent)] {
        let (a, b) = sample_joint(p, 50_000, seed);
        let (ca, ka) = discretize(&a, 20);
        let (cb, kb) = discretize(&b, 20);
        assert_eq!((ka, kb), (4, 5), "discrete labels keep their levels");
        let est = mutual_information(&ca, ka, &cb, kb);
        let exact = exact_mi(p);
        assert!((est - exact).abs() < 0.01, "seed {seed}: {est} vs {exact}");
    }
}

fn uniform_columns(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..d).map(|_| r.random::<f64>()).collect())
        .collect()
}

fn mis_oracle_cases() {
    let indep = uniform_columns(50_000, 3, 9);
    assert!(mis(&indep).unwrap() < 0.02);
    let dup: Vec<Vec<f64>> = indep.iter().map(|r| vec![r[0], r[0]]).collect();
    assert!((mis(&dup).unwrap() - 1.0).abs() < 1e-9);
    let single: Vec<Vec<f64>> = indep.iter().map(|r| vec![r[0]]).collect();
    assert_eq!(mis(&single).unwrap(), 0.0);
    let constant: Vec<Vec<f64>> = indep.iter().map(|r| vec![r[0], 4.0]).collect();
    assert_eq!(
        mis(&constant).unwrap(),
        0.0,
        "MI with a constant column is 0"
    );
    assert!(mis(&indep[..99]).is_err());
}

/// Every combination of `levels` values for `k` factors, each once.
fn factorial(k: usize, levels: usize) -> Vec<Vec<f64>> {
    let total = levels.pow(k as u32);
    (0..total)
        .map(|mut i| {
            (0..k)
                .map(|_| {
                    let v = (i % levels) as f64;
                    i /= levels;
                    v
                })
                .collect()
        })
        .collect()
}

fn mir_is_one_for_one_to_one_latents() {
    let labels = factorial(6, 3);
    let table = LatentTable::new(labels.clone(), labels).unwrap();
    let m = mir_score(&table).unwrap();
    assert_eq!(m.score, 1.0);
    for (j, e) in m.per_dim.iter().enumerate() {
        assert_eq!(*e, Some((j, 1.0)));
    }
}

fn mir_is_near_zero_for_mixture_latents() {
    let labels = factorial(6, 3);
    let standardize = |v: Vec<f64>| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        v.into_iter().map(|x| (x - m) / s).collect::<Vec<_>>()
    };
    let mix = standardize(labels.iter().map(|r| r.iter().sum()).collect());
    let latents: Vec<Vec<f64>> = mix.iter().map(|&z| vec![z; 6]).collect();
    let m = mir_score(&LatentTable::new(latents, labels).unwrap()).unwrap();
    assert!(m.score <= 0.15, "{}", m.score);
    assert!(
        m.score.abs() < 1e-9,
        "a symmetric mixture is exactly at chance: {}",
        m.score
    );

    // Sampled continuous factors with per-dimension noise.
    let mut r = rng(10);
    let labels = uniform_columns(50_000, 6, 11);
    let latents: Vec<Vec<f64>> = labels
        .iter()
        .map(|v| {
            let s: f64 = v.iter().sum();
            (0..6)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut r);
                    s + 0.1 * e
                })
                .collect()
        })
        .collect();
    let m = mir_score(&LatentTable::new(latents, labels).unwrap()).unwrap();
    assert!(m.score <= 0.15, "{}", m.score);
}

fn mir_skips_uninformative_dimensions() {
    let labels = factorial(6, 3);
    let table = LatentTable::new(labels.clone(), labels.clone()).unwrap();
    let partly = table.clone().with_kl(vec![1.0, 1.0, 0.0, 1.0, 0.01, 1.0]);
    let m = mir_score(&partly).unwrap();
    assert_eq!(m.per_dim[2], None);
    assert_eq!(m.per_dim[4], None);
    assert_eq!(m.score, 1.0);
    let collapsed = table.with_kl(vec![0.0; 6]);
    assert!(matches!(mir_score(&collapsed), Err(Error::CollapsedSpace)));
}

/// Independent discrete factors mapped to latents by a fixed matrix.
struct LinearSampler {
    levels: Vec<usize>,
    mixing: Vec<Vec<f64>>,
}

impl FactorSampler for LinearSampler {
    fn factor_count(&self) -> usize {
        self.levels.len()
    }

    fn level_count(&self, factor: usize) -> usize {
        self.levels[factor]
    }

    fn sample(
        &mut self,
        fixed: Option<usize>,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> favae_core::Result<Vec<Vec<f64>>> {
        let k = self.levels.len();
        let pinned = fixed.map(|f| (f, rng.random_range(0..self.levels[f])));
        Ok((0..n)
            .map(|_| {
                let v: Vec<f64> = (0..k)
                    .map(|f| match pinned {
                        Some((pf, level)) if pf == f => level as f64,
                        _ => rng.random_range(0..self.levels[f]) as f64,
                    })
                    .collect();
                self.mixing
                    .iter()
                    .map(|row| row.iter().zip(&v).map(|(m, x)| m * x).sum())
                    .collect()
            })
            .collect())
    }
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Normalized Sylvester Hadamard matrix: every latent weights every factor
/// equally in magnitude.
fn hadamard(order_log2: u32) -> Vec<Vec<f64>> {
    let n = 1usize << order_log2;
    let s = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if (i & j).count_ones() % 2 == 0 { s } else { -s })
                .collect()
        })
        .collect()
}

fn zmin_is_perfect_on_identity_latents() {
    let mut s = LinearSampler {
        levels: vec![4, 8, 8, 3, 3, 4],
        mixing: identity(6),
    };
    let r = zmin_score(&mut s, None, &ZminConfig::default()).unwrap();
    assert_eq!(r.mean, 1.0);
    assert_eq!(r.trials, vec![1.0; 5]);
    assert!(r.excluded_factors.is_empty());
}

fn zmin_is_near_chance_on_fully_entangled_latents() {
    let mut s = LinearSampler {
        levels: vec![4; 8],
        mixing: hadamard(3),
    };
    let r = zmin_score(&mut s, None, &ZminConfig::default()).unwrap();
    assert!(r.mean <= 0.35, "{:?}", r.trials);
    assert!((r.mean - 1.0 / 8.0).abs() < 0.1, "{:?}", r.trials);
}

fn zmin_excludes_single_level_factors_and_is_seeded() {
    let mut s = LinearSampler {
        levels: vec![4, 1, 5],
        mixing: identity(3),
    };
    let cfg = ZminConfig {
        seed: 3,
        ..ZminConfig::default()
    };
    let a = zmin_score(&mut s, None, &cfg).unwrap();
    assert_eq!(a.excluded_factors, vec![1]);
    let b = zmin_score(&mut s, None, &cfg).unwrap();
    assert_eq!(a, b);
    let mut flat = LinearSampler {
        levels: vec![1, 1],
        mixing: identity(2),
    };
    assert!(zmin_score(&mut flat, None, &cfg).is_err());
}

common::checks! {
    psnr_analytic_values,
    ssim_matches_brute_force_windows,
    ssim_edge_cases,
    gtc_of_correlated_gaussians_is_analytic,
    gtc_of_independent_columns_is_near_zero,
    gtc_flags_duplicated_columns,
    histogram_mi_matches_exact_discrete_mi,
    mis_oracle_cases,
    mir_is_one_for_one_to_one_latents,
    mir_is_near_zero_for_mixture_latents,
    mir_skips_uninformative_dimensions,
    zmin_is_perfect_on_identity_latents,
    zmin_is_near_chance_on_fully_entangled_latents,
    zmin_excludes_single_level_factors_and_is_seeded,
}
