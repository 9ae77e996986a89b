//! Data generators with known potential outcomes.
//!
//! * The sinusoidal toy model `mu0 = sin(omega x)`,
//!   `mu1 = sin(omega x + delta) + beta` on a single uniform covariate.
//! * Semi-synthetic response surfaces over random feature subsets `S0`, `S1`:
//!   `mu_t = 2 sum x_j + 2 sum x_j^2 + sum_{pairs} x_j x_k` over `S_t`, with
//!   assignment `P(T=1|x) = sigmoid(alpha sum_{j in S} beta_j x_j)`.

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::optim::logistic::sigmoid;

/// Known outcome surfaces.
pub trait ResponseSurface {
    fn mu0(&self, x: ArrayView1<f64>) -> f64;
    fn mu1(&self, x: ArrayView1<f64>) -> f64;

    /// `mu1(x) - mu0(x)`.
    fn true_cate(&self, x: ArrayView1<f64>) -> f64 {
        self.mu1(x) - self.mu0(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDgpConfig {
    /// Frequency in radians per unit of x.
    pub omega: f64,
    /// Phase shift of the treated surface.
    pub delta: f64,
    /// Constant shift of the treated surface.
    pub beta: f64,
    pub noise_sd: f64,
    pub n: usize,
    pub x_low: f64,
    pub x_high: f64,
    pub treated_prob: f64,
}

impl Default for ToyDgpConfig {
    fn default() -> Self {
        Self { omega: 2.0, delta: 0.0, beta: 1.0, noise_sd: 0.5, n: 500, x_low: -3.0, x_high: 3.0, treated_prob: 0.5 }
    }
}

impl ToyDgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("toy generator: {m}")));
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be >= 0");
        }
        if self.n < 2 {
            return bad("n must be >= 2");
        }
        if !(self.x_low < self.x_high) || !self.x_low.is_finite() || !self.x_high.is_finite() {
            return bad("x_low must be below x_high");
        }
        if !(self.treated_prob > 0.0 && self.treated_prob < 1.0) {
            return bad("treated_prob must lie in (0, 1)");
        }
        if ![self.omega, self.delta, self.beta].iter().all(|v| v.is_finite()) {
            return bad("omega, delta and beta must be finite");
        }
        Ok(())
    }
}

impl ResponseSurface for ToyDgpConfig {
    fn mu0(&self, x: ArrayView1<f64>) -> f64 {
        (self.omega * x[0]).sin()
    }

    fn mu1(&self, x: ArrayView1<f64>) -> f64 {
        (self.omega * x[0] + self.delta).sin() + self.beta
    }
}

/// Draws `cfg.n` units: `x ~ U[x_low, x_high]`, `T ~ Bernoulli(treated_prob)`,
/// `Y = mu_T(x) + N(0, noise_sd^2)`.
pub fn generate_toy(cfg: &ToyDgpConfig, seed: u64) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n;
    let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(cfg.x_low..cfg.x_high));
    let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(cfg.treated_prob))).collect();
    let mu0: Array1<f64> = x.rows().into_iter().map(|r| cfg.mu0(r)).collect();
    let mu1: Array1<f64> = x.rows().into_iter().map(|r| cfg.mu1(r)).collect();
    let y = Array1::from_shape_fn(n, |i| {
        let mu = if t[i] == 1 { mu1[i] } else { mu0[i] };
        mu + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let data = Dataset::with_names(x, t, y, vec!["x".to_string()])?;
    Ok((data, GroundTruth::new(mu0, mu1)?))
}

/// Which index pairs enter the interaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interactions {
    /// Unordered pairs `j < k`.
    #[default]
    Pairs,
    /// All ordered pairs including `j = k`, i.e. `(sum x_j)^2`.
    AllOrdered,
}

/// Where the covariate matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateSource {
    /// Independent standard normal entries.
    Gaussian { n: usize, d: usize },
    /// Every column of a headed numeric CSV (or the listed ones).
    Csv {
        path: PathBuf,
        #[serde(default)]
        columns: Option<Vec<String>>,
    },
}

impl Default for CovariateSource {
    fn default() -> Self {
        CovariateSource::Gaussian { n: 747, d: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemiSyntheticConfig {
    pub covariates: CovariateSource,
    /// `|S0| = |S1|`.
    pub s_size: usize,
    /// Fraction of each set shared with the other.
    pub shared_fraction: f64,
    /// Treated probability when `alpha = 0`.
    pub treated_fraction: f64,
    /// Confounding strength.
    pub alpha: f64,
    pub noise_sd: f64,
    pub interactions: Interactions,
    pub seed: u64,
}

impl Default for SemiSyntheticConfig {
    fn default() -> Self {
        Self {
            covariates: CovariateSource::default(),
            s_size: 10,
            shared_fraction: 0.4,
            treated_fraction: 0.5,
            alpha: 0.0,
            noise_sd: 1.0,
            interactions: Interactions::Pairs,
            seed: 0,
        }
    }
}

impl SemiSyntheticConfig {
    /// `round(shared_fraction * s_size)`.
    pub fn shared_count(&self) -> usize {
        (self.shared_fraction * self.s_size as f64).round() as usize
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("semi-synthetic generator: {m}")));
        if self.s_size == 0 {
            return bad("s_size must be >= 1".into());
        }
        if self.s_size > d {
            return bad(format!("s_size {} exceeds the {d} available covariates", self.s_size));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return bad("shared_fraction must lie in [0, 1]".into());
        }
        let union = 2 * self.s_size - self.shared_count();
        if union > d {
            return bad(format!(
                "S0 and S1 need {union} distinct covariates for the requested overlap but only {d} exist"
            ));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be finite and >= 0".into());
        }
        if self.alpha == 0.0 && !(self.treated_fraction > 0.0 && self.treated_fraction < 1.0) {
            return bad("treated_fraction must lie in (0, 1)".into());
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be >= 0".into());
        }
        Ok(())
    }
}

/// The realized response surfaces and assignment score of one draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSyntheticSurface {
    /// Sorted covariate indices of the control surface.
    pub s0: Vec<usize>,
    pub s1: Vec<usize>,
    /// `(j, beta_j)` over `S0 ∪ S1`, sorted by `j`.
    pub beta: Vec<(usize, f64)>,
    pub alpha: f64,
    pub treated_fraction: f64,
    pub interactions: Interactions,
}

impl SemiSyntheticSurface {
    pub fn overlap(&self) -> usize {
        self.s0.iter().filter(|j| self.s1.contains(j)).count()
    }

    fn surface(&self, set: &[usize], x: ArrayView1<f64>) -> f64 {
        let linear: f64 = set.iter().map(|&j| x[j]).sum();
        let quad: f64 = set.iter().map(|&j| x[j] * x[j]).sum();
        let inter = match self.interactions {
            Interactions::Pairs => {
                let mut s = 0.0;
                for (a, &j) in set.iter().enumerate() {
                    for &k in &set[a + 1..] {
                        s += x[j] * x[k];
                    }
                }
                s
            }
            Interactions::AllOrdered => linear * linear,
        };
        2.0 * linear + 2.0 * quad + inter
    }

    /// `sum_{j in S} beta_j x_j`.
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        self.beta.iter().map(|&(j, b)| b * x[j]).sum()
    }

    pub fn propensity(&self, x: ArrayView1<f64>) -> f64 {
        if self.alpha > 0.0 {
            sigmoid(self.alpha * self.score(x))
        } else {
            self.treated_fraction
        }
    }
}

impl ResponseSurface for SemiSyntheticSurface {
    fn mu0(&self, x: ArrayView1<f64>) -> f64 {
        self.surface(&self.s0, x)
    }

    fn mu1(&self, x: ArrayView1<f64>) -> f64 {
        self.surface(&self.s1, x)
    }
}

#[derive(Debug, Clone)]
pub struct SemiSyntheticSample {
    pub data: Dataset,
    pub truth: GroundTruth,
    pub surface: SemiSyntheticSurface,
}

fn load_covariates(path: &PathBuf, columns: Option<&[String]>) -> Result<(Array2<f64>, Vec<String>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let names: Vec<String> = match columns {
        Some(c) => c.to_vec(),
        None => header.clone(),
    };
    let idx: Vec<usize> = names
        .iter()
        .map(|c| {
            header.iter().position(|h| h == c).ok_or_else(|| Error::Schema(format!("covariate column `{c}` not found")))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        for &j in &idx {
            let v: f64 = rec[j].trim().parse().map_err(|_| Error::InvalidRow {
                row: r,
                message: format!("column `{}` is not numeric: `{}`", header[j], &rec[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidRow { row: r, message: format!("non-finite value in `{}`", header[j]) });
            }
            values.push(v);
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, idx.len()), values).expect("rectangular by construction");
    Ok((x, names))
}

/// Generates covariates (or loads them) and draws one semi-synthetic sample.
pub fn generate_semi_synthetic(cfg: &SemiSyntheticConfig) -> Result<SemiSyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (x, names) = match &cfg.covariates {
        CovariateSource::Gaussian { n, d } => {
            if *n < 2 || *d == 0 {
                return Err(Error::Config("generated covariates need n >= 2 and d >= 1".into()));
            }
            cfg.validate(*d)?;
            let x = Array2::from_shape_fn((*n, *d), |_| rng.sample::<f64, _>(StandardNormal));
            (x, (1..=*d).map(|j| format!("x{j}")).collect())
        }
        CovariateSource::Csv { path, columns } => load_covariates(path, columns.as_deref())?,
    };
    simulate(x, names, cfg, &mut rng)
}

/// Draws a semi-synthetic sample over caller-supplied covariates.
pub fn generate_semi_synthetic_from(x: Array2<f64>, cfg: &SemiSyntheticConfig) -> Result<SemiSyntheticSample> {
    let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    simulate(x, names, cfg, &mut rng)
}

fn simulate(
    x: Array2<f64>,
    names: Vec<String>,
    cfg: &SemiSyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SemiSyntheticSample> {
    let (n, d) = x.dim();
    cfg.validate(d)?;
    let s = cfg.s_size;
    let k = cfg.shared_count();
    let mut pool: Vec<usize> = (0..d).collect();
    pool.shuffle(rng);
    let shared = &pool[..k];
    let mut s0: Vec<usize> = shared.iter().chain(&pool[k..s]).copied().collect();
    let mut s1: Vec<usize> = shared.iter().chain(&pool[s..2 * s - k]).copied().collect();
    s0.sort_unstable();
    s1.sort_unstable();
    let mut union: Vec<usize> = s0.iter().chain(&s1).copied().collect();
    union.sort_unstable();
    union.dedup();
    let beta: Vec<(usize, f64)> = union.iter().map(|&j| (j, rng.sample(StandardNormal))).collect();
    let surface = SemiSyntheticSurface {
        s0,
        s1,
        beta,
        alpha: cfg.alpha,
        treated_fraction: cfg.treated_fraction,
        interactions: cfg.interactions,
    };
    let t: Vec<u8> = x.rows().into_iter().map(|r| u8::from(rng.random_bool(surface.propensity(r)))).collect();
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mu0: Array1<f64> = x.rows().into_iter().map(|r| surface.mu0(r)).collect();
    let mu1: Array1<f64> = x.rows().into_iter().map(|r| surface.mu1(r)).collect();
    let y = Array1::from_shape_fn(n, |i| {
        let mu = if t[i] == 1 { mu1[i] } else { mu0[i] };
        mu + noise.sample(rng)
    });
    let truth = GroundTruth::new(mu0, mu1)?;
    let data = Dataset::with_names(x, t, y, names)?;
    Ok(SemiSyntheticSample { data, truth, surface })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn scenario_one_effect_is_constant_beta() {
        let cfg = ToyDgpConfig { delta: 0.0, beta: 1.5, ..Default::default() };
        let (_, truth) = generate_toy(&cfg, 3).unwrap();
        // (sin + beta) - sin rounds at the last bit of mu1.
        assert!(truth.tau.iter().all(|&v| (v - 1.5).abs() <= 2.5 * f64::EPSILON));
    }

    #[test]
    fn zero_frequency_gives_constant_surfaces() {
        let cfg = ToyDgpConfig { omega: 0.0, delta: 0.7, beta: 0.2, ..Default::default() };
        let (_, truth) = generate_toy(&cfg, 4).unwrap();
        assert!(truth.mu0.iter().all(|&v| v == 0.0));
        let want = 0.7f64.sin() + 0.2;
        assert!(truth.mu1.iter().all(|&v| v == want));
    }

    #[test]
    fn toy_hand_value() {
        let cfg = ToyDgpConfig { delta: FRAC_PI_2, beta: 1.0, ..Default::default() };
        let x = array![0.0];
        assert_eq!(cfg.mu0(x.view()), 0.0);
        assert!((cfg.mu1(x.view()) - 2.0).abs() < 1e-15);
        assert!((cfg.true_cate(x.view()) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn toy_is_seed_deterministic_and_in_range() {
        let cfg = ToyDgpConfig::default();
        let (a, ta) = generate_toy(&cfg, 7).unwrap();
        let (b, tb) = generate_toy(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.x.iter().all(|&v| (-3.0..3.0).contains(&v)));
        let (c, _) = generate_toy(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn toy_rejects_bad_config() {
        for cfg in [
            ToyDgpConfig { noise_sd: -1.0, ..Default::default() },
            ToyDgpConfig { n: 1, ..Default::default() },
            ToyDgpConfig { x_low: 1.0, x_high: 1.0, ..Default::default() },
            ToyDgpConfig { treated_prob: 1.0, ..Default::default() },
        ] {
            assert!(matches!(generate_toy(&cfg, 0), Err(Error::Config(_))));
        }
    }

    fn semi(frac: f64, alpha: f64, seed: u64) -> SemiSyntheticSample {
        generate_semi_synthetic(&SemiSyntheticConfig {
            covariates: CovariateSource::Gaussian { n: 400, d: 25 },
            shared_fraction: frac,
            alpha,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn identical_sets_give_zero_effect() {
        let s = semi(1.0, 0.0, 1);
        assert_eq!(s.surface.s0, s.surface.s1);
        assert!(s.truth.tau.iter().all(|&v| v == 0.0));
        for r in s.data.x.rows() {
            assert_eq!(s.surface.true_cate(r), 0.0);
        }
    }

    #[test]
    fn overlap_matches_rounded_fraction() {
        for (frac, want) in [(0.0, 0), (0.1, 1), (0.44, 4), (0.5, 5), (0.9, 9), (1.0, 10)] {
            let s = semi(frac, 0.0, 2);
            assert_eq!(s.surface.overlap(), want);
            assert_eq!(s.surface.s0.len(), 10);
            assert_eq!(s.surface.s1.len(), 10);
        }
    }

    #[test]
    fn surface_hand_value_pairs_convention() {
        let surface = SemiSyntheticSurface {
            s0: vec![0],
            s1: vec![0, 1],
            beta: vec![(0, 0.3), (1, -0.2)],
            alpha: 0.0,
            treated_fraction: 0.5,
            interactions: Interactions::Pairs,
        };
        let x = array![1.0, 2.0];
        assert_eq!(surface.mu0(x.view()), 4.0);
        // 2(1+2) + 2(1+4) + 1*2
        assert_eq!(surface.mu1(x.view()), 18.0);
        let ordered = SemiSyntheticSurface { interactions: Interactions::AllOrdered, ..surface };
        // 2(3) + 2(5) + 3^2
        assert_eq!(ordered.mu1(x.view()), 25.0);
    }

    #[test]
    fn truth_matches_surface_rowwise() {
        let s = semi(0.4, 0.5, 3);
        for (i, r) in s.data.x.rows().into_iter().enumerate() {
            assert_eq!(s.truth.tau[i], s.surface.true_cate(r));
            assert_eq!(s.truth.tau[i], s.truth.mu1[i] - s.truth.mu0[i]);
        }
    }

    #[test]
    fn unconfounded_share_is_binomial() {
        let s = semi(0.4, 0.0, 4);
        let n = s.data.n() as f64;
        let share = s.data.n_treated() as f64 / n;
        assert!((share - 0.5).abs() < 3.0 * (0.25 / n).sqrt());
    }

    #[test]
    fn semi_synthetic_is_seed_deterministic() {
        let a = semi(0.3, 0.4, 5);
        let b = semi(0.3, 0.4, 5);
        assert_eq!(a.data, b.data);
        assert_eq!(a.surface, b.surface);
    }

    #[test]
    fn too_many_sets_for_covariates_is_config_error() {
        let cfg = SemiSyntheticConfig { covariates: CovariateSource::Gaussian { n: 10, d: 5 }, ..Default::default() };
        assert!(matches!(generate_semi_synthetic(&cfg), Err(Error::Config(_))));
        let cfg = SemiSyntheticConfig {
            covariates: CovariateSource::Gaussian { n: 10, d: 15 },
            shared_fraction: 0.1,
            ..Default::default()
        };
        assert!(matches!(generate_semi_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn covariates_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        let mut text = String::from("a,b,c\n");
        for i in 0..20 {
            text.push_str(&format!("{},{},{}\n", i, i * 2, -i));
        }
        std::fs::write(&path, text).unwrap();
        let cfg = SemiSyntheticConfig {
            covariates: CovariateSource::Csv { path, columns: None },
            s_size: 1,
            shared_fraction: 0.0,
            ..Default::default()
        };
        let s = generate_semi_synthetic(&cfg).unwrap();
        assert_eq!(s.data.d(), 3);
        assert_eq!(s.data.feature_names, vec!["a", "b", "c"]);
        assert_eq!(s.data.x[[5, 1]], 10.0);
    }
}
