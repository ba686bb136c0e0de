use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::record::{ExampleRecord, FeatureSchema};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Exposures per scenario in the reference log (a..f), used for default traffic shares.
pub const REFERENCE_EXPOSURES: [f64; 6] = [11.5e6, 6.3e6, 1.5e6, 1.7e6, 89e3, 1.7e6];
/// Reference CTR per scenario.
pub const REFERENCE_CTR: [f64; 6] = [0.1256, 0.2250, 0.14, 0.1384, 0.0412, 0.1117];
/// Reference CTCVR (orders over exposures) per scenario.
pub const REFERENCE_CTCVR: [f64; 6] = [0.0264, 0.0591, 0.0064, 0.0054, 0.0031, 0.0113];

const SCENARIO_NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// One scenario of the synthetic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub traffic_share: f64,
    pub base_ctr: f64,
    pub base_cvr_given_click: f64,
    /// Per-dimension weights on the user·item latent product. Scenarios with
    /// aligned affinities rank items alike; orthogonal ones are uncorrelated.
    pub affinity: Vec<f64>,
}

fn default_latent_mean() -> f64 {
    0.5
}
fn default_interaction_scale() -> f64 {
    2.0
}
fn default_context_scale() -> f64 {
    0.5
}
fn default_calibration_samples() -> usize {
    100_000
}

/// Everything that determines a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub users: usize,
    pub items: usize,
    pub latent_dim: usize,
    /// Mean of every latent coordinate. A nonzero mean gives each user and
    /// item a scenario-dependent main effect on top of the pure interaction.
    #[serde(default = "default_latent_mean")]
    pub latent_mean: f64,
    /// Multiplier on the (√L-normalized) latent interaction term.
    #[serde(default = "default_interaction_scale")]
    pub interaction_scale: f64,
    /// Standard deviation of per-impression logit noise.
    pub noise: f64,
    /// Vocabulary of each bucketized context field.
    pub context_buckets: Vec<usize>,
    /// Standard deviation of the per-scenario context bucket effects.
    #[serde(default = "default_context_scale")]
    pub context_scale: f64,
    pub impressions: usize,
    /// Draws per scenario used to calibrate the intercepts.
    #[serde(default = "default_calibration_samples")]
    pub calibration_samples: usize,
    pub scenarios: Vec<ScenarioSpec>,
}

impl GeneratorConfig {
    /// Six scenarios with reference traffic shares and CTR/CTCVR marginals.
    /// Affinities are `√ρ·common + √(1−ρ)·own` with unit-variance Gaussian
    /// draws, so `correlation` sets the pairwise score correlation.
    pub fn reference(seed: u64, correlation: f64) -> Self {
        let latent_dim = 8;
        let rho = correlation.clamp(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xaff1_0000);
        let common: Vec<f64> = (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        let total: f64 = REFERENCE_EXPOSURES.iter().sum();
        let scenarios = (0..6)
            .map(|i| {
                let affinity = common
                    .iter()
                    .map(|&c| {
                        let own: f64 = rng.sample(StandardNormal);
                        rho.sqrt() * c + (1.0 - rho).sqrt() * own
                    })
                    .collect();
                ScenarioSpec {
                    name: SCENARIO_NAMES[i].into(),
                    traffic_share: REFERENCE_EXPOSURES[i] / total,
                    base_ctr: REFERENCE_CTR[i],
                    base_cvr_given_click: REFERENCE_CTCVR[i] / REFERENCE_CTR[i],
                    affinity,
                }
            })
            .collect();
        Self {
            seed,
            users: 2000,
            items: 1000,
            latent_dim,
            latent_mean: default_latent_mean(),
            interaction_scale: default_interaction_scale(),
            noise: 0.5,
            context_buckets: vec![10, 24],
            context_scale: default_context_scale(),
            impressions: 100_000,
            calibration_samples: default_calibration_samples(),
            scenarios,
        }
    }

    /// Three equally sized scenarios where `a` and `b` share one affinity
    /// vector and `c` is orthogonal to it.
    pub fn aligned_pair(seed: u64) -> Self {
        let mut cfg = Self::reference(seed, 0.0);
        let l = cfg.latent_dim;
        let aligned: Vec<f64> = (0..l).map(|k| if k < l / 2 { 1.4 } else { 0.0 }).collect();
        let orthogonal: Vec<f64> = (0..l).map(|k| if k < l / 2 { 0.0 } else { 1.4 }).collect();
        cfg.scenarios = [("a", &aligned, 0.15, 0.2), ("b", &aligned, 0.15, 0.2), ("c", &orthogonal, 0.15, 0.2)]
            .into_iter()
            .map(|(name, aff, ctr, cvr)| ScenarioSpec {
                name: name.into(),
                traffic_share: 1.0 / 3.0,
                base_ctr: ctr,
                base_cvr_given_click: cvr,
                affinity: aff.clone(),
            })
            .collect();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.latent_dim == 0 {
            return Err(Error::Config("users, items and latent_dim must be positive".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        if self.context_buckets.contains(&0) {
            return Err(Error::Config("context fields need at least one bucket".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and non-negative, got {}", self.noise)));
        }
        if self.calibration_samples == 0 {
            return Err(Error::Config("calibration_samples must be positive".into()));
        }
        let mut total = 0.0;
        for s in &self.scenarios {
            if !(s.traffic_share > 0.0 && s.traffic_share <= 1.0) {
                return Err(Error::Config(format!("scenario {}: traffic share {} out of (0,1]", s.name, s.traffic_share)));
            }
            for (what, p) in [("base_ctr", s.base_ctr), ("base_cvr_given_click", s.base_cvr_given_click)] {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Config(format!("scenario {}: {what} {p} out of (0,1)", s.name)));
                }
            }
            if s.affinity.len() != self.latent_dim {
                return Err(Error::Config(format!(
                    "scenario {}: affinity has {} entries, latent_dim is {}",
                    s.name,
                    s.affinity.len(),
                    self.latent_dim
                )));
            }
            total += s.traffic_share;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("traffic shares sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Feature schema matching the generated records, embedding width `dim`.
    pub fn schema(&self, dim: usize) -> FeatureSchema {
        FeatureSchema::standard(self.users, self.items, self.scenarios.len(), &self.context_buckets, dim)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("generator config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator config serializes")
    }
}

/// Fixed ground truth behind a dataset: latent factors, context effects and
/// calibrated intercepts. Impressions are drawn from it by [`Generator`].
#[derive(Debug, Clone)]
pub struct World {
    cfg: GeneratorConfig,
    users: Tensor,
    items: Tensor,
    /// `context_effects[scenario][field][bucket]`
    context_effects: Vec<Vec<Vec<f64>>>,
    click_bias: Vec<f64>,
    order_bias: Vec<f64>,
}

fn latent_table(rng: &mut ChaCha8Rng, rows: usize, dim: usize, mean: f64) -> Tensor {
    let data = (0..rows * dim).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![rows, dim], data).expect("shape matches data")
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Intercept `b` with `mean(weight · σ(b + z)) / mean(weight) = target`.
fn solve_intercept(z: &[f64], weight: &[f64], target: f64) -> f64 {
    let total: f64 = weight.iter().sum();
    let rate = |b: f64| z.iter().zip(weight).map(|(&z, &w)| w * sigmoid(b + z)).sum::<f64>() / total;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl World {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let users = latent_table(&mut rng, cfg.users, cfg.latent_dim, cfg.latent_mean);
        let items = latent_table(&mut rng, cfg.items, cfg.latent_dim, cfg.latent_mean);
        let context_effects = cfg
            .scenarios
            .iter()
            .map(|_| {
                cfg.context_buckets
                    .iter()
                    .map(|&b| (0..b).map(|_| cfg.context_scale * rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect()
            })
            .collect();
        let mut world = Self {
            cfg: cfg.clone(),
            users,
            items,
            context_effects,
            click_bias: vec![0.0; cfg.scenarios.len()],
            order_bias: vec![0.0; cfg.scenarios.len()],
        };
        world.calibrate();
        Ok(world)
    }

    /// Sets intercepts so that the expected CTR and CVR given click match the
    /// scenario specs, using a Monte-Carlo sample of the impression distribution.
    fn calibrate(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(0xca1b));
        for s in 0..self.cfg.scenarios.len() {
            let n = self.cfg.calibration_samples;
            let mut click_z = Vec::with_capacity(n);
            let mut order_z = Vec::with_capacity(n);
            for _ in 0..n {
                let (user, item, context) = self.draw_features(&mut rng);
                let score = self.score(s, user, item, &context);
                click_z.push(score + self.cfg.noise * rng.sample::<f64, _>(StandardNormal));
                order_z.push(score + self.cfg.noise * rng.sample::<f64, _>(StandardNormal));
            }
            let spec = &self.cfg.scenarios[s];
            self.click_bias[s] = solve_intercept(&click_z, &vec![1.0; n], spec.base_ctr);
            let click_p: Vec<f64> = click_z.iter().map(|&z| sigmoid(self.click_bias[s] + z)).collect();
            self.order_bias[s] = solve_intercept(&order_z, &click_p, spec.base_cvr_given_click);
        }
    }

    fn draw_features(&self, rng: &mut ChaCha8Rng) -> (usize, usize, Vec<usize>) {
        let user = rng.gen_range(0..self.cfg.users);
        let item = rng.gen_range(0..self.cfg.items);
        let context = self.cfg.context_buckets.iter().map(|&b| rng.gen_range(0..b)).collect();
        (user, item, context)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Noise-free logit contribution shared by the click and order models,
    /// without the scenario intercept.
    pub fn score(&self, scenario: usize, user: usize, item: usize, context: &[usize]) -> f64 {
        let a = &self.cfg.scenarios[scenario].affinity;
        let u = self.users.row(user);
        let v = self.items.row(item);
        let interaction: f64 = a.iter().zip(u).zip(v).map(|((a, u), v)| a * u * v).sum();
        let ctx: f64 = context
            .iter()
            .enumerate()
            .map(|(f, &b)| self.context_effects[scenario][f][b])
            .sum();
        self.cfg.interaction_scale * interaction / (self.cfg.latent_dim as f64).sqrt() + ctx
    }

    /// Noise-free click and order-given-click probabilities.
    pub fn probabilities(&self, scenario: usize, user: usize, item: usize, context: &[usize]) -> (f64, f64) {
        let z = self.score(scenario, user, item, context);
        (sigmoid(self.click_bias[scenario] + z), sigmoid(self.order_bias[scenario] + z))
    }

    pub fn click_bias(&self) -> &[f64] {
        &self.click_bias
    }

    pub fn order_bias(&self) -> &[f64] {
        &self.order_bias
    }

    /// Impression stream for this world.
    pub fn impressions(&self) -> Generator<'_> {
        let shares: Vec<f64> = self.cfg.scenarios.iter().map(|s| s.traffic_share).collect();
        Generator {
            world: self,
            rng: ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(0x1337)),
            scenario_dist: WeightedIndex::new(shares).expect("validated shares"),
            remaining: self.cfg.impressions,
        }
    }
}

/// Iterator over the impressions of a [`World`], in generation order.
pub struct Generator<'w> {
    world: &'w World,
    rng: ChaCha8Rng,
    scenario_dist: WeightedIndex<f64>,
    remaining: usize,
}

impl Iterator for Generator<'_> {
    type Item = ExampleRecord;

    fn next(&mut self) -> Option<ExampleRecord> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let w = self.world;
        let rng = &mut self.rng;
        let scenario = self.scenario_dist.sample(rng);
        let (user, item, context) = w.draw_features(rng);
        let score = w.score(scenario, user, item, &context);
        let click_z = w.click_bias[scenario] + score + w.cfg.noise * rng.sample::<f64, _>(StandardNormal);
        let order_z = w.order_bias[scenario] + score + w.cfg.noise * rng.sample::<f64, _>(StandardNormal);
        let click = rng.gen::<f64>() < sigmoid(click_z);
        let order_draw = rng.gen::<f64>() < sigmoid(order_z);
        Some(ExampleRecord {
            scenario,
            user,
            item,
            context,
            click,
            order: click && order_draw,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

/// Generates the full dataset described by `cfg`.
pub fn generate(cfg: &GeneratorConfig) -> Result<Vec<ExampleRecord>> {
    let world = World::new(cfg)?;
    Ok(world.impressions().collect())
}
