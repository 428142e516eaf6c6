//! Rollout-based evaluation: behavior histograms and their L1 distance,
//! success rates, weighted state densities and property-conditioned
//! generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::{rollout_batch, ConditionedPolicy, EnvConfig, MazeEnv};
use crate::neural::Codebook;
use crate::par::Exec;
use crate::rng::RngStream;
use crate::similarity::DissimilarityMatrix;
use crate::types::{behavior_of, BehaviorHistogram, BehaviorId, Dataset, Trajectory};

/// Episodes are rolled out in fixed groups of this size, one group per
/// parallel task.
const ROLLOUT_CHUNK: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_rollouts: usize,
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub greedy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 500,
            seeds: (0..5).collect(),
            env: EnvConfig::deterministic(),
            greedy: true,
        }
    }
}

impl EvalConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_rollouts == 0 {
            v.push("n_rollouts must be at least 1".into());
        }
        if self.seeds.is_empty() {
            v.push("seeds must not be empty".into());
        }
        v.extend(self.env.violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }
}

/// Where rollout styles come from.
#[derive(Clone, Debug, PartialEq)]
pub enum StyleSource {
    /// Uniform over these codebook rows.
    Rows(Vec<usize>),
    /// Every rollout uses this style vector.
    Fixed(Vec<f64>),
}

impl StyleSource {
    /// The full codebook mixture.
    pub fn uniform(rows: usize) -> Self {
        StyleSource::Rows((0..rows).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub trajectories: Vec<Trajectory>,
    /// Codebook row used by each episode, if it came from the codebook.
    pub style_rows: Vec<Option<usize>>,
}

/// Rolls out `n` episodes. Styles are drawn from the `"eval/styles"` stream
/// of `seed` and episode `k` runs on stream `"eval/episode/{k}"`.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    policy: &dyn ConditionedPolicy,
    codebook: &Codebook,
    env: &MazeEnv,
    source: &StyleSource,
    n: usize,
    greedy: bool,
    seed: u64,
    exec: Exec,
) -> Result<Generated> {
    if n == 0 {
        return Err(Error::InvalidConfig("n_rollouts must be at least 1".into()));
    }
    let mut style_rng = RngStream::new(seed, "eval/styles");
    let style_rows: Vec<Option<usize>> = match source {
        StyleSource::Rows(rows) => {
            if rows.is_empty() {
                return Err(Error::PropertyUnsatisfiable);
            }
            if let Some(&bad) = rows.iter().find(|&&r| r >= codebook.rows()) {
                return Err(Error::DimensionMismatch {
                    expected: codebook.rows(),
                    got: bad,
                });
            }
            (0..n).map(|_| Some(rows[style_rng.below(rows.len())])).collect()
        }
        StyleSource::Fixed(z) => {
            if z.len() != policy.style_dim() {
                return Err(Error::DimensionMismatch {
                    expected: policy.style_dim(),
                    got: z.len(),
                });
            }
            vec![None; n]
        }
    };
    let chunks = n.div_ceil(ROLLOUT_CHUNK);
    let parts = exec.try_map_indexed(chunks, |c| {
        let range = c * ROLLOUT_CHUNK..((c + 1) * ROLLOUT_CHUNK).min(n);
        let styles: Vec<&[f64]> = range
            .clone()
            .map(|k| match (source, style_rows[k]) {
                (StyleSource::Fixed(z), _) => z.as_slice(),
                (_, Some(r)) => codebook.row(r),
                (_, None) => unreachable!("rows source always assigns a row"),
            })
            .collect();
        let rngs = range
            .map(|k| RngStream::new(seed, format!("eval/episode/{k}")))
            .collect();
        rollout_batch(env, policy, &styles, greedy, rngs)
    })?;
    let trajectories = parts
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(k, mut t)| {
            t.id = k;
            t
        })
        .collect();
    Ok(Generated {
        trajectories,
        style_rows,
    })
}

/// Sum of absolute bin differences over the union of both supports.
pub fn l1_distance(a: &BehaviorHistogram, b: &BehaviorHistogram) -> f64 {
    let keys: BTreeSet<&BehaviorId> = a.support().chain(b.support()).collect();
    let d: f64 = keys.into_iter().map(|k| (a.get(k) - b.get(k)).abs()).sum();
    // Disjoint supports can round to just above 2.
    d.min(2.0)
}

/// Copies of the histograms, each listing every label of the union support.
pub fn with_union_support(hists: &[&BehaviorHistogram]) -> Vec<BehaviorHistogram> {
    let keys: BTreeSet<BehaviorId> = hists.iter().flat_map(|h| h.support().cloned()).collect();
    hists
        .iter()
        .map(|h| BehaviorHistogram {
            bins: keys.iter().map(|k| (k.clone(), h.get(k))).collect(),
        })
        .collect()
}

pub fn success_rate(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(trajs.iter().filter(|t| t.success).count() as f64 / trajs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub l1: f64,
    pub success_rate: f64,
    pub histogram: BehaviorHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub reference: BehaviorHistogram,
    pub per_seed: Vec<SeedEval>,
    pub l1_mean: f64,
    pub l1_std: f64,
    pub success_mean: f64,
    pub success_std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Generates from the full codebook mixture once per seed and compares
/// against the dataset's behavior histogram.
pub fn evaluate(
    policy: &dyn ConditionedPolicy,
    codebook: &Codebook,
    ds: &Dataset,
    env: &MazeEnv,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<EvalReport> {
    cfg.validate()?;
    let reference = ds.histogram()?;
    let source = StyleSource::uniform(codebook.rows());
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let g = generate(policy, codebook, env, &source, cfg.n_rollouts, cfg.greedy, seed, exec)?;
        let histogram = BehaviorHistogram::of_trajectories(&g.trajectories)?;
        per_seed.push(SeedEval {
            seed,
            l1: l1_distance(&reference, &histogram),
            success_rate: success_rate(&g.trajectories)?,
            histogram,
        });
    }
    let (l1_mean, l1_std) = mean_std(&per_seed.iter().map(|s| s.l1).collect::<Vec<_>>());
    let (success_mean, success_std) =
        mean_std(&per_seed.iter().map(|s| s.success_rate).collect::<Vec<_>>());
    Ok(EvalReport {
        reference,
        per_seed,
        l1_mean,
        l1_std,
        success_mean,
        success_std,
    })
}

/// Weighted state-visitation mass on a `resolution × resolution` grid over
/// the maze's bounding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub resolution: usize,
    pub width: f64,
    pub height: f64,
    /// Non-empty cells keyed by `(column, row)` grid index.
    #[serde(with = "cell_list")]
    pub cells: BTreeMap<(usize, usize), f64>,
}

mod cell_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    type Cells = BTreeMap<(usize, usize), f64>;

    pub fn serialize<S: Serializer>(cells: &Cells, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<(usize, usize, f64)> = cells.iter().map(|(&(x, y), &m)| (x, y, m)).collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Cells, D::Error> {
        let list = Vec::<(usize, usize, f64)>::deserialize(d)?;
        Ok(list.into_iter().map(|(x, y, m)| ((x, y), m)).collect())
    }
}

impl DensityGrid {
    pub fn total(&self) -> f64 {
        self.cells.values().sum()
    }

    pub fn cell_index(&self, x: f64, y: f64) -> (usize, usize) {
        let r = self.resolution;
        let idx = |v: f64, extent: f64| ((v / extent * r as f64).floor().max(0.0) as usize).min(r - 1);
        (idx(x, self.width), idx(y, self.height))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,mass\n");
        for (&(x, y), m) in &self.cells {
            out.push_str(&format!("{x},{y},{m}\n"));
        }
        out
    }
}

/// `ρ(cell | z_i) = Σ_j Σ_t 1{s_t ∈ cell} / (|D| |τ_j|) · exp(-β ν[i][j])`,
/// with `|τ_j|` counting states.
pub fn density(
    ds: &Dataset,
    nu: &DissimilarityMatrix,
    beta: f64,
    reference: usize,
    resolution: usize,
    bounds: (f64, f64),
) -> Result<DensityGrid> {
    if resolution == 0 {
        return Err(Error::InvalidConfig("density resolution must be at least 1".into()));
    }
    if nu.len() != ds.len() {
        return Err(Error::LengthMismatch(nu.len(), ds.len()));
    }
    if reference >= ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: reference,
        });
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidConfig(format!("beta must be finite and non-negative, got {beta}")));
    }
    let mut grid = DensityGrid {
        resolution,
        width: bounds.0,
        height: bounds.1,
        cells: BTreeMap::new(),
    };
    let n = ds.len() as f64;
    for (j, traj) in ds.trajectories.iter().enumerate() {
        let w = nu.weight(reference, j, beta);
        if w == 0.0 || traj.states.is_empty() {
            continue;
        }
        let unit = w / (n * traj.states.len() as f64);
        for s in &traj.states {
            *grid.cells.entry(grid.cell_index(s.x, s.y)).or_insert(0.0) += unit;
        }
    }
    Ok(grid)
}

type MetricFn = Arc<dyn Fn(&Trajectory) -> f64 + Send + Sync>;

/// Named trajectory metrics usable in a [`Property`].
#[derive(Clone)]
pub struct MetricRegistry {
    metrics: BTreeMap<String, MetricFn>,
}

impl fmt::Debug for MetricRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.metrics.keys()).finish()
    }
}

impl Default for MetricRegistry {
    /// `length` counts actions; `behavior` reads the label as a number
    /// (`NaN` for labels that are not plain digits, which no range admits).
    fn default() -> Self {
        let mut r = Self {
            metrics: BTreeMap::new(),
        };
        r.register("length", |t: &Trajectory| t.len() as f64);
        r.register("behavior", |t: &Trajectory| {
            let b = behavior_of(t);
            if !b.0.is_empty() && b.0.bytes().all(|c| c.is_ascii_digit()) {
                b.0.parse().unwrap_or(f64::NAN)
            } else {
                f64::NAN
            }
        });
        r
    }
}

impl MetricRegistry {
    pub fn register(&mut self, name: &str, f: impl Fn(&Trajectory) -> f64 + Send + Sync + 'static) {
        self.metrics.insert(name.to_owned(), Arc::new(f));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.metrics.keys().map(String::as_str)
    }

    pub fn eval(&self, metric: &str, t: &Trajectory) -> Result<f64> {
        self.metrics
            .get(metric)
            .map(|f| f(t))
            .ok_or_else(|| Error::UnknownMetric(metric.to_owned()))
    }
}

/// `metric(τ) ∈ [min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Property {
    pub metric: String,
    pub min: f64,
    pub max: f64,
}

impl Property {
    pub fn new(metric: &str, min: f64, max: f64) -> Self {
        Self {
            metric: metric.to_owned(),
            min,
            max,
        }
    }

    pub fn validate(&self, registry: &MetricRegistry) -> Result<()> {
        if !(self.min <= self.max) {
            return Err(Error::InvalidConfig(format!(
                "property range [{}, {}] is empty",
                self.min, self.max
            )));
        }
        if registry.metrics.contains_key(&self.metric) {
            Ok(())
        } else {
            Err(Error::UnknownMetric(self.metric.clone()))
        }
    }

    pub fn holds(&self, registry: &MetricRegistry, t: &Trajectory) -> Result<bool> {
        let m = registry.eval(&self.metric, t)?;
        Ok(m >= self.min && m <= self.max)
    }
}

/// Uniform mixture over the styles of the training trajectories that
/// satisfy `prop`.
pub fn conditioned_styles(
    ds: &Dataset,
    prop: &Property,
    registry: &MetricRegistry,
) -> Result<StyleSource> {
    prop.validate(registry)?;
    let mut rows = Vec::new();
    for (i, t) in ds.trajectories.iter().enumerate() {
        if prop.holds(registry, t)? {
            rows.push(i);
        }
    }
    if rows.is_empty() {
        return Err(Error::PropertyUnsatisfiable);
    }
    Ok(StyleSource::Rows(rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub property: Property,
    pub seed: u64,
    pub selected_rows: Vec<usize>,
    pub train: BehaviorHistogram,
    pub restricted_train: BehaviorHistogram,
    pub free_eval: BehaviorHistogram,
    pub controlled_eval: BehaviorHistogram,
    pub free_l1: f64,
    pub controlled_l1: f64,
    pub free_lengths: Vec<usize>,
    pub controlled_lengths: Vec<usize>,
    pub free_success_rate: f64,
    pub controlled_success_rate: f64,
}

impl ControlReport {
    /// Fraction of controlled rollouts whose length lies in `[lo, hi]`.
    pub fn controlled_length_fraction(&self, lo: usize, hi: usize) -> f64 {
        let inside = self
            .controlled_lengths
            .iter()
            .filter(|&&l| (lo..=hi).contains(&l))
            .count();
        inside as f64 / self.controlled_lengths.len().max(1) as f64
    }
}

/// Compares free generation against generation restricted to the styles of
/// trajectories satisfying `prop`, both scored against the restricted
/// training histogram.
#[allow(clippy::too_many_arguments)]
pub fn control_report(
    policy: &dyn ConditionedPolicy,
    codebook: &Codebook,
    ds: &Dataset,
    prop: &Property,
    registry: &MetricRegistry,
    env: &MazeEnv,
    n_rollouts: usize,
    greedy: bool,
    seed: u64,
    exec: Exec,
) -> Result<ControlReport> {
    let controlled_source = conditioned_styles(ds, prop, registry)?;
    let StyleSource::Rows(selected_rows) = &controlled_source else {
        unreachable!("conditioned_styles yields codebook rows")
    };
    let train = ds.histogram()?;
    let restricted_train =
        BehaviorHistogram::of_trajectories(selected_rows.iter().map(|&i| &ds.trajectories[i]))?;
    let free = generate(
        policy,
        codebook,
        env,
        &StyleSource::uniform(codebook.rows()),
        n_rollouts,
        greedy,
        seed,
        exec,
    )?;
    let controlled = generate(policy, codebook, env, &controlled_source, n_rollouts, greedy, seed, exec)?;
    let free_eval = BehaviorHistogram::of_trajectories(&free.trajectories)?;
    let controlled_eval = BehaviorHistogram::of_trajectories(&controlled.trajectories)?;
    Ok(ControlReport {
        property: prop.clone(),
        seed,
        selected_rows: selected_rows.clone(),
        free_l1: l1_distance(&restricted_train, &free_eval),
        controlled_l1: l1_distance(&restricted_train, &controlled_eval),
        free_lengths: free.trajectories.iter().map(Trajectory::len).collect(),
        controlled_lengths: controlled.trajectories.iter().map(Trajectory::len).collect(),
        free_success_rate: success_rate(&free.trajectories)?,
        controlled_success_rate: success_rate(&controlled.trajectories)?,
        train,
        restricted_train,
        free_eval,
        controlled_eval,
    })
}
