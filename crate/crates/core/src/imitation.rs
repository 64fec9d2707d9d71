//! Behavior cloning: roll out a full-observation expert, store each day's
//! reduced observation with the expert's action, and fit a squashed-output
//! regressor on those pairs. The result is a policy that manages the crop
//! from the twelve commonly measurable variables alone.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

use crate::action::{round_to_grid, ActionAmounts, N_MAX, WATER_MAX};
use crate::env::{CropEnv, FullObservation, PartialObservation, PARTIAL_OBS_LEN};
use crate::error::{Error, Result};
use crate::nn::{AdamState, HeadKind, MlpParams, Normalizer};
use crate::policies::{obs_idx, ObsKind, Policy};
use crate::seeds::derive_seed;

/// One state-action pair from an expert rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub obs: PartialObservation,
    pub action: ActionAmounts,
}

/// A demonstration tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRow {
    pub ep: u64,
    pub dap: u32,
    pub demo: Demonstration,
}

/// Provenance carried alongside the pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoMeta {
    pub expert_name: String,
    /// Hex SHA-256 of the expert checkpoint, when the expert came from one.
    pub expert_sha256: Option<String>,
    pub base_seed: u64,
    pub episode_seeds: Vec<u64>,
}

/// Ordered demonstrations plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub rows: Vec<DemoRow>,
    pub meta: DemoMeta,
}

impl DemoDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Hex SHA-256 of arbitrary bytes; used to fingerprint expert checkpoints.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Rolls out the expert for `n_episodes` seasons of seed-derived weather and
/// records (reduced observation, expert action) for every day. The factory
/// receives the derived per-episode seed and must map it to a fresh
/// environment deterministically.
pub fn collect_demos<F>(
    expert: &mut dyn Policy,
    mut make_env: F,
    n_episodes: usize,
    seed: u64,
) -> Result<DemoDataset>
where
    F: FnMut(u64) -> Result<CropEnv>,
{
    if n_episodes == 0 {
        return Err(Error::invalid_argument("need at least one episode"));
    }
    let mut rows = Vec::new();
    let mut episode_seeds = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes as u64 {
        let episode_seed = derive_seed(seed, ep);
        episode_seeds.push(episode_seed);
        let mut env = make_env(episode_seed)?;
        expert.begin_episode(episode_seed);
        let mut obs = env.reset();
        let mut dap = 0u32;
        while !env.is_done() {
            let action = expert.act(&obs);
            rows.push(DemoRow {
                ep,
                dap,
                demo: Demonstration {
                    obs: obs.partial(),
                    action,
                },
            });
            obs = env.step(action)?.observation;
            dap += 1;
        }
    }
    Ok(DemoDataset {
        rows,
        meta: DemoMeta {
            expert_name: expert.name().to_string(),
            expert_sha256: None,
            base_seed: seed,
            episode_seeds,
        },
    })
}

/// Cloning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            epochs: 60,
            seed: 0,
            hidden_sizes: vec![256, 256, 256],
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid_argument("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid_argument("epochs must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid_argument("learning_rate must be > 0"));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::invalid_argument("zero-width hidden layer"));
        }
        Ok(())
    }
}

/// A trained cloning network with its input normalizer. Outputs are squashed
/// to [0, 160] x [0, 24] by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BcModel {
    pub params: MlpParams,
    pub normalizer: Normalizer,
}

impl BcModel {
    pub fn new(params: MlpParams, normalizer: Normalizer) -> Result<Self> {
        let expected = HeadKind::Squashed {
            scales: vec![N_MAX, WATER_MAX],
        };
        if params.head != expected {
            return Err(Error::format(
                "cloning model requires a squashed head scaled to the action box",
            ));
        }
        if params.input_size() != PARTIAL_OBS_LEN || params.output_size() != 2 {
            return Err(Error::format(format!(
                "cloning network must map {PARTIAL_OBS_LEN} inputs to 2 outputs, got {} -> {}",
                params.input_size(),
                params.output_size()
            )));
        }
        if normalizer.len() != PARTIAL_OBS_LEN {
            return Err(Error::format("normalizer width must match the observation"));
        }
        Ok(BcModel { params, normalizer })
    }
}

/// Continuous action from the cloning network; always inside the action box.
pub fn bc_action(model: &BcModel, obs: &PartialObservation) -> Result<ActionAmounts> {
    let x = model.normalizer.normalize(obs.as_slice())?;
    let y = model.params.forward_one(&x)?;
    ActionAmounts::new(y[0], y[1])
}

/// What `train_bc` produces: the model plus the mean training loss per epoch.
#[derive(Debug, Clone)]
pub struct TrainBcOutput {
    pub model: BcModel,
    pub epoch_losses: Vec<f64>,
}

/// Fits the cloning network by mini-batch Adam on mean squared error between
/// the squashed outputs and the demonstrated amounts. Deterministic per seed.
pub fn train_bc(dataset: &DemoDataset, cfg: &BcConfig) -> Result<TrainBcOutput> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid_argument("empty demonstration dataset"));
    }
    if cfg.batch_size > dataset.len() {
        return Err(Error::invalid_argument(format!(
            "batch_size {} exceeds dataset size {}",
            cfg.batch_size,
            dataset.len()
        )));
    }

    let inputs: Vec<Vec<f64>> = dataset
        .rows
        .iter()
        .map(|r| r.demo.obs.as_slice().to_vec())
        .collect();
    let normalizer = Normalizer::fit(&inputs)?;

    let mut sizes = Vec::with_capacity(cfg.hidden_sizes.len() + 2);
    sizes.push(PARTIAL_OBS_LEN);
    sizes.extend_from_slice(&cfg.hidden_sizes);
    sizes.push(2);
    let head = HeadKind::Squashed {
        scales: vec![N_MAX, WATER_MAX],
    };
    let mut params = MlpParams::init(&sizes, head, derive_seed(cfg.seed, 1))?;
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = Array2::zeros((chunk.len(), PARTIAL_OBS_LEN));
            let mut t = Array2::zeros((chunk.len(), 2));
            for (r, &i) in chunk.iter().enumerate() {
                for (c, &v) in inputs[i].iter().enumerate() {
                    x[[r, c]] = v;
                }
                t[[r, 0]] = dataset.rows[i].demo.action.n_fert;
                t[[r, 1]] = dataset.rows[i].demo.action.water;
            }
            let x = normalizer.normalize_batch(&x)?;
            let (loss, grads) = params.loss_and_grad(&x, &t)?;
            adam.update(&mut params, &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        epoch_losses.push(loss_sum / batches as f64);
    }

    Ok(TrainBcOutput {
        model: BcModel::new(params, normalizer)?,
        epoch_losses,
    })
}

/// The cloning network as a rollout policy. Reads only the reduced prefix of
/// the observation; by default snaps its continuous output to the management
/// grid, as the evaluation protocol does.
pub struct BcPolicy {
    model: BcModel,
    round: bool,
}

impl BcPolicy {
    pub fn new(model: BcModel) -> Self {
        BcPolicy { model, round: true }
    }

    /// Variant that applies the raw continuous amounts.
    pub fn raw(model: BcModel) -> Self {
        BcPolicy {
            model,
            round: false,
        }
    }

    pub fn model(&self) -> &BcModel {
        &self.model
    }
}

impl Policy for BcPolicy {
    fn name(&self) -> &str {
        if self.round {
            "bc"
        } else {
            "bc-raw"
        }
    }

    fn obs_kind(&self) -> ObsKind {
        ObsKind::Partial
    }

    fn begin_episode(&mut self, _episode_seed: u64) {}

    fn act(&mut self, obs: &FullObservation) -> ActionAmounts {
        let a = bc_action(&self.model, &obs.partial()).expect("validated cloning model");
        if self.round {
            round_to_grid(a)
        } else {
            a
        }
    }
}

/// Deterministic hand-written manager used as a cloneable reference expert:
/// fixed fertilizer doses at leaf-count milestones and tiered irrigation from
/// the observed soil-water fraction. Stateless given the observation, so a
/// regressor on the reduced variables can reproduce it.
pub struct ScriptedExpert {
    /// Leaf counts at which the next dose is due.
    vstage_triggers: Vec<f64>,
    dose_kg_ha: f64,
    /// Below this soil-water fraction apply the larger irrigation.
    sw_low: f64,
    /// Below this fraction (but above `sw_low`) apply the smaller one.
    sw_mid: f64,
}

impl Default for ScriptedExpert {
    fn default() -> Self {
        ScriptedExpert {
            vstage_triggers: vec![1.2, 4.0, 8.0, 12.0, 16.0, 19.0],
            dose_kg_ha: 40.0,
            sw_low: 0.45,
            sw_mid: 0.55,
        }
    }
}

impl ScriptedExpert {
    /// Total N the schedule applies once every trigger has been crossed.
    pub fn total_n(&self) -> f64 {
        self.dose_kg_ha * self.vstage_triggers.len() as f64
    }
}

impl Policy for ScriptedExpert {
    fn name(&self) -> &str {
        "scripted-expert"
    }

    fn obs_kind(&self) -> ObsKind {
        ObsKind::Partial
    }

    fn begin_episode(&mut self, _episode_seed: u64) {}

    fn act(&mut self, obs: &FullObservation) -> ActionAmounts {
        let o = obs.as_slice();
        // Doses already applied, reconstructed from the cumulative total so
        // the rule needs no memory of its own.
        let applied = (o[obs_idx::CUMSUMFERT] / self.dose_kg_ha).round() as usize;
        let due = self
            .vstage_triggers
            .iter()
            .filter(|&&t| o[obs_idx::VSTAGE] >= t)
            .count();
        let n = if applied < due { self.dose_kg_ha } else { 0.0 };

        let mature = o[obs_idx::ISTAGE] >= 4.0;
        let sw = o[obs_idx::SW];
        let water = if mature {
            0.0
        } else if sw < self.sw_low {
            12.0
        } else if sw < self.sw_mid {
            6.0
        } else {
            0.0
        };
        ActionAmounts::new(n, water).expect("grid amounts are in range")
    }
}

/// Fraction of days on which the two policies pick the same grid cell, over
/// episodes driven by `policy_a`.
pub fn agreement_rate<F>(
    policy_a: &mut dyn Policy,
    policy_b: &mut dyn Policy,
    mut make_env: F,
    n_episodes: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(u64) -> Result<CropEnv>,
{
    if n_episodes == 0 {
        return Err(Error::invalid_argument("need at least one episode"));
    }
    let mut matches = 0usize;
    let mut total = 0usize;
    for ep in 0..n_episodes as u64 {
        let episode_seed = derive_seed(seed, ep);
        let mut env = make_env(episode_seed)?;
        policy_a.begin_episode(episode_seed);
        policy_b.begin_episode(episode_seed);
        let mut obs = env.reset();
        while !env.is_done() {
            let a = policy_a.act(&obs);
            let b = policy_b.act(&obs);
            if round_to_grid(a) == round_to_grid(b) {
                matches += 1;
            }
            total += 1;
            obs = env.step(a)?.observation;
        }
    }
    Ok(matches as f64 / total as f64)
}

/// Writes the dataset as CSV (`ep,dap,obs_0..obs_11,n_fert,water`) plus a
/// `<path>.meta` sidecar holding provenance. Floats use the shortest exact
/// representation, so a reload reproduces the dataset bit for bit.
pub fn write_demos_csv(path: &Path, dataset: &DemoDataset) -> Result<()> {
    let mut out = String::from("ep,dap");
    for i in 0..PARTIAL_OBS_LEN {
        let _ = write!(out, ",obs_{i}");
    }
    out.push_str(",n_fert,water\n");
    for row in &dataset.rows {
        let _ = write!(out, "{},{}", row.ep, row.dap);
        for v in row.demo.obs.as_slice() {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", row.demo.action.n_fert, row.demo.action.water);
    }
    std::fs::write(path, out)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "expert={}", dataset.meta.expert_name);
    if let Some(h) = &dataset.meta.expert_sha256 {
        let _ = writeln!(meta, "expert_sha256={h}");
    }
    let _ = writeln!(meta, "base_seed={}", dataset.meta.base_seed);
    let _ = writeln!(
        meta,
        "episode_seeds={}",
        dataset
            .meta
            .episode_seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    std::path::PathBuf::from(p)
}

/// Reads a dataset written by [`write_demos_csv`], including the sidecar.
pub fn load_demos_csv(path: &Path) -> Result<DemoDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty demonstration file"))?;
    let mut expected = String::from("ep,dap");
    for i in 0..PARTIAL_OBS_LEN {
        let _ = write!(expected, ",obs_{i}");
    }
    expected.push_str(",n_fert,water");
    if header.trim() != expected {
        return Err(Error::parse(1, format!("expected header `{expected}`")));
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + PARTIAL_OBS_LEN + 2 {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, got {}", 2 + PARTIAL_OBS_LEN + 2, fields.len()),
            ));
        }
        let ep: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| Error::parse(lineno, format!("bad episode index: {e}")))?;
        let dap: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|e| Error::parse(lineno, format!("bad day index: {e}")))?;
        let mut obs = [0.0; PARTIAL_OBS_LEN];
        for (i, slot) in obs.iter_mut().enumerate() {
            *slot = fields[2 + i]
                .trim()
                .parse()
                .map_err(|e| Error::parse(lineno, format!("bad obs_{i}: {e}")))?;
        }
        let n_fert: f64 = fields[2 + PARTIAL_OBS_LEN]
            .trim()
            .parse()
            .map_err(|e| Error::parse(lineno, format!("bad n_fert: {e}")))?;
        let water: f64 = fields[3 + PARTIAL_OBS_LEN]
            .trim()
            .parse()
            .map_err(|e| Error::parse(lineno, format!("bad water: {e}")))?;
        rows.push(DemoRow {
            ep,
            dap,
            demo: Demonstration {
                obs: PartialObservation(obs),
                action: ActionAmounts::new(n_fert, water)
                    .map_err(|e| Error::parse(lineno, e.to_string()))?,
            },
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(1, "no demonstrations in file"));
    }

    let meta_text = std::fs::read_to_string(sidecar_path(path))?;
    let mut expert_name = None;
    let mut expert_sha256 = None;
    let mut base_seed = None;
    let mut episode_seeds = Vec::new();
    for (idx, line) in meta_text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, "expected key=value"))?;
        match key {
            "expert" => expert_name = Some(value.to_string()),
            "expert_sha256" => expert_sha256 = Some(value.to_string()),
            "base_seed" => {
                base_seed = Some(
                    value
                        .parse()
                        .map_err(|e| Error::parse(lineno, format!("bad base_seed: {e}")))?,
                )
            }
            "episode_seeds" => {
                for part in value.split(',').filter(|p| !p.is_empty()) {
                    episode_seeds.push(
                        part.parse()
                            .map_err(|e| Error::parse(lineno, format!("bad episode seed: {e}")))?,
                    );
                }
            }
            other => return Err(Error::parse(lineno, format!("unknown metadata key `{other}`"))),
        }
    }
    Ok(DemoDataset {
        rows,
        meta: DemoMeta {
            expert_name: expert_name
                .ok_or_else(|| Error::format("metadata missing expert name"))?,
            expert_sha256,
            base_seed: base_seed.ok_or_else(|| Error::format("metadata missing base_seed"))?,
            episode_seeds,
        },
    })
}
