//! Q-learning over the 25-action management grid: epsilon-greedy behavior,
//! uniform replay, a hard-synced target network, and TD regression on the
//! taken action. Training runs one season per episode on seed-derived weather
//! and is bitwise deterministic for a given configuration.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{decode_action, ActionAmounts, ActionIndex, NUM_ACTIONS};
use crate::env::{CropEnv, FullObservation, FULL_OBS_LEN};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Checkpoint, HeadKind, MlpParams, Normalizer};
use crate::policies::{ObsKind, Policy};
use crate::reward::{daily_reward, preset};
use crate::seeds::derive_seed;

/// One stored experience tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: FullObservation,
    pub action: ActionIndex,
    pub reward: f64,
    pub next_obs: FullObservation,
    pub done: bool,
}

/// Fixed-capacity ring of transitions; a push on a full buffer evicts the
/// oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid_argument("replay capacity must be >= 1"));
        }
        Ok(ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&Transition>> {
        if self.items.len() < n {
            return Err(Error::state(format!(
                "replay holds {} transitions, cannot sample {n}",
                self.items.len()
            )));
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// Training hyperparameters. Defaults follow the published settings where
/// one exists (gamma, learning rate, batch size) and common Q-learning
/// practice elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Hard target-network sync period, in gradient steps.
    pub target_sync_interval: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon anneals linearly.
    pub epsilon_decay_fraction: f64,
    pub episodes: usize,
    pub seed: u64,
    /// Reward preset name (RF1..RF5) used for the training signal.
    pub reward_preset: String,
    pub hidden_sizes: Vec<usize>,
    /// Rewards are multiplied by this before entering the replay buffer so
    /// Q-targets sit near unit scale at the published learning rate.
    pub reward_scale: f64,
    /// Environment steps per gradient step (1 = update every step).
    pub update_every: usize,
    /// Random-policy episodes used to fit the input normalizer.
    pub normalizer_episodes: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            learning_rate: 1e-5,
            batch_size: 640,
            replay_capacity: 100_000,
            target_sync_interval: 2000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.6,
            episodes: 2000,
            seed: 0,
            reward_preset: "RF1".to_string(),
            hidden_sizes: vec![256, 256, 256],
            reward_scale: 1e-3,
            update_every: 1,
            normalizer_episodes: 1000,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid_argument(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        for (name, e) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid_argument(format!("{name} {e} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return Err(Error::invalid_argument("epsilon_decay_fraction outside [0, 1]"));
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return Err(Error::invalid_argument(format!(
                "batch size {} must be in 1..=replay capacity {}",
                self.batch_size, self.replay_capacity
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid_argument("learning_rate must be > 0"));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::invalid_argument("reward_scale must be > 0"));
        }
        if self.update_every == 0 {
            return Err(Error::invalid_argument("update_every must be >= 1"));
        }
        if self.target_sync_interval == 0 {
            return Err(Error::invalid_argument("target_sync_interval must be >= 1"));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::invalid_argument("zero-width hidden layer"));
        }
        preset(&self.reward_preset)?;
        Ok(())
    }

    /// Epsilon for a given episode index: linear from start to end over the
    /// first `epsilon_decay_fraction` of episodes, then flat.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let horizon = self.epsilon_decay_fraction * self.episodes as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        (1.0 - frac) * self.epsilon_start + frac * self.epsilon_end
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(FULL_OBS_LEN);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(NUM_ACTIONS);
        sizes
    }
}

/// A Q-network bundled with its input normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    pub params: MlpParams,
    pub normalizer: Normalizer,
}

impl QFunction {
    pub fn new(params: MlpParams, normalizer: Normalizer) -> Result<Self> {
        if params.head != HeadKind::Linear {
            return Err(Error::format("Q-function requires a linear head"));
        }
        if params.input_size() != FULL_OBS_LEN || params.output_size() != NUM_ACTIONS {
            return Err(Error::format(format!(
                "Q-network must map {FULL_OBS_LEN} inputs to {NUM_ACTIONS} outputs, got {} -> {}",
                params.input_size(),
                params.output_size()
            )));
        }
        if normalizer.len() != FULL_OBS_LEN {
            return Err(Error::format("normalizer width must match the observation"));
        }
        Ok(QFunction { params, normalizer })
    }

    pub fn q_values(&self, obs: &FullObservation) -> Result<Vec<f64>> {
        let x = self.normalizer.normalize(obs.as_slice())?;
        self.params.forward_one(&x)
    }

    /// Greedy action: argmax over Q-values, ties to the lowest index.
    pub fn greedy_action(&self, obs: &FullObservation) -> Result<ActionIndex> {
        let q = self.q_values(obs)?;
        let mut best = 0;
        for (i, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = i;
            }
        }
        ActionIndex::new(best)
    }
}

/// Epsilon-greedy action choice. Always consumes one uniform draw, plus one
/// more when exploring, so the random stream advances the same way whether or
/// not the greedy branch is taken.
pub fn select_action(
    q: &QFunction,
    obs: &FullObservation,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ActionIndex> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid_argument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.random::<f64>() < epsilon {
        ActionIndex::new(rng.random_range(0..NUM_ACTIONS))
    } else {
        q.greedy_action(obs)
    }
}

/// TD regression targets: r + gamma * max_a' Q(s', a'; target) for live
/// transitions, plain r for terminal ones.
pub fn td_targets(batch: &[&Transition], target: &QFunction, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let mut next = Array2::zeros((batch.len(), FULL_OBS_LEN));
    for (mut row, t) in next.rows_mut().into_iter().zip(batch) {
        for (slot, &v) in row.iter_mut().zip(t.next_obs.as_slice()) {
            *slot = v;
        }
    }
    let next = target.normalizer.normalize_batch(&next)?;
    let q_next = target.params.forward_batch(&next)?;
    Ok(batch
        .iter()
        .zip(q_next.rows())
        .map(|(t, row)| {
            if t.done {
                t.reward
            } else {
                let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                t.reward + gamma * best
            }
        })
        .collect())
}

/// Deep copy of the online parameters; later online updates leave it alone.
pub fn sync_target(online: &MlpParams) -> MlpParams {
    online.clone()
}

/// One point of the training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePoint {
    pub episode: usize,
    /// Undiscounted raw-reward season return of the behavior policy.
    pub ret: f64,
    pub epsilon: f64,
}

/// Everything `train` produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub q: QFunction,
    pub curve: Vec<EpisodePoint>,
    pub gradient_steps: u64,
}

// Seed-stream tags: one base seed fans out into independent substreams.
const STREAM_INIT: u64 = 1;
const STREAM_BEHAVIOR: u64 = 2;
const STREAM_SAMPLING: u64 = 3;
const STREAM_WARMUP: u64 = 4;
/// Episode-index namespace for normalizer warm-up environments, kept clear
/// of training episode indices.
pub const WARMUP_EPISODE_BASE: u64 = 1 << 32;
/// Probability that a warm-up day takes a random action instead of no-op.
const WARMUP_ACT_PROB: f64 = 0.1;

/// Initial online-network parameters: He-initialized hidden layers with a
/// zeroed output layer. Starting all action values identical (ties resolve
/// to the lowest-index, do-nothing action) means the small per-step Adam
/// movement is spent separating actions by their learned values rather
/// than first unlearning random head offsets, and the earliest TD targets
/// reduce to immediate rewards.
pub fn initial_q_params(cfg: &DqnConfig) -> Result<MlpParams> {
    let mut params = MlpParams::init(
        &cfg.layer_sizes(),
        HeadKind::Linear,
        derive_seed(cfg.seed, STREAM_INIT),
    )?;
    params.weights.last_mut().expect("at least one layer").fill(0.0);
    params.biases.last_mut().expect("at least one layer").fill(0.0);
    Ok(params)
}

/// Fits the input normalizer from random-policy episodes, then runs DQN
/// training. `make_env` must build a fresh environment for an episode index
/// (training uses 0..episodes; warm-up uses `WARMUP_EPISODE_BASE + i`), and
/// fully determines weather, so the whole run is reproducible from `cfg`.
pub fn train<F>(mut make_env: F, cfg: &DqnConfig) -> Result<TrainOutput>
where
    F: FnMut(u64) -> Result<CropEnv>,
{
    cfg.validate()?;
    let reward_cfg = preset(&cfg.reward_preset)?;

    // Normalization constants from sparse random management, frozen before
    // training. Acting on only a fraction of days keeps cumulative stocks
    // (applied N, soil N) near the ranges a sensible policy visits; fitting
    // on dense random actions inflates those columns' scale ~10x and leaves
    // the network nearly blind to decision-sized differences.
    let mut warm_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_WARMUP));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..cfg.normalizer_episodes.max(1) as u64 {
        let mut env = make_env(WARMUP_EPISODE_BASE + i)?;
        let mut obs = env.reset();
        rows.push(obs.as_slice().to_vec());
        while !env.is_done() {
            let idx = if warm_rng.random::<f64>() < WARMUP_ACT_PROB {
                ActionIndex::new(warm_rng.random_range(0..NUM_ACTIONS))?
            } else {
                ActionIndex::new(0)?
            };
            obs = env.step(decode_action(idx))?.observation;
            rows.push(obs.as_slice().to_vec());
        }
    }
    let normalizer = Normalizer::fit(&rows)?;
    drop(rows);

    let params = initial_q_params(cfg)?;
    let mut q = QFunction::new(params, normalizer)?;
    let mut target = sync_target(&q.params);
    let mut adam = AdamState::new(&q.params, cfg.learning_rate);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut behavior_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_BEHAVIOR));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SAMPLING));

    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut grad_steps: u64 = 0;
    let mut env_steps: u64 = 0;

    for episode in 0..cfg.episodes {
        let epsilon = cfg.epsilon_at(episode);
        let mut env = make_env(episode as u64)?;
        let mut obs = env.reset();
        let mut ep_return = 0.0;

        while !env.is_done() {
            let action = select_action(&q, &obs, epsilon, &mut behavior_rng)?;
            let step = env.step(decode_action(action))?;
            let r = daily_reward(
                step.harvest_yield,
                step.n_applied,
                step.water_applied,
                step.n_leached,
                &reward_cfg,
            )?;
            ep_return += r;
            buffer.push(Transition {
                obs,
                action,
                reward: cfg.reward_scale * r,
                next_obs: step.observation.clone(),
                done: step.done,
            });
            obs = step.observation;
            env_steps += 1;

            if buffer.len() >= cfg.batch_size && env_steps % cfg.update_every as u64 == 0 {
                let target_q = QFunction::new(target.clone(), q.normalizer.clone())?;
                let batch = buffer.sample(cfg.batch_size, &mut sample_rng)?;
                let y = td_targets(&batch, &target_q, cfg.gamma)?;

                let mut x = Array2::zeros((batch.len(), FULL_OBS_LEN));
                for (mut row, t) in x.rows_mut().into_iter().zip(&batch) {
                    for (slot, &v) in row.iter_mut().zip(t.obs.as_slice()) {
                        *slot = v;
                    }
                }
                let x = q.normalizer.normalize_batch(&x)?;
                // Masked regression: every non-taken action regresses onto
                // the current output and contributes zero error.
                let cols: Vec<usize> = batch.iter().map(|t| t.action.value()).collect();
                let (_loss, grads) = q.params.masked_loss_and_grad(&x, &cols, &y)?;
                adam.update(&mut q.params, &grads)?;
                grad_steps += 1;
                if grad_steps % cfg.target_sync_interval == 0 {
                    target = sync_target(&q.params);
                }
            }
        }
        curve.push(EpisodePoint {
            episode,
            ret: ep_return,
            epsilon,
        });
    }

    Ok(TrainOutput {
        q,
        curve,
        gradient_steps: grad_steps,
    })
}

/// The trained Q-network acting greedily; full-observation by construction.
pub struct GreedyPolicy {
    q: QFunction,
}

impl GreedyPolicy {
    pub fn new(q: QFunction) -> Self {
        GreedyPolicy { q }
    }

    /// Wraps a loaded checkpoint, rejecting anything that is not a Q-network.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Ok(GreedyPolicy {
            q: QFunction::new(ckpt.params, ckpt.normalizer)?,
        })
    }

    pub fn q(&self) -> &QFunction {
        &self.q
    }
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "dqn-greedy"
    }

    fn obs_kind(&self) -> ObsKind {
        ObsKind::Full
    }

    fn begin_episode(&mut self, _episode_seed: u64) {}

    fn act(&mut self, obs: &FullObservation) -> ActionAmounts {
        decode_action(self.q.greedy_action(obs).expect("validated Q-network"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SimConfig;
    use crate::weather::{generate_synthetic, ClimateParams};

    fn obs_of(fill: f64) -> FullObservation {
        FullObservation([fill; FULL_OBS_LEN])
    }

    fn transition(r: f64, done: bool) -> Transition {
        Transition {
            obs: obs_of(0.0),
            action: ActionIndex::new(0).unwrap(),
            reward: r,
            next_obs: obs_of(0.0),
            done,
        }
    }

    /// A Q-function whose 25 outputs are exactly the given constants.
    fn constant_q(values: [f64; NUM_ACTIONS]) -> QFunction {
        let mut params =
            MlpParams::init(&[FULL_OBS_LEN, NUM_ACTIONS], HeadKind::Linear, 0).unwrap();
        params.weights[0].fill(0.0);
        for (i, &v) in values.iter().enumerate() {
            params.biases[0][i] = v;
        }
        QFunction::new(params, Normalizer::identity(FULL_OBS_LEN)).unwrap()
    }

    #[test]
    fn greedy_selection_is_argmax() {
        let mut values = [0.0; NUM_ACTIONS];
        values[13] = 3.5;
        values[4] = 2.0;
        let q = constant_q(values);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = select_action(&q, &obs_of(1.0), 0.0, &mut rng).unwrap();
        assert_eq!(a.value(), 13);
        // Matches a by-hand argmax of the forward pass.
        let qs = q.q_values(&obs_of(1.0)).unwrap();
        let by_hand = qs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(by_hand, 13);
    }

    #[test]
    fn greedy_ties_break_to_lowest_index() {
        let mut values = [0.0; NUM_ACTIONS];
        values[6] = 1.0;
        values[17] = 1.0;
        let q = constant_q(values);
        assert_eq!(q.greedy_action(&obs_of(0.5)).unwrap().value(), 6);
        let all_equal = constant_q([2.0; NUM_ACTIONS]);
        assert_eq!(all_equal.greedy_action(&obs_of(0.5)).unwrap().value(), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let q = constant_q([0.0; NUM_ACTIONS]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; NUM_ACTIONS];
        for _ in 0..n {
            let a = select_action(&q, &obs_of(0.0), 1.0, &mut rng).unwrap();
            counts[a.value()] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.04).abs() < 0.005, "action {i} frequency {freq}");
        }
    }

    #[test]
    fn epsilon_outside_range_rejected() {
        let q = constant_q([0.0; NUM_ACTIONS]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(select_action(&q, &obs_of(0.0), 1.2, &mut rng).is_err());
    }

    #[test]
    fn replay_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        buf.push(transition(1.0, false));
        buf.push(transition(2.0, false));
        buf.push(transition(3.0, false));
        let held: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(buf.len(), 2);
        assert!(held.contains(&2.0) && held.contains(&3.0), "{held:?}");
        assert!(!held.contains(&1.0));
    }

    #[test]
    fn replay_sample_size_and_underfill() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        for i in 0..5 {
            buf.push(transition(i as f64, false));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(buf.sample(5, &mut rng).unwrap().len(), 5);
        assert!(matches!(buf.sample(6, &mut rng), Err(Error::State(_))));
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn replay_sampling_is_uniform() {
        // Chi-squared over 1e5 draws from a 10-item buffer; critical value
        // for 9 degrees of freedom at the 1% level is 21.67.
        let mut buf = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            buf.push(transition(i as f64, false));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n / 10 {
            for t in buf.sample(10, &mut rng).unwrap() {
                counts[t.reward as usize] += 1;
            }
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 21.67, "chi-squared {chi2}");
    }

    #[test]
    fn td_targets_examples() {
        let q2 = {
            let mut v = [0.0; NUM_ACTIONS];
            v[3] = 2.0;
            v[9] = -1.0;
            constant_q(v)
        };
        let done = transition(5.0, true);
        let live = transition(1.0, false);
        let batch = [&done, &live];
        let y = td_targets(&batch, &q2, 0.99).unwrap();
        assert_eq!(y[0], 5.0, "terminal target is the reward");
        assert!((y[1] - 2.98).abs() < 1e-12, "1 + 0.99 * 2 = 2.98, got {}", y[1]);

        let zero_net = constant_q([0.0; NUM_ACTIONS]);
        let y = td_targets(&batch, &zero_net, 0.99).unwrap();
        assert_eq!(y, vec![5.0, 1.0], "zero target net leaves bare rewards");
        assert!(td_targets(&[], &zero_net, 0.99).unwrap().is_empty());
    }

    #[test]
    fn target_sync_isolates_online_updates() {
        let mut online = MlpParams::init(&[4, 8, 3], HeadKind::Linear, 2).unwrap();
        let target = sync_target(&online);
        assert_eq!(target, online);

        let mut adam = AdamState::new(&online, 1e-2);
        let x = Array2::from_shape_fn((4, 4), |(i, j)| (i + j) as f64 * 0.1);
        let t = Array2::from_shape_fn((4, 3), |(i, j)| (i * j) as f64 * 0.1);
        let before = target.clone();
        let (_, grads) = online.loss_and_grad(&x, &t).unwrap();
        adam.update(&mut online, &grads).unwrap();
        assert_eq!(target, before, "target changed with the online net");
        assert_ne!(online, target);
    }

    #[test]
    fn td_targets_unchanged_by_online_update() {
        let mut values = [0.0; NUM_ACTIONS];
        values[1] = 4.0;
        let target = constant_q(values);
        let batch_owner = [transition(0.5, false), transition(-0.25, false)];
        let batch: Vec<&Transition> = batch_owner.iter().collect();
        let before = td_targets(&batch, &target, 0.9).unwrap();

        // An online network learns elsewhere; the target stays frozen.
        let mut online = target.params.clone();
        let mut adam = AdamState::new(&online, 1e-2);
        let x = Array2::ones((2, FULL_OBS_LEN));
        let t = Array2::zeros((2, NUM_ACTIONS));
        let (_, grads) = online.loss_and_grad(&x, &t).unwrap();
        adam.update(&mut online, &grads).unwrap();

        let after = td_targets(&batch, &target, 0.9).unwrap();
        assert_eq!(before, after);
    }

    fn tiny_config(episodes: usize) -> DqnConfig {
        DqnConfig {
            episodes,
            batch_size: 32,
            replay_capacity: 4096,
            hidden_sizes: vec![16, 16],
            normalizer_episodes: 3,
            target_sync_interval: 100,
            seed: 42,
            ..DqnConfig::default()
        }
    }

    fn make_env_factory() -> impl FnMut(u64) -> Result<CropEnv> {
        move |episode| {
            let weather = generate_synthetic(
                derive_seed(900, episode),
                160,
                &ClimateParams::default(),
            )?;
            CropEnv::new(SimConfig::default(), weather)
        }
    }

    #[test]
    fn zero_episodes_returns_untouched_init() {
        let cfg = tiny_config(0);
        let out = train(make_env_factory(), &cfg).unwrap();
        assert!(out.curve.is_empty());
        assert_eq!(out.gradient_steps, 0);
        // Parameters equal a fresh init with the same derived seed.
        let fresh = initial_q_params(&cfg).unwrap();
        assert_eq!(out.q.params, fresh);
    }

    #[test]
    fn initial_params_give_identical_action_values() {
        let cfg = tiny_config(0);
        let params = initial_q_params(&cfg).unwrap();
        let normalizer = Normalizer::fit(&[vec![0.0; FULL_OBS_LEN], vec![1.0; FULL_OBS_LEN]])
            .unwrap();
        let q = QFunction::new(params, normalizer).unwrap();
        let obs = FullObservation([0.3; FULL_OBS_LEN]);
        let values = q.q_values(&obs).unwrap();
        assert!(values.iter().all(|&v| v == 0.0));
        // With every head equal, the tie rule selects the first action.
        assert_eq!(q.greedy_action(&obs).unwrap().value(), 0);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let cfg = tiny_config(4);
        let a = train(make_env_factory(), &cfg).unwrap();
        let b = train(make_env_factory(), &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.q.params, b.q.params);
        assert_eq!(a.gradient_steps, b.gradient_steps);
        assert!(a.gradient_steps > 0, "short run should still take gradient steps");
        assert!(a.curve.iter().all(|p| p.ret.is_finite()));
    }

    #[test]
    fn epsilon_schedule_anneals_linearly() {
        let cfg = DqnConfig {
            episodes: 100,
            ..DqnConfig::default()
        };
        assert_eq!(cfg.epsilon_at(0), 1.0);
        let mid = cfg.epsilon_at(30);
        assert!((mid - 0.525).abs() < 1e-12, "half decay: {mid}");
        assert_eq!(cfg.epsilon_at(60), 0.05);
        assert_eq!(cfg.epsilon_at(99), 0.05);
    }

    #[test]
    fn greedy_policy_decodes_favored_action() {
        let mut values = [0.0; NUM_ACTIONS];
        values[7] = 9.0;
        let mut p = GreedyPolicy::new(constant_q(values));
        p.begin_episode(0);
        let a = p.act(&obs_of(0.3));
        assert_eq!(a, ActionAmounts::new(40.0, 12.0).unwrap());
        assert_eq!(p.act(&obs_of(0.3)), a, "greedy is deterministic");
        assert_eq!(p.obs_kind(), ObsKind::Full);
    }

    #[test]
    fn greedy_policy_rejects_wrong_head() {
        let ckpt = Checkpoint {
            params: MlpParams::init(
                &[12, 8, 2],
                HeadKind::Squashed {
                    scales: vec![160.0, 24.0],
                },
                3,
            )
            .unwrap(),
            normalizer: Normalizer::identity(12),
            metadata: vec![],
        };
        assert!(matches!(
            GreedyPolicy::from_checkpoint(ckpt),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = DqnConfig::default();
        cfg.gamma = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = DqnConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = DqnConfig::default();
        cfg.batch_size = 200_000;
        assert!(cfg.validate().is_err());
        let mut cfg = DqnConfig::default();
        cfg.reward_preset = "RF9".into();
        assert!(cfg.validate().is_err());
        let mut cfg = DqnConfig::default();
        cfg.update_every = 0;
        assert!(cfg.validate().is_err());
    }
}
