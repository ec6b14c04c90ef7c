//! Model-based and episodic bootstrap ensembles.
//!
//! The model-based bootstrap simulates `K` fresh episodes of length `T` from
//! the repaired estimate `(M_hat, pi_hat_b)`, starting each one at the observed
//! start state of the corresponding source episode, and re-estimates the
//! kernel. The episodic bootstrap resamples whole source episodes with
//! replacement.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmc::{EpisodicDataset, Simulator};
use crate::counting::{count, estimate, repair_for_simulation, CountStatistics, EstimatedModel};
use crate::error::{Error, Result};
use crate::rng::{Purpose, SeedSpec, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMethod {
    ModelBased,
    Episodic,
}

impl BootstrapMethod {
    fn purpose(self) -> Purpose {
        match self {
            BootstrapMethod::ModelBased => Purpose::ModelBased,
            BootstrapMethod::Episodic => Purpose::Episodic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seeds: SeedSpec,
    pub method: BootstrapMethod,
    /// Monte Carlo repetition index; part of every stream key.
    pub rep: u64,
    /// 1 runs serially, 0 uses the ambient rayon pool, k > 1 builds a k-thread pool.
    pub threads: usize,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seeds: SeedSpec, method: BootstrapMethod) -> Self {
        Self { replicates, seeds, method, rep: 0, threads: 1 }
    }

    pub fn streams(&self, replicate: usize) -> ReplicateStreams {
        ReplicateStreams {
            seeds: self.seeds,
            purpose: self.method.purpose(),
            rep: self.rep,
            replicate: replicate as u64,
        }
    }
}

/// Random streams owned by one bootstrap replicate, one per episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateStreams {
    pub seeds: SeedSpec,
    pub purpose: Purpose,
    pub rep: u64,
    pub replicate: u64,
}

impl ReplicateStreams {
    pub fn episode(&self, k: usize) -> StreamRng {
        self.seeds.stream(self.purpose, self.rep, self.replicate, k as u64)
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    pub replicates: Vec<EstimatedModel>,
    pub config: BootstrapConfig,
}

impl BootstrapEnsemble {
    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    pub fn method(&self) -> BootstrapMethod {
        self.config.method
    }

    /// Writes each replicate's transition counts as one JSON array per line.
    pub fn write_counts_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for model in &self.replicates {
            serde_json::to_writer(&mut out, model.counts().transition_counts())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_same_space(source: &EpisodicDataset, model: &EstimatedModel) -> Result<()> {
    if source.space() != model.space() {
        return Err(Error::Shape("dataset and model spaces differ".into()));
    }
    Ok(())
}

/// Simulates the replicate dataset itself. Mostly useful for inspection;
/// [`model_based_replicate`] counts on the fly instead.
pub fn simulate_replicate_dataset(
    source: &EpisodicDataset,
    model: &EstimatedModel,
    streams: &ReplicateStreams,
) -> Result<EpisodicDataset> {
    check_same_space(source, model)?;
    let (kernel, policy) = repair_for_simulation(model);
    let sim = Simulator::new(&kernel, &policy)?;
    let len = source.episode_len();
    let episodes = source
        .start_states()
        .enumerate()
        .map(|(k, start)| {
            let mut rng = streams.episode(k);
            let mut episode = Vec::with_capacity(len);
            sim.run(start, len, &mut rng, |tr| episode.push(tr));
            episode
        })
        .collect();
    EpisodicDataset::new(source.space(), episodes)
}

fn simulate_counts(sim: &Simulator, starts: &[usize], len: usize, streams: &ReplicateStreams) -> CountStatistics {
    let mut counts = CountStatistics::zeros(sim.space());
    for (k, &start) in starts.iter().enumerate() {
        let mut rng = streams.episode(k);
        sim.run(start, len, &mut rng, |tr| counts.record(tr));
    }
    counts
}

/// One model-based bootstrap replicate: `estimate(count(D*))`, where `D*` has
/// the same `(K, T)` and start states as `source`.
pub fn model_based_replicate(
    source: &EpisodicDataset,
    model: &EstimatedModel,
    streams: &ReplicateStreams,
) -> Result<EstimatedModel> {
    check_same_space(source, model)?;
    let (kernel, policy) = repair_for_simulation(model);
    let sim = Simulator::new(&kernel, &policy)?;
    let starts: Vec<usize> = source.start_states().collect();
    Ok(estimate(&simulate_counts(&sim, &starts, source.episode_len(), streams)))
}

/// Indices of `k` episodes drawn uniformly with replacement.
pub fn resample_episode_indices<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..k)).collect()
}

fn episodic_counts(per_episode: &[CountStatistics], streams: &ReplicateStreams) -> CountStatistics {
    let k = per_episode.len();
    let mut rng = streams.episode(0);
    let mut multiplicity = vec![0u64; k];
    for i in resample_episode_indices(k, &mut rng) {
        multiplicity[i] += 1;
    }
    let mut counts = CountStatistics::zeros(per_episode[0].space());
    for (c, &m) in per_episode.iter().zip(&multiplicity) {
        if m > 0 {
            counts.add_scaled(c, m);
        }
    }
    counts
}

fn per_episode_counts(source: &EpisodicDataset) -> Vec<CountStatistics> {
    source
        .episodes()
        .iter()
        .map(|ep| {
            let mut c = CountStatistics::zeros(source.space());
            ep.iter().for_each(|&tr| c.record(tr));
            c
        })
        .collect()
}

/// One episodic bootstrap replicate: `K` whole episodes resampled with
/// replacement, then re-estimated.
pub fn episodic_replicate(source: &EpisodicDataset, streams: &ReplicateStreams) -> EstimatedModel {
    estimate(&episodic_counts(&per_episode_counts(source), streams))
}

/// Runs `f(j)` for `j in 0..count` honouring the thread setting, returning
/// results in index order.
pub(crate) fn map_indexed<T, F>(count: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match threads {
        1 => Ok((0..count).map(f).collect()),
        0 => Ok((0..count).into_par_iter().map(f).collect()),
        k => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
        }
    }
}

/// `B` independent replicates on per-replicate streams. The result does not
/// depend on `config.threads`.
pub fn run_ensemble(
    source: &EpisodicDataset,
    model: &EstimatedModel,
    config: &BootstrapConfig,
) -> Result<BootstrapEnsemble> {
    if config.replicates == 0 {
        return Err(Error::InvalidArgument("need at least one bootstrap replicate".into()));
    }
    check_same_space(source, model)?;
    let replicates = match config.method {
        BootstrapMethod::ModelBased => {
            let (kernel, policy) = repair_for_simulation(model);
            let sim = Simulator::new(&kernel, &policy)?;
            let starts: Vec<usize> = source.start_states().collect();
            let len = source.episode_len();
            map_indexed(config.replicates, config.threads, |j| {
                estimate(&simulate_counts(&sim, &starts, len, &config.streams(j)))
            })?
        }
        BootstrapMethod::Episodic => {
            let per_episode = per_episode_counts(source);
            map_indexed(config.replicates, config.threads, |j| {
                estimate(&episodic_counts(&per_episode, &config.streams(j)))
            })?
        }
    };
    Ok(BootstrapEnsemble { replicates, config: *config })
}

/// Convenience: counts and estimate of a dataset in one call.
pub fn fit(dataset: &EpisodicDataset) -> EstimatedModel {
    estimate(&count(dataset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmc::{StateActionSpace, Transition as Tr};

    fn forced_cycle_dataset() -> EpisodicDataset {
        // 0 -> 1 -> 2 -> 0 under action 0 only.
        let space = StateActionSpace::new(3, 1).unwrap();
        EpisodicDataset::new(
            space,
            vec![
                vec![Tr::new(0, 0, 1), Tr::new(1, 0, 2), Tr::new(2, 0, 0)],
                vec![Tr::new(1, 0, 2), Tr::new(2, 0, 0), Tr::new(0, 0, 1)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_model_reproduces_itself() {
        let ds = forced_cycle_dataset();
        let model = fit(&ds);
        let cfg = BootstrapConfig::new(1, SeedSpec::new(5), BootstrapMethod::ModelBased);
        let rep = model_based_replicate(&ds, &model, &cfg.streams(0)).unwrap();
        assert_eq!(rep.counts(), model.counts());
        for s in 0..3 {
            assert_eq!(rep.kernel_row(s, 0), model.kernel_row(s, 0));
        }
    }

    #[test]
    fn single_transition_starts_at_observed_state() {
        let space = StateActionSpace::new(6, 2).unwrap();
        let ds = EpisodicDataset::new(space, vec![vec![Tr::new(4, 1, 5)]]).unwrap();
        let model = fit(&ds);
        let cfg = BootstrapConfig::new(1, SeedSpec::new(1), BootstrapMethod::ModelBased);
        for j in 0..20 {
            let sim = simulate_replicate_dataset(&ds, &model, &cfg.streams(j)).unwrap();
            assert_eq!(sim.len(), 1);
            assert_eq!(sim.episodes()[0][0].state, 4);
        }
    }

    #[test]
    fn on_the_fly_counts_match_simulated_dataset() {
        let ds = forced_cycle_dataset();
        let space = StateActionSpace::new(3, 2).unwrap();
        // a noisier model over a 2-action space
        let counts =
            CountStatistics::from_transition_counts(space, vec![1, 2, 3, 0, 1, 1, 2, 2, 0, 4, 0, 1, 1, 1, 1, 0, 3, 0])
                .unwrap();
        let model = estimate(&counts);
        let ds = EpisodicDataset::new(space, ds.episodes().to_vec()).unwrap();
        let cfg = BootstrapConfig::new(1, SeedSpec::new(9), BootstrapMethod::ModelBased);
        let streams = cfg.streams(3);
        let direct = model_based_replicate(&ds, &model, &streams).unwrap();
        let via_dataset = fit(&simulate_replicate_dataset(&ds, &model, &streams).unwrap());
        assert_eq!(direct, via_dataset);
    }

    #[test]
    fn episodic_single_episode_is_constant() {
        let ds = EpisodicDataset::new(
            StateActionSpace::new(3, 1).unwrap(),
            vec![forced_cycle_dataset().episodes()[0].clone()],
        )
        .unwrap();
        let model = fit(&ds);
        let cfg = BootstrapConfig::new(25, SeedSpec::new(3), BootstrapMethod::Episodic);
        let ens = run_ensemble(&ds, &model, &cfg).unwrap();
        assert!(ens.replicates.iter().all(|r| *r == model));
    }

    #[test]
    fn episodic_identical_episodes_is_constant() {
        let ep = forced_cycle_dataset().episodes()[1].clone();
        let ds = EpisodicDataset::new(StateActionSpace::new(3, 1).unwrap(), vec![ep.clone(), ep.clone(), ep]).unwrap();
        let model = fit(&ds);
        let cfg = BootstrapConfig::new(10, SeedSpec::new(3), BootstrapMethod::Episodic);
        for j in 0..10 {
            assert_eq!(episodic_replicate(&ds, &cfg.streams(j)), model);
        }
    }

    #[test]
    fn two_episode_resampling_multinomial() {
        let seeds = SeedSpec::new(11);
        let draws = 100_000;
        let mut tally = [0usize; 3];
        for j in 0..draws {
            let mut rng = seeds.stream(Purpose::Episodic, 0, j, 0);
            let idx = resample_episode_indices(2, &mut rng);
            tally[idx.iter().filter(|&&i| i == 1).count()] += 1;
        }
        let freq: Vec<f64> = tally.iter().map(|&c| c as f64 / draws as f64).collect();
        for (f, p) in freq.iter().zip([0.25, 0.5, 0.25]) {
            assert!((f - p).abs() < 0.01, "{freq:?}");
        }
    }

    #[test]
    fn ensemble_of_one_matches_single_replicate() {
        let ds = forced_cycle_dataset();
        let model = fit(&ds);
        for method in [BootstrapMethod::ModelBased, BootstrapMethod::Episodic] {
            let cfg = BootstrapConfig::new(1, SeedSpec::new(21), method);
            let ens = run_ensemble(&ds, &model, &cfg).unwrap();
            let single = match method {
                BootstrapMethod::ModelBased => model_based_replicate(&ds, &model, &cfg.streams(0)).unwrap(),
                BootstrapMethod::Episodic => episodic_replicate(&ds, &cfg.streams(0)),
            };
            assert_eq!(ens.replicates, vec![single]);
        }
    }

    #[test]
    fn zero_replicates_rejected() {
        let ds = forced_cycle_dataset();
        let cfg = BootstrapConfig::new(0, SeedSpec::new(1), BootstrapMethod::ModelBased);
        assert!(run_ensemble(&ds, &fit(&ds), &cfg).is_err());
    }
}
