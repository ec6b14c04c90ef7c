//! Monte Carlo coverage studies.
//!
//! For every grid point `(n, T)` and every Monte Carlo rep, a dataset of
//! `K = n/T` episodes is drawn from the true MDP under the behaviour policy,
//! confidence intervals are formed for each requested target entry with each
//! requested method, and coverage of the true value is tallied.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bellman::{solve_ope, solve_opr_from, OprOptions, OptimalSolution, QFunction, ValueFunction};
use crate::bootstrap::{fit, map_indexed, run_ensemble, BootstrapConfig, BootstrapMethod};
use crate::cmc::{simulate_dataset, EpisodicDataset, Policy, StateActionSpace, TransitionKernel};
use crate::counting::occupation_estimate;
use crate::covariance::{
    clt_interval, lambda_bar, sigma_ope, sigma_opr_at, FloorRule, TargetCovariance, DEFAULT_GAP_THRESHOLD,
};
use crate::env::{resolve_mdp, MdpInstance};
use crate::error::{Error, Result};
use crate::intervals::{covers, percentile_ci, pivot_ci, ConfidenceInterval};
use crate::rng::SeedSpec;

/// A policy named in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    Uniform,
    /// `pi(1|s) = 0.8`.
    MostlyRight,
    /// `pi(1|s) = 0.2`.
    MostlyLeft,
    /// The optimal policy of the (estimated) MDP; selects OPR targets.
    Optimal,
    /// Two-action policy with `pi(1|s) = p`.
    ActionOneProb(f64),
    /// Explicit `S x A` table.
    Table(Vec<Vec<f64>>),
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Uniform => "uniform".into(),
            PolicySpec::MostlyRight => "mostly_right".into(),
            PolicySpec::MostlyLeft => "mostly_left".into(),
            PolicySpec::Optimal => "optimal".into(),
            PolicySpec::ActionOneProb(p) => format!("action_one_prob={p}"),
            PolicySpec::Table(_) => "table".into(),
        }
    }

    /// Resolves a fixed policy; `Optimal` has no fixed form and returns `None`.
    pub fn resolve(&self, space: StateActionSpace) -> Result<Option<Policy>> {
        let policy = match self {
            PolicySpec::Uniform => Policy::uniform(space),
            PolicySpec::MostlyRight => Policy::action_one_prob(space, 0.8)?,
            PolicySpec::MostlyLeft => Policy::action_one_prob(space, 0.2)?,
            PolicySpec::Optimal => return Ok(None),
            PolicySpec::ActionOneProb(p) => Policy::action_one_prob(space, *p)?,
            PolicySpec::Table(rows) => {
                let policy = Policy::from_rows(rows)?;
                if policy.space() != space {
                    return Err(Error::Config(format!(
                        "policy table is {}x{}, MDP is {}x{}",
                        policy.space().states,
                        policy.space().actions,
                        space.states,
                        space.actions
                    )));
                }
                policy
            }
        };
        Ok(Some(policy))
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PolicySpec::Uniform),
            "mostly_right" | "mostly-right" => Ok(PolicySpec::MostlyRight),
            "mostly_left" | "mostly-left" => Ok(PolicySpec::MostlyLeft),
            "optimal" => Ok(PolicySpec::Optimal),
            other => other
                .strip_prefix("action_one_prob=")
                .and_then(|p| p.parse().ok())
                .map(PolicySpec::ActionOneProb)
                .ok_or_else(|| Error::Config(format!("unknown policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ModelBasedPercentile,
    ModelBasedPivot,
    EpisodicPercentile,
    EpisodicPivot,
    Clt,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ModelBasedPivot,
        Method::ModelBasedPercentile,
        Method::EpisodicPivot,
        Method::EpisodicPercentile,
        Method::Clt,
    ];

    pub fn family(self) -> &'static str {
        match self {
            Method::ModelBasedPercentile | Method::ModelBasedPivot => "model_based",
            Method::EpisodicPercentile | Method::EpisodicPivot => "episodic",
            Method::Clt => "plugin",
        }
    }

    pub fn ci_type(self) -> &'static str {
        match self {
            Method::ModelBasedPercentile | Method::EpisodicPercentile => "percentile",
            Method::ModelBasedPivot | Method::EpisodicPivot => "pivot",
            Method::Clt => "clt",
        }
    }

    fn bootstrap(self) -> Option<BootstrapMethod> {
        match self {
            Method::ModelBasedPercentile | Method::ModelBasedPivot => Some(BootstrapMethod::ModelBased),
            Method::EpisodicPercentile | Method::EpisodicPivot => Some(BootstrapMethod::Episodic),
            Method::Clt => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown method '{s}'")))
    }
}

/// A reported coordinate: `V(s)` or `Q(s,a)`. Printed and parsed with
/// 1-based state labels and 0-based actions, e.g. `Q(1,0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Entry {
    V(usize),
    Q(usize, usize),
}

impl Entry {
    /// The nine coordinates reported in the RiverSwim tables.
    pub fn riverswim_defaults() -> Vec<Entry> {
        let mut v = vec![Entry::Q(0, 0), Entry::Q(2, 1), Entry::Q(5, 0)];
        v.extend((0..6).map(Entry::V));
        v
    }

    fn check(&self, space: StateActionSpace) -> Result<()> {
        let ok = match *self {
            Entry::V(s) => s < space.states,
            Entry::Q(s, a) => s < space.states && a < space.actions,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("entry {self} out of range for S={}, A={}", space.states, space.actions)))
        }
    }

    fn value(&self, v: &ValueFunction, q: &QFunction) -> f64 {
        match *self {
            Entry::V(s) => v.get(s),
            Entry::Q(s, a) => q.get(s, a),
        }
    }

    fn variance(&self, cov: &TargetCovariance) -> f64 {
        match *self {
            Entry::V(s) => cov.var_v(s),
            Entry::Q(s, a) => cov.var_q(s, a),
        }
    }

    fn is_v(&self) -> bool {
        matches!(self, Entry::V(_))
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entry::V(s) => write!(f, "V({})", s + 1),
            Entry::Q(s, a) => write!(f, "Q({},{})", s + 1, a),
        }
    }
}

impl From<Entry> for String {
    fn from(e: Entry) -> Self {
        e.to_string()
    }
}

impl TryFrom<String> for Entry {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Entry {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse entry '{text}', expected V(s) or Q(s,a)"));
        let t = text.trim();
        let inner = t
            .get(2..t.len().saturating_sub(1))
            .filter(|_| t.len() > 3 && t.as_bytes()[1] == b'(' && t.ends_with(')'))
            .ok_or_else(bad)?;
        let nums: Vec<usize> = inner
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        match (&t[..1], nums.as_slice()) {
            ("V", [s]) if *s >= 1 => Ok(Entry::V(s - 1)),
            ("Q", [s, a]) if *s >= 1 => Ok(Entry::Q(s - 1, *a)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    #[serde(rename = "T")]
    pub episode_len: usize,
}

impl GridPoint {
    pub fn new(n: usize, episode_len: usize) -> Self {
        Self { n, episode_len }
    }

    pub fn episodes(&self) -> usize {
        self.n / self.episode_len
    }
}

impl FromStr for GridPoint {
    type Err = Error;

    /// `n:T`, e.g. `1000:50`.
    fn from_str(s: &str) -> Result<Self> {
        let (n, t) = s.split_once(':').ok_or_else(|| Error::Config(format!("grid point '{s}' is not n:T")))?;
        let parse = |x: &str| x.trim().parse().map_err(|_| Error::Config(format!("grid point '{s}' is not n:T")));
        Ok(GridPoint::new(parse(n)?, parse(t)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in name (`riverswim`) or path to a JSON MDP file.
    pub mdp: String,
    pub behavior: PolicySpec,
    pub targets: Vec<PolicySpec>,
    pub grid: Vec<GridPoint>,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub n_reps: usize,
    /// Nominal coverage levels `1 - alpha`.
    pub levels: Vec<f64>,
    pub methods: Vec<Method>,
    pub entries: Vec<Entry>,
    pub seed: u64,
    /// Worker threads across Monte Carlo reps (1 = serial).
    pub threads: usize,
    /// 0-based start state of every data-generating episode.
    pub start_state: usize,
    pub opr_tol: f64,
    pub opr_max_iter: usize,
    pub gap_threshold: f64,
}

impl Default for ExperimentConfig {
    /// Uniform-target OPE at `T = 50` over the four RiverSwim sample sizes.
    fn default() -> Self {
        Self {
            mdp: "riverswim".into(),
            behavior: PolicySpec::ActionOneProb(0.8),
            targets: vec![PolicySpec::Uniform],
            grid: [50, 100, 500, 1000].into_iter().map(|n| GridPoint::new(n, 50)).collect(),
            replicates: 1000,
            n_reps: 1000,
            levels: vec![0.95],
            methods: Method::ALL.to_vec(),
            entries: Entry::riverswim_defaults(),
            seed: 20240601,
            threads: 1,
            start_state: 0,
            opr_tol: OprOptions::default().tol,
            opr_max_iter: OprOptions::default().max_iter,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn opr_options(&self) -> OprOptions {
        OprOptions { tol: self.opr_tol, max_iter: self.opr_max_iter }
    }

    /// Checks the config against the resolved MDP.
    pub fn validate(&self, space: StateActionSpace) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.grid.is_empty() {
            return fail("grid is empty".into());
        }
        for g in &self.grid {
            if g.n == 0 || g.episode_len == 0 || g.n % g.episode_len != 0 {
                return fail(format!("grid point n={} T={} needs n divisible by T", g.n, g.episode_len));
            }
        }
        if self.replicates == 0 || self.n_reps == 0 {
            return fail("B and n_reps must be >= 1".into());
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return fail(format!("levels must lie in (0, 1), got {:?}", self.levels));
        }
        if self.methods.is_empty() || self.targets.is_empty() || self.entries.is_empty() {
            return fail("methods, targets and entries must be non-empty".into());
        }
        if self.start_state >= space.states {
            return fail(format!("start_state {} out of range", self.start_state));
        }
        if !(self.opr_tol > 0.0) || self.opr_max_iter == 0 {
            return fail("opr_tol and opr_max_iter must be positive".into());
        }
        if self.behavior == PolicySpec::Optimal {
            return fail("behaviour policy cannot be 'optimal'".into());
        }
        if self.targets.iter().filter(|t| **t == PolicySpec::Optimal).count() > 1 {
            return fail("'optimal' listed more than once in targets".into());
        }
        for e in &self.entries {
            e.check(space)?;
        }
        self.behavior.resolve(space).map_err(|e| Error::Config(format!("behaviour policy: {e}")))?;
        for t in &self.targets {
            t.resolve(space).map_err(|e| Error::Config(format!("target {}: {e}", t.label())))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum TargetKind {
    Ope(Policy),
    Opr,
}

#[derive(Debug, Clone)]
struct Target {
    label: String,
    kind: TargetKind,
}

impl Target {
    fn column(&self, entry: &Entry) -> String {
        let vq = if entry.is_v() { "v" } else { "q" };
        match self.kind {
            TargetKind::Ope(_) => format!("ope_{vq}:{}", self.label),
            TargetKind::Opr => format!("opr_{vq}"),
        }
    }
}

/// Everything needed to analyse one dataset.
#[derive(Debug, Clone)]
pub struct Study {
    mdp: MdpInstance,
    targets: Vec<Target>,
    methods: Vec<Method>,
    levels: Vec<f64>,
    entries: Vec<Entry>,
    replicates: usize,
    seeds: SeedSpec,
    opr: OprOptions,
    gap_threshold: f64,
}

/// Per-target solution of the Bellman equations at one kernel.
#[derive(Debug, Clone)]
enum Solved {
    Ope(ValueFunction, QFunction),
    Opr(OptimalSolution),
}

impl Solved {
    fn value(&self, entry: &Entry) -> f64 {
        match self {
            Solved::Ope(v, q) => entry.value(v, q),
            Solved::Opr(sol) => entry.value(&sol.v_star, &sol.q_star),
        }
    }
}

/// Intervals for one dataset, laid out `[target][level][method][entry]`.
#[derive(Debug, Clone)]
pub struct DatasetAnalysis {
    pub intervals: Vec<ConfidenceInterval>,
    /// Plug-in point estimates, `[target][entry]`.
    pub estimates: Vec<f64>,
    /// The plug-in kernel had undefined rows.
    pub repaired: bool,
    /// Replicates (over all bootstrap methods) whose kernel needed repair.
    pub repaired_replicates: usize,
    pub degenerate_opr: bool,
}

impl Study {
    pub fn new(
        mdp: MdpInstance,
        targets: &[PolicySpec],
        methods: &[Method],
        levels: &[f64],
        entries: &[Entry],
        replicates: usize,
        seeds: SeedSpec,
        opr: OprOptions,
        gap_threshold: f64,
    ) -> Result<Self> {
        let space = mdp.space();
        let targets = targets
            .iter()
            .map(|spec| {
                Ok(Target {
                    label: spec.label(),
                    kind: match spec.resolve(space)? {
                        Some(p) => TargetKind::Ope(p),
                        None => TargetKind::Opr,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mdp,
            targets,
            methods: methods.to_vec(),
            levels: levels.to_vec(),
            entries: entries.to_vec(),
            replicates,
            seeds,
            opr,
            gap_threshold,
        })
    }

    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let mdp = resolve_mdp(&config.mdp).map_err(|e| Error::Config(format!("mdp '{}': {e}", config.mdp)))?;
        config.validate(mdp.space())?;
        Self::new(
            mdp,
            &config.targets,
            &config.methods,
            &config.levels,
            &config.entries,
            config.replicates,
            SeedSpec::new(config.seed),
            config.opr_options(),
            config.gap_threshold,
        )
    }

    pub fn mdp(&self) -> &MdpInstance {
        &self.mdp
    }

    fn solve(&self, kernel: &TransitionKernel, warm: Option<&QFunction>) -> Result<Vec<Solved>> {
        let mut opr: Option<OptimalSolution> = None;
        self.targets
            .iter()
            .map(|t| match &t.kind {
                TargetKind::Ope(pi) => {
                    let (v, q) = solve_ope(kernel, pi, &self.mdp.rewards)?;
                    Ok(Solved::Ope(v, q))
                }
                TargetKind::Opr => {
                    if opr.is_none() {
                        opr = Some(solve_opr_from(kernel, &self.mdp.rewards, self.opr, warm)?);
                    }
                    Ok(Solved::Opr(opr.clone().unwrap()))
                }
            })
            .collect()
    }

    fn values(&self, solved: &[Solved]) -> Vec<f64> {
        solved.iter().flat_map(|s| self.entries.iter().map(move |e| s.value(e))).collect()
    }

    /// True target values `[target][entry]` from the true kernel.
    pub fn truth(&self) -> Result<Vec<f64>> {
        Ok(self.values(&self.solve(&self.mdp.kernel, None)?))
    }

    fn cell_labels(&self) -> Vec<(usize, f64, Method, usize)> {
        let mut cells = Vec::new();
        for ti in 0..self.targets.len() {
            for &level in &self.levels {
                for &m in &self.methods {
                    for ei in 0..self.entries.len() {
                        cells.push((ti, level, m, ei));
                    }
                }
            }
        }
        cells
    }

    /// Plug-in estimates and every requested interval for one dataset. `rep`
    /// keys the bootstrap streams.
    pub fn analyze(&self, dataset: &EpisodicDataset, rep: u64) -> Result<DatasetAnalysis> {
        let model = fit(dataset);
        let kernel_hat = model.repaired_kernel();
        let plug_in = self.solve(&kernel_hat, None)?;
        let estimates = self.values(&plug_in);
        let warm = plug_in.iter().find_map(|s| match s {
            Solved::Opr(sol) => Some(sol.q_star.clone()),
            Solved::Ope(..) => None,
        });
        let width = self.entries.len();

        // replicate values per bootstrap method: samples[method][target*width + entry][j]
        let mut samples: Vec<(BootstrapMethod, Vec<Vec<f64>>)> = Vec::new();
        let mut repaired_replicates = 0;
        for method in [BootstrapMethod::ModelBased, BootstrapMethod::Episodic] {
            if !self.methods.iter().any(|m| m.bootstrap() == Some(method)) {
                continue;
            }
            let mut cfg = BootstrapConfig::new(self.replicates, self.seeds, method);
            cfg.rep = rep;
            let ensemble = run_ensemble(dataset, &model, &cfg)?;
            let mut columns = vec![Vec::with_capacity(self.replicates); estimates.len()];
            for (j, replicate) in ensemble.replicates.iter().enumerate() {
                repaired_replicates += usize::from(replicate.needs_kernel_repair());
                let solved = self
                    .solve(&replicate.repaired_kernel(), warm.as_ref())
                    .map_err(|e| Error::Replicate { index: j, source: Box::new(e) })?;
                for (col, x) in columns.iter_mut().zip(self.values(&solved)) {
                    col.push(x);
                }
            }
            samples.push((method, columns));
        }

        let mut covariances: Vec<Option<TargetCovariance>> = vec![None; self.targets.len()];
        let mut degenerate_opr = false;
        let n = dataset.len() as u64;
        if self.methods.contains(&Method::Clt) {
            let occupation = occupation_estimate(model.counts())?;
            let lambda = lambda_bar(&kernel_hat, &occupation, FloorRule::PerSample { n })?;
            for (ti, solved) in plug_in.iter().enumerate() {
                let cov = match solved {
                    Solved::Ope(..) => match &self.targets[ti].kind {
                        TargetKind::Ope(pi) => sigma_ope(&kernel_hat, pi, &self.mdp.rewards, &lambda)?,
                        TargetKind::Opr => unreachable!(),
                    },
                    Solved::Opr(sol) => {
                        let cov = sigma_opr_at(&kernel_hat, &self.mdp.rewards, &lambda, sol, self.gap_threshold)?;
                        degenerate_opr |= cov.degeneracy.is_some();
                        cov
                    }
                };
                covariances[ti] = Some(cov);
            }
        }

        let intervals = self
            .cell_labels()
            .into_iter()
            .map(|(ti, level, method, ei)| {
                let alpha = 1.0 - level;
                let col = ti * width + ei;
                match method.bootstrap() {
                    Some(bm) => {
                        let reps = &samples.iter().find(|(m, _)| *m == bm).expect("ensemble computed").1[col];
                        if method.ci_type() == "percentile" {
                            percentile_ci(reps, alpha)
                        } else {
                            pivot_ci(reps, estimates[col], alpha)
                        }
                    }
                    None => {
                        let cov = covariances[ti].as_ref().expect("covariance computed");
                        let var = self.entries[ei].variance(cov).max(0.0);
                        clt_interval(estimates[col], var, n, alpha)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(DatasetAnalysis {
            intervals,
            estimates,
            repaired: model.needs_kernel_repair(),
            repaired_replicates,
            degenerate_opr,
        })
    }

    /// Flattened description of each interval in [`DatasetAnalysis::intervals`].
    pub fn interval_labels(&self) -> Vec<IntervalLabel> {
        self.cell_labels()
            .into_iter()
            .map(|(ti, level, method, ei)| IntervalLabel {
                method: method.family().into(),
                ci_type: method.ci_type().into(),
                target: self.targets[ti].column(&self.entries[ei]),
                entry: self.entries[ei].to_string(),
                nominal: level,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalLabel {
    pub method: String,
    pub ci_type: String,
    pub target: String,
    pub entry: String,
    pub nominal: f64,
}

/// One line of a coverage table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: String,
    pub ci_type: String,
    pub target: String,
    pub entry: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub episode_len: usize,
    #[serde(rename = "K")]
    pub episodes: usize,
    pub nominal: f64,
    pub coverage: f64,
    pub mean_width: f64,
    pub degenerate_rate: f64,
    pub repair_rate: f64,
    pub n_reps: usize,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub n: usize,
    #[serde(rename = "T")]
    pub episode_len: usize,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    /// Reps excluded from the tallies because a solve failed.
    pub failures: Vec<RepFailure>,
    /// Reps whose plug-in optimal policy had a gap below the threshold.
    pub degenerate_opr_reps: usize,
}

impl CoverageReport {
    pub fn find(&self, method: &str, ci_type: &str, entry: &str, n: usize, nominal: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| {
            r.method == method && r.ci_type == ci_type && r.entry == entry && r.n == n && r.nominal == nominal
        })
    }
}

/// Stream key of a Monte Carlo rep; distinct across grid points.
fn rep_key(grid_index: usize, rep: usize) -> u64 {
    ((grid_index as u64) << 32) | rep as u64
}

pub fn run_coverage(config: &ExperimentConfig) -> Result<CoverageReport> {
    let study = Study::from_config(config)?;
    let behavior = config.behavior.resolve(study.mdp.space())?.expect("validated as fixed");
    let truth = study.truth()?;
    let labels = study.interval_labels();
    let width = study.entries.len();
    let per_target = study.levels.len() * study.methods.len() * width;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut degenerate_opr_reps = 0;
    for (gi, grid) in config.grid.iter().enumerate() {
        let outcomes = map_indexed(config.n_reps, config.threads.max(1), |rep| {
            let key = rep_key(gi, rep);
            let dataset = simulate_dataset(
                &study.mdp.kernel,
                &behavior,
                config.start_state,
                grid.episodes(),
                grid.episode_len,
                &study.seeds,
                key,
            )?;
            study.analyze(&dataset, key)
        })?;

        let cells = labels.len();
        let mut covered = vec![0usize; cells];
        let mut width_sum = vec![0.0; cells];
        let mut degenerate = vec![0usize; cells];
        let mut repaired = 0usize;
        let mut valid = 0usize;
        for (rep, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(analysis) => {
                    valid += 1;
                    repaired += usize::from(analysis.repaired);
                    degenerate_opr_reps += usize::from(analysis.degenerate_opr);
                    for (c, ci) in analysis.intervals.iter().enumerate() {
                        let truth_value = truth[(c / per_target) * width + c % width];
                        covered[c] += usize::from(covers(ci, truth_value));
                        width_sum[c] += ci.width();
                        degenerate[c] += usize::from(ci.degenerate);
                    }
                }
                Err(e) => {
                    failures.push(RepFailure { n: grid.n, episode_len: grid.episode_len, rep, error: e.to_string() })
                }
            }
        }
        let denom = valid.max(1) as f64;
        for (c, label) in labels.iter().enumerate() {
            let is_clt = label.ci_type == "clt";
            rows.push(CoverageRow {
                method: label.method.clone(),
                ci_type: label.ci_type.clone(),
                target: label.target.clone(),
                entry: label.entry.clone(),
                n: grid.n,
                episode_len: grid.episode_len,
                episodes: grid.episodes(),
                nominal: label.nominal,
                coverage: covered[c] as f64 / denom,
                mean_width: width_sum[c] / denom,
                degenerate_rate: degenerate[c] as f64 / denom,
                repair_rate: repaired as f64 / denom,
                n_reps: valid,
                replicates: if is_clt { 0 } else { config.replicates },
                seed: config.seed,
            });
        }
    }
    Ok(CoverageReport { rows, failures, degenerate_opr_reps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

pub const CSV_HEADER: &str =
    "method,ci_type,target,entry,n,T,K,nominal,coverage,mean_width,degenerate_rate,repair_rate,n_reps,B,seed";

pub fn write_csv<W: std::io::Write>(rows: &[CoverageRow], out: W) -> Result<()> {
    let mut writer =
        csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<CoverageRow>> {
    csv::Reader::from_reader(input).deserialize().collect::<std::result::Result<Vec<_>, _>>().map_err(Error::from)
}

pub fn emit_report(report: &CoverageReport, format: ReportFormat, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        ReportFormat::Csv => write_csv(&report.rows, file),
        ReportFormat::Json => {
            serde_json::to_writer_pretty(file, report)?;
            Ok(())
        }
    }
}

/// Minimal row of a reference table (e.g. published coverages).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub ci_type: String,
    pub target: String,
    pub entry: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub episode_len: usize,
    pub nominal: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub method: String,
    pub ci_type: String,
    pub target: String,
    pub entry: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub episode_len: usize,
    pub nominal: f64,
    pub reference: f64,
    pub observed: f64,
    pub diff: f64,
    /// Binomial standard error of the observed coverage at the reference value.
    pub se: f64,
}

pub fn read_reference_csv<R: std::io::Read>(input: R) -> Result<Vec<ReferenceRow>> {
    csv::Reader::from_reader(input).deserialize().collect::<std::result::Result<Vec<_>, _>>().map_err(Error::from)
}

/// Joins observed rows with reference rows on
/// `(method, ci_type, target, entry, n, T, nominal)`.
pub fn compare(observed: &[CoverageRow], reference: &[ReferenceRow]) -> Vec<Comparison> {
    observed
        .iter()
        .filter_map(|o| {
            let r = reference.iter().find(|r| {
                r.method == o.method
                    && r.ci_type == o.ci_type
                    && r.target == o.target
                    && r.entry == o.entry
                    && r.n == o.n
                    && r.episode_len == o.episode_len
                    && (r.nominal - o.nominal).abs() < 1e-9
            })?;
            let se = (r.coverage * (1.0 - r.coverage) / o.n_reps.max(1) as f64).sqrt();
            Some(Comparison {
                method: o.method.clone(),
                ci_type: o.ci_type.clone(),
                target: o.target.clone(),
                entry: o.entry.clone(),
                n: o.n,
                episode_len: o.episode_len,
                nominal: o.nominal,
                reference: r.coverage,
                observed: o.coverage,
                diff: o.coverage - r.coverage,
                se,
            })
        })
        .collect()
}
