//! Experiment runners: FedVeca, the budget-matched FedAvg/FedNova
//! baselines, and pooled centralized SGD.
//!
//! A comparison runs FedVeca first, records how many local iterations it
//! spent (`tau_all`), and gives every baseline the same total budget.

use std::sync::Arc;

use log::{debug, info};

use crate::client::{local_train, ClientNode, ClientSettings};
use crate::config::{Algo, DatasetConfig, ExperimentConfig};
use crate::data::{gen_synthetic, gen_synthetic_test, partition, read_idx, Dataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::fed::weights;
use crate::metrics::{evaluate, with_mean_rows, ClientMetrics, MetricRecord, SeedLabel};
use crate::model::{ModelKind, ModelSpec};
use crate::numerics::{domain, ParamVector, RngStream};
use crate::server::{Aggregation, RoundRecord, Server, ServerConfig, StepControl};
use crate::transport::Federation;

/// Local iterations actually spent by a FedVeca run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BudgetLedger {
    /// `tau_log[k][i]`: steps client `i` ran in round `k`.
    pub tau_log: Vec<Vec<u32>>,
    pub tau_all: u64,
}

impl BudgetLedger {
    pub fn from_log(tau_log: Vec<Vec<u32>>) -> Self {
        let tau_all = tau_log.iter().flatten().map(|&t| t as u64).sum();
        Self { tau_log, tau_all }
    }

    pub fn push_round(&mut self, taus: &[u32]) {
        self.tau_all += taus.iter().map(|&t| t as u64).sum::<u64>();
        self.tau_log.push(taus.to_vec());
    }

    pub fn with_total(tau_all: u64) -> Self {
        Self {
            tau_log: Vec::new(),
            tau_all,
        }
    }
}

fn budget_error(reason: impl Into<String>) -> Error {
    Error::Config {
        field: "budget".into(),
        reason: reason.into(),
    }
}

/// Per-client fixed step counts spending the ledger's budget over `rounds`
/// rounds: the average epoch count `E = (tau_all / K) * (B / D)` turned
/// back into steps on each shard, `floor(E * D_i / B)`, at least 1.
///
/// Evaluated as `floor(tau_all * D_i / (K * D))` in integers so the
/// result does not depend on floating-point rounding.
pub fn budget_tau(
    ledger: &BudgetLedger,
    rounds: u32,
    batch_size: usize,
    total: usize,
    shard_sizes: &[usize],
) -> Result<Vec<u32>> {
    if rounds == 0 || batch_size == 0 || total == 0 || shard_sizes.contains(&0) {
        return Err(budget_error("K, B, D and every D_i must be positive"));
    }
    let denom = rounds as u128 * total as u128;
    Ok(shard_sizes
        .iter()
        .map(|&di| {
            let t = ledger.tau_all as u128 * di as u128 / denom;
            t.clamp(1, u32::MAX as u128) as u32
        })
        .collect())
}

/// Uniform step count for FedAvg under the same budget: `tau_all / (K * N)`
/// rounded down, at least 1. Equals [`budget_tau`] when shards are equal.
pub fn uniform_budget_tau(ledger: &BudgetLedger, rounds: u32, n_clients: usize) -> Result<Vec<u32>> {
    if rounds == 0 || n_clients == 0 {
        return Err(budget_error("K and N must be positive"));
    }
    let t = (ledger.tau_all / (rounds as u64 * n_clients as u64)).clamp(1, u32::MAX as u64) as u32;
    Ok(vec![t; n_clients])
}

/// Datasets, model and partition shared by every runner for one seed.
#[derive(Debug, Clone)]
pub struct Setup {
    pub spec: ModelSpec,
    pub train: Arc<Dataset>,
    pub test: Dataset,
    pub plan: PartitionPlan,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = load_datasets(&cfg.dataset, seed)?;
        let spec = match cfg.model.kind {
            ModelKind::SquaredSvm => ModelSpec::squared_svm(train.feature_dim),
            ModelKind::MultinomialLogistic => ModelSpec::logistic(train.feature_dim, train.num_classes),
        }
        .with_l2(cfg.model.l2_reg);
        spec.validate()?;
        if test.feature_dim != train.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: train.feature_dim,
                actual: test.feature_dim,
            });
        }
        let plan = if cfg.n_clients == 1 {
            PartitionPlan {
                case: cfg.partition,
                shards: vec![train.all_indices()],
            }
        } else {
            partition(&train, cfg.partition, cfg.n_clients, seed)?
        };
        Ok(Self {
            spec,
            train: Arc::new(train),
            test,
            plan,
        })
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.plan.shard_sizes()
    }

    fn nodes(&self, cfg: &ExperimentConfig, seed: u64) -> Vec<ClientNode> {
        self.plan
            .shards
            .iter()
            .enumerate()
            .map(|(id, shard)| ClientNode {
                id,
                spec: self.spec.clone(),
                data: Arc::clone(&self.train),
                shard: shard.clone(),
                settings: ClientSettings {
                    eta: cfg.eta,
                    batch_size: cfg.batch_size,
                    seed,
                    beta_source: cfg.beta_source,
                    delta_cap: cfg.delta_cap(),
                },
            })
            .collect()
    }
}

pub fn load_datasets(ds: &DatasetConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match ds {
        DatasetConfig::Synthetic {
            n,
            d,
            classes,
            separation,
            test_n,
        } => Ok((
            gen_synthetic(*n, *d, *classes, *separation, seed)?,
            gen_synthetic_test(*test_n, *d, *classes, *separation, seed)?,
        )),
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            parity,
        } => {
            let train = read_idx(train_images, train_labels)?;
            let test = read_idx(test_images, test_labels)?;
            if *parity {
                Ok((train.to_parity(), test.to_parity()))
            } else {
                Ok((train, test))
            }
        }
    }
}

/// Everything one runner produced for one seed.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub algo: Algo,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    /// Server-side view of each round (empty for centralized SGD).
    pub rounds: Vec<RoundRecord>,
    /// Global model after each round, `w_1..w_K`.
    pub models: Vec<ParamVector>,
    pub ledger: BudgetLedger,
}

impl RunOutput {
    pub fn final_model(&self) -> Option<&ParamVector> {
        self.models.last()
    }
}

/// Pooled minibatch SGD for `tau_all` steps, checkpointed `checkpoints`
/// times at evenly spaced step counts. Returns the checkpoint models; with
/// `tau_all == 0` every checkpoint is `w0`.
#[allow(clippy::too_many_arguments)]
pub fn run_centralized(
    tau_all: u64,
    batch_size: usize,
    spec: &ModelSpec,
    data: &Dataset,
    eta: f64,
    seed: u64,
    w0: &ParamVector,
    checkpoints: u32,
) -> Result<Vec<ParamVector>> {
    if checkpoints == 0 {
        return Err(Error::InvalidArgument("need at least one checkpoint".into()));
    }
    let pool = data.all_indices();
    let mut rng = RngStream::derive(seed, domain::CENTRAL, 0);
    let mut w = w0.clone();
    let mut done = 0u64;
    let mut out = Vec::with_capacity(checkpoints as usize);
    for c in 1..=checkpoints as u64 {
        let target = (tau_all as u128 * c as u128 / checkpoints as u128) as u64;
        let mut steps = target - done;
        // local_train keeps the whole trajectory; cap the chunk length.
        while steps > 0 {
            let chunk = steps.min(4096) as u32;
            let (traj, _) = local_train(&w, chunk, spec, data, &pool, eta, batch_size, &mut rng).map_err(|e| {
                match e {
                    Error::Divergence { iteration, .. } => Error::Divergence {
                        client: None,
                        iteration: done as usize + iteration,
                    },
                    other => other,
                }
            })?;
            w = traj.params.into_iter().last().expect("trajectory has tau + 1 iterates");
            done += chunk as u64;
            steps -= chunk as u64;
        }
        out.push(w.clone());
    }
    Ok(out)
}

/// Runs one algorithm for one seed.
///
/// `budget` supplies the local-iteration budget of a previous FedVeca run
/// for FedAvg/FedNova (unless `fixed_tau` is configured) and for
/// centralized SGD (unless `tau_all` is configured).
pub fn run_experiment(
    algo: Algo,
    cfg: &ExperimentConfig,
    seed: u64,
    budget: Option<&BudgetLedger>,
) -> Result<RunOutput> {
    let setup = Setup::build(cfg, seed)?;
    run_with_setup(algo, cfg, &setup, seed, budget)
}

pub fn run_with_setup(
    algo: Algo,
    cfg: &ExperimentConfig,
    setup: &Setup,
    seed: u64,
    budget: Option<&BudgetLedger>,
) -> Result<RunOutput> {
    match algo {
        Algo::Centralized => centralized(cfg, setup, seed, budget),
        _ => federated(algo, cfg, setup, seed, budget),
    }
}

fn fixed_tau(algo: Algo, cfg: &ExperimentConfig, setup: &Setup, budget: Option<&BudgetLedger>) -> Result<Vec<u32>> {
    if let Some(t) = &cfg.fixed_tau {
        return Ok(t.clone());
    }
    let ledger = budget.ok_or_else(|| {
        budget_error(format!("{algo} needs `fixed_tau` or the budget of a prior fedveca run"))
    })?;
    let sizes = setup.shard_sizes();
    match algo {
        Algo::Fedavg => uniform_budget_tau(ledger, cfg.rounds, sizes.len()),
        _ => budget_tau(ledger, cfg.rounds, cfg.batch_size, sizes.iter().sum(), &sizes),
    }
}

fn federated(
    algo: Algo,
    cfg: &ExperimentConfig,
    setup: &Setup,
    seed: u64,
    budget: Option<&BudgetLedger>,
) -> Result<RunOutput> {
    let (control, aggregation) = match algo {
        Algo::Fedveca => (
            StepControl::Adaptive {
                alpha: cfg.alpha,
                max_tau: cfg.max_tau,
                tau_initial: cfg.tau_initial,
            },
            Aggregation::FedNova,
        ),
        Algo::Fednova => (StepControl::Fixed(fixed_tau(algo, cfg, setup, budget)?), Aggregation::FedNova),
        Algo::Fedavg => (StepControl::Fixed(fixed_tau(algo, cfg, setup, budget)?), Aggregation::FedAvg),
        Algo::Centralized => unreachable!("handled by the centralized runner"),
    };
    if let StepControl::Fixed(t) = &control {
        info!("{algo}: fixed local steps {t:?}");
    }
    let mut server = Server::new(
        ServerConfig {
            eta: cfg.eta,
            rounds: cfg.rounds,
            control,
            aggregation,
        },
        weights(&setup.shard_sizes())?,
    )?;

    let mut fed = Federation::launch(cfg.transport, setup.nodes(cfg, seed))?;
    let w0 = ParamVector::zeros(setup.spec.param_dim());
    let mut plan = server.initial_plan(w0);
    let mut out = RunOutput {
        algo,
        seed,
        records: Vec::with_capacity(cfg.rounds as usize),
        rounds: Vec::with_capacity(cfg.rounds as usize),
        models: Vec::with_capacity(cfg.rounds as usize),
        ledger: BudgetLedger::default(),
    };
    loop {
        let outcome = match fed.round(&plan).and_then(|reports| server.server_round(&plan, &reports)) {
            Ok(o) => o,
            Err(e) => return Err(fed.abort(e)),
        };
        let (loss, accuracy) = evaluate(&outcome.w_next, &setup.spec, &setup.test)?;
        let rec = &outcome.record;
        debug!(
            "{algo} seed {seed} round {}: test loss {loss:.6}, accuracy {accuracy:.4}, tau {:?}",
            rec.round, rec.tau_per_client
        );
        out.ledger.push_round(&rec.tau_per_client);
        let adaptive = algo == Algo::Fedveca;
        out.records.push(MetricRecord {
            round: rec.round,
            algo: algo.name().to_string(),
            seed: SeedLabel::Seed(seed),
            loss,
            accuracy,
            tau_k: Some(rec.tau_k),
            eta_tau_l: rec.premise,
            clients: (0..rec.tau_per_client.len())
                .map(|i| ClientMetrics {
                    tau: Some(rec.tau_per_client[i] as f64),
                    beta: rec.beta[i].filter(|_| adaptive),
                    delta: rec.delta[i].filter(|_| adaptive),
                    a: rec.a[i],
                })
                .collect(),
        });
        out.models.push(outcome.w_next);
        out.rounds.push(outcome.record);
        match outcome.next_plan {
            Some(next) => plan = next,
            None => break,
        }
    }
    fed.shutdown()?;
    Ok(out)
}

fn centralized(
    cfg: &ExperimentConfig,
    setup: &Setup,
    seed: u64,
    budget: Option<&BudgetLedger>,
) -> Result<RunOutput> {
    let tau_all = match (cfg.tau_all, budget) {
        (Some(t), _) => t,
        (None, Some(l)) => l.tau_all,
        (None, None) => {
            return Err(budget_error(
                "centralized needs `tau_all` or the budget of a prior fedveca run",
            ))
        }
    };
    info!("centralized: {tau_all} pooled SGD steps");
    let w0 = ParamVector::zeros(setup.spec.param_dim());
    let models = run_centralized(
        tau_all,
        cfg.batch_size,
        &setup.spec,
        &setup.train,
        cfg.eta,
        seed,
        &w0,
        cfg.rounds,
    )?;
    let n = setup.plan.shards.len();
    let records = models
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let (loss, accuracy) = evaluate(w, &setup.spec, &setup.test)?;
            Ok(MetricRecord {
                round: k as u32,
                algo: Algo::Centralized.name().to_string(),
                seed: SeedLabel::Seed(seed),
                loss,
                accuracy,
                tau_k: None,
                eta_tau_l: None,
                clients: vec![ClientMetrics::default(); n],
            })
        })
        .collect::<Result<_>>()?;
    Ok(RunOutput {
        algo: Algo::Centralized,
        seed,
        records,
        rounds: Vec::new(),
        models,
        ledger: BudgetLedger::with_total(tau_all),
    })
}

/// Whether `algo` needs a FedVeca budget that the config does not supply.
pub fn needs_budget(algo: Algo, cfg: &ExperimentConfig) -> bool {
    match algo {
        Algo::Fedveca => false,
        Algo::Fedavg | Algo::Fednova => cfg.fixed_tau.is_none(),
        Algo::Centralized => cfg.tau_all.is_none(),
    }
}

/// Runs `algo` once per configured seed. Baselines without an explicit
/// budget first run FedVeca on the same seed to obtain one. With more than
/// one seed, `mean` rows are appended.
pub fn run_seeds(algo: Algo, cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let setup = Setup::build(cfg, seed)?;
        let budget = if needs_budget(algo, cfg) {
            info!("seed {seed}: running fedveca to size the {algo} budget");
            Some(run_with_setup(Algo::Fedveca, cfg, &setup, seed, None)?.ledger)
        } else {
            None
        };
        records.extend(run_with_setup(algo, cfg, &setup, seed, budget.as_ref())?.records);
    }
    Ok(finish(records, cfg.seeds.len()))
}

/// All four runners on one seed, in comparison order: FedVeca, then the
/// budget-matched FedNova and FedAvg, then centralized SGD.
pub fn compare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunOutput>> {
    let setup = Setup::build(cfg, seed)?;
    let veca = run_with_setup(Algo::Fedveca, cfg, &setup, seed, None)?;
    info!("seed {seed}: fedveca spent tau_all = {}", veca.ledger.tau_all);
    let ledger = veca.ledger.clone();
    let mut runs = vec![veca];
    for algo in [Algo::Fednova, Algo::Fedavg, Algo::Centralized] {
        runs.push(run_with_setup(algo, cfg, &setup, seed, Some(&ledger))?);
    }
    Ok(runs)
}

pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        for run in compare_seed(cfg, seed)? {
            records.extend(run.records);
        }
    }
    Ok(finish(records, cfg.seeds.len()))
}

fn finish(records: Vec<MetricRecord>, n_seeds: usize) -> Vec<MetricRecord> {
    if n_seeds > 1 {
        with_mean_rows(records)
    } else {
        records
    }
}
