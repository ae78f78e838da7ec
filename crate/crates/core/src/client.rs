//! Client side of a round: local SGD, the normalized direction, and the
//! per-client smoothness (beta) and gradient-divergence (delta) estimates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{sample_minibatch, Dataset};
use crate::error::{Error, Result};
use crate::fed::{ClientReport, RoundPlan};
use crate::model::{self, ModelSpec};
use crate::numerics::{dot_slices, l2_norm, ParamVector, RngStream};

/// Ratios whose denominator norm falls below this are skipped.
pub const NORM_GUARD: f64 = 1e-12;

/// Local iterates `w^0..w^τ` and the minibatch gradients that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrajectory {
    pub params: Vec<ParamVector>,
    pub minibatch_grads: Vec<ParamVector>,
}

impl LocalTrajectory {
    pub fn tau(&self) -> usize {
        self.minibatch_grads.len()
    }

    /// Recomputes every step `w^{λ+1} = w^λ - eta * g_λ` and compares
    /// bitwise against the stored iterates.
    pub fn replays_exactly(&self, eta: f64) -> bool {
        self.minibatch_grads.iter().enumerate().all(|(l, g)| {
            let mut w = self.params[l].clone();
            w.add_scaled(-eta, g).is_ok() && w == self.params[l + 1]
        })
    }
}

/// Runs `tau` minibatch SGD steps from `w_k` and returns the trajectory
/// together with `G = (1/tau) Σ_λ g_λ`.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    w_k: &ParamVector,
    tau: u32,
    spec: &ModelSpec,
    data: &Dataset,
    shard: &[usize],
    eta: f64,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<(LocalTrajectory, ParamVector)> {
    if tau == 0 || !(eta > 0.0) || batch_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "local_train needs tau >= 1, eta > 0, B >= 1 (tau={tau}, eta={eta}, B={batch_size})"
        )));
    }
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    let mut params = Vec::with_capacity(tau as usize + 1);
    let mut grads = Vec::with_capacity(tau as usize);
    let mut sum = ParamVector::zeros(w_k.dim());
    params.push(w_k.clone());
    for iteration in 0..tau as usize {
        let batch = sample_minibatch(shard, batch_size, rng);
        let w = &params[iteration];
        let g = model::grad_at(spec, w, &data.samples, &batch)?;
        let mut next = w.clone();
        next.add_scaled(-eta, &g)?;
        if !next.is_finite() || !g.is_finite() {
            return Err(Error::Divergence {
                client: None,
                iteration,
            });
        }
        sum.add_scaled(1.0, &g)?;
        grads.push(g);
        params.push(next);
    }
    let direction = ParamVector::new(sum.as_slice().iter().map(|x| x / tau as f64).collect());
    Ok((
        LocalTrajectory {
            params,
            minibatch_grads: grads,
        },
        direction,
    ))
}

/// `max_λ ‖∇F_i(w_k) - grads[λ]‖ / ‖w_k - params[λ]‖` over `λ < grads.len()`,
/// skipping ratios with a vanishing denominator (always the case at λ = 0).
pub fn estimate_beta_from(
    params: &[ParamVector],
    grads: &[ParamVector],
    grad_at_start: &ParamVector,
) -> Result<f64> {
    let w_k = &params[0];
    let mut beta: f64 = 0.0;
    for (w, g) in params.iter().zip(grads) {
        let dw = l2_norm(&w_k.sub(w)?);
        if dw < NORM_GUARD {
            continue;
        }
        beta = beta.max(l2_norm(&grad_at_start.sub(g)?) / dw);
    }
    Ok(beta)
}

pub fn estimate_beta(traj: &LocalTrajectory, grad_at_start: &ParamVector) -> Result<f64> {
    estimate_beta_from(&traj.params, &traj.minibatch_grads, grad_at_start)
}

/// `max_{1 ≤ λ < τ} ‖Σ_{s≤λ} g_s‖² / ((λ+1) ‖∇F(w_{k-1})‖²)`.
///
/// Returns `delta_cap` when the previous global gradient has vanished and 0
/// when the trajectory is shorter than two steps.
pub fn estimate_delta(
    traj: &LocalTrajectory,
    prev_global_grad: &ParamVector,
    delta_cap: f64,
) -> Result<f64> {
    let g_norm = l2_norm(prev_global_grad);
    if g_norm < NORM_GUARD {
        return Ok(delta_cap);
    }
    let g_sq = g_norm * g_norm;
    let mut running = ParamVector::zeros(prev_global_grad.dim());
    let mut delta: f64 = 0.0;
    for (l, g) in traj.minibatch_grads.iter().enumerate() {
        running.add_scaled(1.0, g)?;
        if l == 0 {
            continue;
        }
        let num = dot_slices(running.as_slice(), running.as_slice());
        delta = delta.max(num / ((l + 1) as f64 * g_sq));
    }
    Ok(delta)
}

/// Which gradients the beta estimate compares against `∇F_i(w_k)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    /// The minibatch gradients the trajectory actually used.
    #[default]
    Minibatch,
    /// Full-shard gradients recomputed at every local iterate.
    FullShard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSettings {
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta_source: BetaSource,
    pub delta_cap: f64,
}

/// Everything a client owns for the lifetime of an experiment.
#[derive(Debug, Clone)]
pub struct ClientNode {
    pub id: usize,
    pub spec: ModelSpec,
    pub data: Arc<Dataset>,
    pub shard: Vec<usize>,
    pub settings: ClientSettings,
}

impl ClientNode {
    /// Executes one round and packages the report.
    pub fn client_round(&self, plan: &RoundPlan) -> Result<ClientReport> {
        plan.validate()?;
        let tau = *plan.tau_per_client.get(self.id).ok_or_else(|| {
            Error::InvalidArgument(format!("plan has no tau for client {}", self.id))
        })?;
        self.run(plan.round, tau, &plan.w, plan.prev_global_grad.as_ref())
    }

    /// One round from the values a client actually receives: its own step
    /// count, the global model, and (from round 1) the previous global
    /// gradient.
    pub fn run(
        &self,
        round: u32,
        tau: u32,
        w: &ParamVector,
        prev_global_grad: Option<&ParamVector>,
    ) -> Result<ClientReport> {
        let s = &self.settings;
        let data = &self.data;
        let grad_at_start = model::full_grad(&self.spec, w, &data.samples, &self.shard)?;
        let loss_at_start = model::loss_at(&self.spec, w, &data.samples, &self.shard)?;
        let mut rng = RngStream::for_round(s.seed, round, self.id);
        let (traj, direction) = local_train(
            w,
            tau,
            &self.spec,
            data,
            &self.shard,
            s.eta,
            s.batch_size,
            &mut rng,
        )
        .map_err(|e| match e {
            Error::Divergence { iteration, .. } => Error::Divergence {
                client: Some(self.id),
                iteration,
            },
            other => other,
        })?;

        let (beta, delta) = match prev_global_grad {
            None => (None, None),
            Some(prev) => {
                let beta = match s.beta_source {
                    BetaSource::Minibatch => estimate_beta(&traj, &grad_at_start)?,
                    BetaSource::FullShard => {
                        let full: Vec<ParamVector> = traj.params[..traj.tau()]
                            .iter()
                            .map(|w| model::full_grad(&self.spec, w, &data.samples, &self.shard))
                            .collect::<Result<_>>()?;
                        estimate_beta_from(&traj.params, &full, &grad_at_start)?
                    }
                };
                let delta = estimate_delta(&traj, prev, s.delta_cap)?;
                (Some(beta), Some(delta))
            }
        };

        Ok(ClientReport {
            client_id: self.id,
            direction,
            grad_at_start,
            loss_at_start,
            beta,
            delta,
            tau_used: tau,
        })
    }
}
