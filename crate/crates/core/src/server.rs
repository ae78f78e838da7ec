//! Server side of a round: aggregation, the global smoothness estimate,
//! heterogeneity scores, and prediction of each client's next step count.

use log::{debug, warn};

use crate::client::NORM_GUARD;
use crate::error::{Error, Result};
use crate::fed::{
    aggregate_fedavg, aggregate_fednova, order_reports, weighted_sum, ClientReport, ClientWeights,
    LocalSum, RoundPlan,
};
use crate::numerics::{l2_norm, ParamVector};

/// Scores below this are treated as zero by [`predict_tau`].
pub const A_GUARD: f64 = 1e-15;

/// Relative slack used when flooring the step-count ratio, so that values
/// such as `1 / (1 - 0.95)` that are integers in exact arithmetic are not
/// rounded down by representation error.
pub const FLOOR_SLACK: f64 = 1e-9;

/// `Σ p_i ∇F_i(w_k)` in client order.
pub fn global_gradient(reports: &[ClientReport], p: &ClientWeights) -> Result<ParamVector> {
    let ordered = order_reports(reports, p.len())?;
    let dim = ordered[0].grad_at_start.dim();
    weighted_sum(p, ordered.iter().map(|r| &r.grad_at_start), dim)
}

/// `η β² δ`.
pub fn compute_a(beta: f64, delta: f64, eta: f64) -> f64 {
    eta * beta * beta * delta
}

/// `η τ_k L`; the convergence analysis assumes it is at least 1.
pub fn premise_value(eta: f64, tau_k: f64, l: f64) -> f64 {
    eta * tau_k * l
}

/// Floor that tolerates a relative error of [`FLOOR_SLACK`] below an integer.
pub fn snap_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= FLOOR_SLACK * r.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

/// How one client's next step count was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauDecision {
    /// `A_i / (A_i - α min_j A_j)`; `None` for zero-guarded clients.
    pub bound: Option<f64>,
    /// Step count before the reset-to-2 and `max_tau` clamps.
    pub pre_clamp: u32,
    pub tau: u32,
}

/// Step-count prediction with the intermediate values exposed.
///
/// The minimum is taken over clients whose score is at least [`A_GUARD`];
/// guarded clients receive `max_tau`. Ties in the minimum have no effect on
/// the result.
pub fn predict_tau_detailed(a: &[f64], alpha: f64, max_tau: u32) -> Result<Vec<TauDecision>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config {
            field: "alpha".into(),
            reason: format!("must lie in (0, 1), got {alpha}"),
        });
    }
    if max_tau < 2 {
        return Err(Error::Config {
            field: "max_tau".into(),
            reason: format!("must be >= 2, got {max_tau}"),
        });
    }
    if let Some(bad) = a.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "heterogeneity scores must be finite and >= 0, got {bad}"
        )));
    }
    let min_a = a
        .iter()
        .copied()
        .filter(|&x| x >= A_GUARD)
        .fold(f64::INFINITY, f64::min);
    Ok(a.iter()
        .map(|&ai| {
            if ai < A_GUARD {
                return TauDecision {
                    bound: None,
                    pre_clamp: max_tau,
                    tau: max_tau,
                };
            }
            let bound = ai / (ai - alpha * min_a);
            let pre_clamp = snap_floor(bound).min(u32::MAX as f64) as u32;
            let tau = if pre_clamp <= 1 { 2 } else { pre_clamp.min(max_tau) };
            TauDecision {
                bound: Some(bound),
                pre_clamp,
                tau,
            }
        })
        .collect())
}

/// `τ_i = ⌊A_i / (A_i - α min_j A_j)⌋`, reset to 2 when it is at most 1 and
/// capped at `max_tau`.
pub fn predict_tau(a: &[f64], alpha: f64, max_tau: u32) -> Result<Vec<u32>> {
    Ok(predict_tau_detailed(a, alpha, max_tau)?
        .into_iter()
        .map(|d| d.tau)
        .collect())
}

/// Server-side estimator history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimatorState {
    /// Every accepted `L_{k-1}` estimate, in round order.
    pub l_history: Vec<f64>,
    /// Running maximum of `l_history`.
    pub l: f64,
    /// `w_{k-1}` and `w_{k-2}` relative to the round being processed.
    pub prev_w: Option<ParamVector>,
    pub prev_prev_w: Option<ParamVector>,
    /// `∇F(w_{k-1})` and `∇F(w_{k-2})`.
    pub prev_global_grad: Option<ParamVector>,
    pub prev_prev_global_grad: Option<ParamVector>,
    pub a_per_client: Vec<f64>,
    /// `η τ_k L` per round; `None` in round 0.
    pub premise_trace: Vec<Option<f64>>,
}

impl EstimatorState {
    /// Shifts the snapshots after round `k`: `(w_k, ∇F(w_k))` become the
    /// previous values.
    pub fn push_snapshot(&mut self, w_k: ParamVector, grad_k: ParamVector) {
        self.prev_prev_w = self.prev_w.replace(w_k);
        self.prev_prev_global_grad = self.prev_global_grad.replace(grad_k);
    }
}

/// Updates and returns the running smoothness estimate `L` during round `k`.
///
/// Round 1 uses `‖∇F(w_0)‖ / ‖w_0‖`; later rounds use the ratio of the
/// difference of the two most recent global gradients to the difference of
/// the models. Ratios with a denominator below 1e-12 leave `L` unchanged.
pub fn estimate_l(state: &mut EstimatorState, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("L is estimated from round 1 on".into()));
    }
    let estimate = match (
        &state.prev_w,
        &state.prev_global_grad,
        &state.prev_prev_w,
        &state.prev_prev_global_grad,
    ) {
        (Some(w1), Some(g1), _, _) if k == 1 => {
            let den = l2_norm(w1);
            (den >= NORM_GUARD).then(|| l2_norm(g1) / den)
        }
        (Some(w1), Some(g1), Some(w2), Some(g2)) => {
            let den = l2_norm(&w1.sub(w2)?);
            if den >= NORM_GUARD {
                Some(l2_norm(&g1.sub(g2)?) / den)
            } else {
                None
            }
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "estimator snapshots missing for round {k}"
            )))
        }
    };
    if let Some(l_prev) = estimate {
        state.l_history.push(l_prev);
        state.l = state.l.max(l_prev);
    }
    Ok(state.l)
}

/// How the server assigns step counts.
#[derive(Debug, Clone, PartialEq)]
pub enum StepControl {
    /// Predict from the clients' heterogeneity scores every round.
    Adaptive { alpha: f64, max_tau: u32, tau_initial: u32 },
    /// The same per-client step counts every round.
    Fixed(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    FedNova,
    FedAvg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub eta: f64,
    pub rounds: u32,
    pub control: StepControl,
    pub aggregation: Aggregation,
}

/// Everything the server learned in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub tau_per_client: Vec<u32>,
    pub tau_k: f64,
    /// Weighted training loss `Σ p_i F_i(w_k)` at the round's start model.
    pub train_loss: f64,
    pub global_grad_norm: f64,
    /// Running `L` after this round's update; `None` in round 0.
    pub l: Option<f64>,
    pub premise: Option<f64>,
    pub beta: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
    pub a: Vec<Option<f64>>,
    /// Next-round step decisions (adaptive control, rounds >= 1).
    pub next_tau: Vec<TauDecision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub w_next: ParamVector,
    /// `None` once the last round has been aggregated.
    pub next_plan: Option<RoundPlan>,
    pub record: RoundRecord,
}

/// The parameter server state machine; one round in flight at a time.
#[derive(Debug, Clone)]
pub struct Server {
    pub config: ServerConfig,
    pub weights: ClientWeights,
    pub state: EstimatorState,
    alpha_warned: bool,
}

impl Server {
    pub fn new(config: ServerConfig, weights: ClientWeights) -> Result<Self> {
        if let StepControl::Fixed(t) = &config.control {
            if t.len() != weights.len() || t.contains(&0) {
                return Err(Error::Config {
                    field: "tau".into(),
                    reason: format!("need {} positive step counts, got {t:?}", weights.len()),
                });
            }
        }
        if let StepControl::Adaptive {
            alpha,
            max_tau,
            tau_initial,
        } = config.control
        {
            predict_tau(&[], alpha, max_tau)?;
            if tau_initial < 1 || tau_initial > max_tau {
                return Err(Error::Config {
                    field: "tau_initial".into(),
                    reason: format!("must lie in [1, {max_tau}], got {tau_initial}"),
                });
            }
        }
        if config.rounds == 0 {
            return Err(Error::Config {
                field: "rounds".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(Self {
            config,
            weights,
            state: EstimatorState::default(),
            alpha_warned: false,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.weights.len()
    }

    pub fn initial_plan(&self, w0: ParamVector) -> RoundPlan {
        let tau = match &self.config.control {
            StepControl::Adaptive { tau_initial, .. } => vec![*tau_initial; self.n_clients()],
            StepControl::Fixed(t) => t.clone(),
        };
        RoundPlan {
            round: 0,
            tau_per_client: tau,
            w: w0,
            prev_global_grad: None,
        }
    }

    /// Aggregates round `plan.round` and prepares the next plan.
    pub fn server_round(&mut self, plan: &RoundPlan, reports: &[ClientReport]) -> Result<RoundOutcome> {
        let k = plan.round;
        let eta = self.config.eta;
        let ordered = order_reports(reports, self.n_clients())?;
        for (r, &t) in ordered.iter().zip(&plan.tau_per_client) {
            if r.tau_used != t {
                return Err(Error::InvalidArgument(format!(
                    "client {} ran {} steps, plan said {t}",
                    r.client_id, r.tau_used
                )));
            }
        }

        let step = aggregate_fednova(reports, &self.weights, eta, &plan.w)?;
        let w_next = match self.config.aggregation {
            Aggregation::FedNova => step.w_next,
            Aggregation::FedAvg => {
                let sums: Vec<LocalSum> = ordered.iter().map(|r| LocalSum::from_report(r)).collect();
                aggregate_fedavg(&sums, &self.weights, eta, &plan.w)?
            }
        };
        let grad_k = global_gradient(reports, &self.weights)?;
        let mut train_loss = 0.0;
        for (pi, r) in self.weights.as_slice().iter().zip(&ordered) {
            train_loss += pi * r.loss_at_start;
        }

        let n = self.n_clients();
        let mut record = RoundRecord {
            round: k,
            tau_per_client: plan.tau_per_client.clone(),
            tau_k: step.tau_k,
            train_loss,
            global_grad_norm: l2_norm(&grad_k),
            l: None,
            premise: None,
            beta: ordered.iter().map(|r| r.beta).collect(),
            delta: ordered.iter().map(|r| r.delta).collect(),
            a: vec![None; n],
            next_tau: Vec::new(),
        };

        let mut next_tau = plan.tau_per_client.clone();
        if k >= 1 {
            let l = estimate_l(&mut self.state, k)?;
            let premise = premise_value(eta, step.tau_k, l);
            record.l = Some(l);
            record.premise = Some(premise);
            self.state.premise_trace.push(Some(premise));
            if premise < 1.0 {
                debug!("round {k}: premise eta*tau_k*L = {premise:.4} < 1");
            }

            if let StepControl::Adaptive { alpha, max_tau, .. } = self.config.control {
                let a: Vec<f64> = ordered
                    .iter()
                    .map(|r| match (r.beta, r.delta) {
                        (Some(b), Some(d)) => Ok(compute_a(b, d, eta)),
                        _ => Err(Error::InvalidArgument(format!(
                            "client {} sent no estimates in round {k}",
                            r.client_id
                        ))),
                    })
                    .collect::<Result<_>>()?;
                let decisions = predict_tau_detailed(&a, alpha, max_tau)?;
                self.check_alpha_regime(&a, alpha, l);
                next_tau = decisions.iter().map(|d| d.tau).collect();
                record.a = a.iter().copied().map(Some).collect();
                record.next_tau = decisions;
                self.state.a_per_client = a;
            }
        } else {
            self.state.premise_trace.push(None);
        }

        self.state.push_snapshot(plan.w.clone(), grad_k.clone());

        let next_plan = (k + 1 < self.config.rounds).then(|| RoundPlan {
            round: k + 1,
            tau_per_client: next_tau,
            w: w_next.clone(),
            prev_global_grad: Some(grad_k),
        });
        Ok(RoundOutcome {
            w_next,
            next_plan,
            record,
        })
    }

    fn check_alpha_regime(&mut self, a: &[f64], alpha: f64, l: f64) {
        if self.alpha_warned || l <= 0.0 {
            return;
        }
        let min_a = a.iter().copied().filter(|&x| x >= A_GUARD).fold(f64::INFINITY, f64::min);
        if min_a.is_finite() && alpha >= 2.0 * l / min_a {
            warn!(
                "alpha = {alpha} is outside (0, 2L/min A) = (0, {:.4}); convergence bound may not hold",
                2.0 * l / min_a
            );
            self.alpha_warned = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::weights;

    fn pv(xs: &[f64]) -> ParamVector {
        ParamVector::new(xs.to_vec())
    }

    fn report(id: usize, tau: u32, g: &[f64], grad: &[f64], est: Option<(f64, f64)>) -> ClientReport {
        ClientReport {
            client_id: id,
            direction: pv(g),
            grad_at_start: pv(grad),
            loss_at_start: 1.0,
            beta: est.map(|e| e.0),
            delta: est.map(|e| e.1),
            tau_used: tau,
        }
    }

    #[test]
    fn global_gradient_examples() {
        let p = weights(&[1, 1]).unwrap();
        let rs = [report(0, 1, &[0.0, 0.0], &[2.0, 0.0], None), report(1, 1, &[0.0, 0.0], &[0.0, 2.0], None)];
        assert_eq!(global_gradient(&rs, &p).unwrap().as_slice(), &[1.0, 1.0]);

        let p = weights(&[1, 3]).unwrap();
        let rs = [report(1, 1, &[0.0, 0.0], &[0.0, 4.0], None), report(0, 1, &[0.0, 0.0], &[4.0, 0.0], None)];
        assert_eq!(global_gradient(&rs, &p).unwrap().as_slice(), &[1.0, 3.0]);

        let p = weights(&[2, 5, 9]).unwrap();
        let g = [0.3, -1.7];
        let rs: Vec<_> = (0..3).map(|i| report(i, 1, &[0.0, 0.0], &g, None)).collect();
        assert!(global_gradient(&rs, &p).unwrap().max_abs_diff(&pv(&g)).unwrap() < 1e-15);
        assert!(matches!(global_gradient(&rs[..2], &p), Err(Error::MissingReport(2))));
    }

    #[test]
    fn estimate_l_examples() {
        let mut s = EstimatorState::default();
        s.push_snapshot(pv(&[4.0, 0.0]), pv(&[0.0, 2.0]));
        assert_eq!(estimate_l(&mut s, 1).unwrap(), 0.5);

        // Equal consecutive gradients contribute 0 and leave L unchanged.
        s.push_snapshot(pv(&[3.0, 0.0]), pv(&[0.0, 2.0]));
        assert_eq!(estimate_l(&mut s, 2).unwrap(), 0.5);
        assert_eq!(s.l_history, vec![0.5, 0.0]);

        // Zero initial model skips the round-1 estimate.
        let mut z = EstimatorState::default();
        z.push_snapshot(ParamVector::zeros(2), pv(&[1.0, 1.0]));
        assert_eq!(estimate_l(&mut z, 1).unwrap(), 0.0);
        assert!(z.l_history.is_empty());
        assert!(estimate_l(&mut z, 0).is_err());
    }

    #[test]
    fn estimate_l_on_unit_quadratic() {
        // ∇F(w) = w.
        let mut s = EstimatorState::default();
        let mut w = pv(&[1.0, -2.0, 3.0]);
        for k in 1..6 {
            s.push_snapshot(w.clone(), w.clone());
            let l = estimate_l(&mut s, k).unwrap();
            assert!((l - 1.0).abs() < 1e-12);
            w = w.scaled(0.7);
        }
        assert!(s.l_history.iter().all(|&l| (l - 1.0).abs() < 1e-12));
    }

    #[test]
    fn compute_a_examples() {
        assert_eq!(compute_a(0.0, 3.0, 0.01), 0.0);
        assert!((compute_a(2.0, 3.0, 0.01) - 0.12).abs() < 1e-15);
        assert_eq!(compute_a(2.0, 0.0, 0.01), 0.0);
    }

    #[test]
    fn predict_tau_examples() {
        assert_eq!(predict_tau(&[2.0, 4.0], 0.95, 50).unwrap(), vec![20, 2]);
        assert_eq!(predict_tau(&[0.3; 4], 0.95, 50).unwrap(), vec![20; 4]);
        assert_eq!(predict_tau(&[2.0, 4.0, 1e-20], 0.95, 10).unwrap(), vec![10, 2, 10]);
        assert!(predict_tau(&[1.0], 1.0, 50).is_err());
        assert!(predict_tau(&[1.0], 0.0, 50).is_err());
    }

    #[test]
    fn premise_examples() {
        assert!((premise_value(0.01, 50.0, 2.0) - 1.0).abs() < 1e-15);
        assert!((premise_value(0.01, 3.0, 0.5) - 0.015).abs() < 1e-15);
        assert_eq!(premise_value(0.01, 3.0, 0.0), 0.0);
    }

    #[test]
    fn snap_floor_behaviour() {
        assert_eq!(snap_floor(19.999999999999982), 20.0);
        assert_eq!(snap_floor(19.99), 19.0);
        assert_eq!(snap_floor(1.9047619047619047), 1.0);
    }

    fn adaptive(rounds: u32) -> ServerConfig {
        ServerConfig {
            eta: 0.1,
            rounds,
            control: StepControl::Adaptive {
                alpha: 0.95,
                max_tau: 50,
                tau_initial: 5,
            },
            aggregation: Aggregation::FedNova,
        }
    }

    #[test]
    fn round_zero_reuses_initial_tau_and_stop_after_k() {
        let mut server = Server::new(adaptive(1), weights(&[1, 1]).unwrap()).unwrap();
        let plan = server.initial_plan(ParamVector::zeros(1));
        let rs = [report(0, 5, &[1.0], &[1.0], None), report(1, 5, &[1.0], &[1.0], None)];
        let out = server.server_round(&plan, &rs).unwrap();
        assert!(out.next_plan.is_none());
        assert_eq!(out.w_next.as_slice(), &[-0.5]);

        let mut server = Server::new(adaptive(3), weights(&[1, 1]).unwrap()).unwrap();
        let out = server.server_round(&plan, &rs).unwrap();
        let next = out.next_plan.unwrap();
        assert_eq!(next.tau_per_client, vec![5, 5]);
        assert_eq!(next.prev_global_grad, Some(pv(&[1.0])));
        assert_eq!(out.record.premise, None);
    }

    #[test]
    fn round_rejects_tau_mismatch_and_missing_estimates() {
        let mut server = Server::new(adaptive(3), weights(&[1, 1]).unwrap()).unwrap();
        let plan = server.initial_plan(ParamVector::zeros(1));
        let rs = [report(0, 4, &[1.0], &[1.0], None), report(1, 5, &[1.0], &[1.0], None)];
        assert!(server.server_round(&plan, &rs).is_err());

        let rs = [report(0, 5, &[1.0], &[1.0], None), report(1, 5, &[1.0], &[1.0], None)];
        let next = server.server_round(&plan, &rs).unwrap().next_plan.unwrap();
        assert!(server.server_round(&next, &rs).is_err());
    }

    #[test]
    fn config_validation() {
        let p = weights(&[1, 1]).unwrap();
        let mut c = adaptive(3);
        c.control = StepControl::Adaptive { alpha: 1.5, max_tau: 50, tau_initial: 5 };
        assert!(matches!(Server::new(c, p.clone()), Err(Error::Config { field, .. }) if field == "alpha"));
        let mut c = adaptive(3);
        c.control = StepControl::Fixed(vec![3]);
        assert!(Server::new(c, p.clone()).is_err());
        assert!(Server::new(adaptive(0), p).is_err());
    }
}
