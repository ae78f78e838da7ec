//! Round messages and the global aggregation rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// Server instruction for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: u32,
    pub tau_per_client: Vec<u32>,
    pub w: ParamVector,
    /// Global gradient at the previous global model; `None` in round 0.
    pub prev_global_grad: Option<ParamVector>,
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tau_per_client.iter().position(|&t| t == 0) {
            return Err(Error::InvalidArgument(format!("client {t} assigned tau = 0")));
        }
        if (self.round == 0) != self.prev_global_grad.is_none() {
            return Err(Error::InvalidArgument(format!(
                "prev_global_grad must be present exactly when round >= 1 (round {})",
                self.round
            )));
        }
        Ok(())
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client_id: usize,
    /// Normalized local direction: the mean of the minibatch gradients.
    pub direction: ParamVector,
    /// Full-shard gradient at the round's starting model.
    pub grad_at_start: ParamVector,
    pub loss_at_start: f64,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub tau_used: u32,
}

/// Aggregation weights `p_i = D_i / D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientWeights(Vec<f64>);

impl ClientWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn weights(shard_sizes: &[usize]) -> Result<ClientWeights> {
    if shard_sizes.is_empty() {
        return Err(Error::Empty("shard sizes"));
    }
    if let Some(i) = shard_sizes.iter().position(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!("client {i} has an empty shard")));
    }
    let total: usize = shard_sizes.iter().sum();
    Ok(ClientWeights(
        shard_sizes.iter().map(|&d| d as f64 / total as f64).collect(),
    ))
}

/// Returns the reports ordered by client id, requiring exactly one per client.
pub fn order_reports(reports: &[ClientReport], n_clients: usize) -> Result<Vec<&ClientReport>> {
    let mut slots: Vec<Option<&ClientReport>> = vec![None; n_clients];
    for r in reports {
        if r.client_id >= n_clients {
            return Err(Error::InvalidArgument(format!(
                "report from unknown client {}",
                r.client_id
            )));
        }
        slots[r.client_id] = Some(r);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or(Error::MissingReport(i)))
        .collect()
}

/// `Σ p_i v_i` reduced in client order.
pub(crate) fn weighted_sum<'a, I>(p: &ClientWeights, vectors: I, dim: usize) -> Result<ParamVector>
where
    I: IntoIterator<Item = &'a ParamVector>,
{
    let mut acc = ParamVector::zeros(dim);
    for (pi, v) in p.as_slice().iter().zip(vectors) {
        acc.add_scaled(*pi, v)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedNovaStep {
    pub w_next: ParamVector,
    /// Effective global step `Σ p_i τ_i`.
    pub tau_k: f64,
    /// Normalized averaged direction `Σ p_i G_i`.
    pub d_k: ParamVector,
}

/// Normalized averaging: `w_next = w_k - eta * tau_k * d_k`.
pub fn aggregate_fednova(
    reports: &[ClientReport],
    p: &ClientWeights,
    eta: f64,
    w_k: &ParamVector,
) -> Result<FedNovaStep> {
    let ordered = order_reports(reports, p.len())?;
    let mut tau_k = 0.0;
    for (pi, r) in p.as_slice().iter().zip(&ordered) {
        tau_k += pi * r.tau_used as f64;
    }
    let d_k = weighted_sum(p, ordered.iter().map(|r| &r.direction), w_k.dim())?;
    let mut w_next = w_k.clone();
    w_next.add_scaled(-(eta * tau_k), &d_k)?;
    Ok(FedNovaStep { w_next, tau_k, d_k })
}

/// Unnormalized local gradient sum, the FedAvg client payload.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSum {
    pub client_id: usize,
    pub tau: u32,
    pub grad_sum: ParamVector,
}

impl LocalSum {
    /// Recovers `Σ_λ ∇F_i` from a normalized report as `τ · G`.
    pub fn from_report(r: &ClientReport) -> Self {
        Self {
            client_id: r.client_id,
            tau: r.tau_used,
            grad_sum: r.direction.scaled(r.tau_used as f64),
        }
    }
}

/// Plain averaging of local gradient sums: `w_next = w_k - eta * Σ p_i S_i`.
/// Only defined when every client ran the same number of local steps.
pub fn aggregate_fedavg(
    sums: &[LocalSum],
    p: &ClientWeights,
    eta: f64,
    w_k: &ParamVector,
) -> Result<ParamVector> {
    let mut slots: Vec<Option<&LocalSum>> = vec![None; p.len()];
    for s in sums {
        if s.client_id >= p.len() {
            return Err(Error::InvalidArgument(format!(
                "sum from unknown client {}",
                s.client_id
            )));
        }
        slots[s.client_id] = Some(s);
    }
    let ordered: Vec<&LocalSum> = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or(Error::MissingReport(i)))
        .collect::<Result<_>>()?;
    let taus: Vec<u32> = ordered.iter().map(|s| s.tau).collect();
    if taus.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::NonUniformTau(taus));
    }
    let avg = weighted_sum(p, ordered.iter().map(|s| &s.grad_sum), w_k.dim())?;
    let mut w_next = w_k.clone();
    w_next.add_scaled(-eta, &avg)?;
    Ok(w_next)
}

/// General accumulation-weighted local direction
/// `G = (1/‖a‖₁) Σ_λ a_λ ∇F(w^λ)`. FedAvg, FedNova and the adaptive method
/// all use `a = [1, ..., 1]`; other weightings are not exercised by the
/// runners.
pub fn accumulated_direction(a: &[f64], grads: &[ParamVector]) -> Result<ParamVector> {
    if a.len() != grads.len() || grads.is_empty() {
        return Err(Error::InvalidArgument(
            "accumulation weights must match the gradient count".into(),
        ));
    }
    let norm: f64 = a.iter().map(|x| x.abs()).sum();
    let mut g = ParamVector::zeros(grads[0].dim());
    for (ai, gi) in a.iter().zip(grads) {
        g.add_scaled(ai / norm, gi)?;
    }
    Ok(g)
}

/// General global step `w_next = w_k - eta Σ p_i ‖a_i‖₁ G_i`.
pub fn generalized_step(
    w_k: &ParamVector,
    eta: f64,
    p: &ClientWeights,
    a_norms: &[f64],
    directions: &[ParamVector],
) -> Result<ParamVector> {
    let mut w_next = w_k.clone();
    for ((pi, an), g) in p.as_slice().iter().zip(a_norms).zip(directions) {
        w_next.add_scaled(-eta * pi * an, g)?;
    }
    Ok(w_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_norm;
    use proptest::prelude::*;

    fn report(id: usize, tau: u32, g: &[f64]) -> ClientReport {
        ClientReport {
            client_id: id,
            direction: ParamVector::new(g.to_vec()),
            grad_at_start: ParamVector::zeros(g.len()),
            loss_at_start: 0.0,
            beta: None,
            delta: None,
            tau_used: tau,
        }
    }

    #[test]
    fn weights_examples() {
        assert_eq!(weights(&[60, 40]).unwrap().as_slice(), &[0.6, 0.4]);
        assert!(weights(&[7; 5]).unwrap().as_slice().iter().all(|&p| p == 0.2));
        assert_eq!(weights(&[1, 1, 2]).unwrap().as_slice(), &[0.25, 0.25, 0.5]);
        assert!(weights(&[3, 0]).is_err());
        let p = weights(&[3, 7, 11, 13]).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn fednova_hand_example() {
        let p = weights(&[1, 1]).unwrap();
        let reports = [report(0, 4, &[1.0, 0.0]), report(1, 2, &[0.0, 1.0])];
        let step = aggregate_fednova(&reports, &p, 0.1, &ParamVector::zeros(2)).unwrap();
        assert_eq!(step.tau_k, 3.0);
        assert_eq!(step.d_k.as_slice(), &[0.5, 0.5]);
        let expected = [-0.15, -0.15];
        for (a, b) in step.w_next.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fednova_zero_directions_keep_model() {
        let p = weights(&[2, 3]).unwrap();
        let w = ParamVector::new(vec![0.3, -1.0]);
        let reports = [report(1, 5, &[0.0, 0.0]), report(0, 2, &[0.0, 0.0])];
        assert_eq!(aggregate_fednova(&reports, &p, 0.01, &w).unwrap().w_next, w);
    }

    #[test]
    fn fednova_missing_report() {
        let p = weights(&[1, 1, 1]).unwrap();
        let reports = [report(0, 1, &[1.0]), report(2, 1, &[1.0])];
        assert!(matches!(
            aggregate_fednova(&reports, &p, 0.1, &ParamVector::zeros(1)),
            Err(Error::MissingReport(1))
        ));
    }

    #[test]
    fn fedavg_examples() {
        let p = weights(&[1]).unwrap();
        let sums = [LocalSum {
            client_id: 0,
            tau: 3,
            grad_sum: ParamVector::new(vec![2.0, 2.0]),
        }];
        let w = aggregate_fedavg(&sums, &p, 0.01, &ParamVector::zeros(2)).unwrap();
        assert_eq!(w.as_slice(), &[-0.02, -0.02]);

        let p = weights(&[1, 1]).unwrap();
        let sums = [
            LocalSum { client_id: 0, tau: 2, grad_sum: ParamVector::zeros(1) },
            LocalSum { client_id: 1, tau: 3, grad_sum: ParamVector::zeros(1) },
        ];
        assert!(matches!(
            aggregate_fedavg(&sums, &p, 0.1, &ParamVector::zeros(1)),
            Err(Error::NonUniformTau(_))
        ));
    }

    #[test]
    fn generalized_rule_with_unit_weights_is_fedavg() {
        let grads = [ParamVector::new(vec![1.0, 2.0]), ParamVector::new(vec![3.0, -2.0])];
        let g = accumulated_direction(&[1.0, 1.0], &grads).unwrap();
        assert_eq!(g.as_slice(), &[2.0, 0.0]);
        let p = weights(&[1, 3]).unwrap();
        let other = ParamVector::new(vec![0.0, 4.0]);
        let w = generalized_step(&ParamVector::zeros(2), 0.1, &p, &[2.0, 2.0], &[g.clone(), other.clone()])
            .unwrap();
        let sums = [
            LocalSum { client_id: 0, tau: 2, grad_sum: g.scaled(2.0) },
            LocalSum { client_id: 1, tau: 2, grad_sum: other.scaled(2.0) },
        ];
        let avg = aggregate_fedavg(&sums, &p, 0.1, &ParamVector::zeros(2)).unwrap();
        assert!(w.max_abs_diff(&avg).unwrap() < 1e-15);
    }

    fn arb_round() -> impl Strategy<Value = (Vec<usize>, u32, Vec<Vec<f64>>)> {
        (1usize..5, 1u32..8, 1usize..6).prop_flat_map(|(n, tau, dim)| {
            (
                proptest::collection::vec(1usize..100, n),
                Just(tau),
                proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, dim), n),
            )
        })
    }

    proptest! {
        #[test]
        fn uniform_tau_fedavg_matches_fednova((sizes, tau, sums) in arb_round()) {
            let p = weights(&sizes).unwrap();
            let dim = sums[0].len();
            let w = ParamVector::new(vec![0.5; dim]);
            let local: Vec<LocalSum> = sums.iter().enumerate().map(|(i, s)| LocalSum {
                client_id: i, tau, grad_sum: ParamVector::new(s.clone()),
            }).collect();
            let reports: Vec<ClientReport> = sums.iter().enumerate().map(|(i, s)| {
                report(i, tau, &s.iter().map(|x| x / tau as f64).collect::<Vec<_>>())
            }).collect();
            let a = aggregate_fedavg(&local, &p, 0.01, &w).unwrap();
            let b = aggregate_fednova(&reports, &p, 0.01, &w).unwrap().w_next;
            prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
        }

        #[test]
        fn arrival_order_does_not_change_result((sizes, tau, sums) in arb_round(), rot in 0usize..5) {
            let p = weights(&sizes).unwrap();
            let dim = sums[0].len();
            let mut reports: Vec<ClientReport> = sums.iter().enumerate()
                .map(|(i, s)| report(i, tau + i as u32, s)).collect();
            let w = ParamVector::zeros(dim);
            let a = aggregate_fednova(&reports, &p, 0.05, &w).unwrap();
            let len = reports.len();
            reports.rotate_left(rot % len);
            reports.reverse();
            let b = aggregate_fednova(&reports, &p, 0.05, &w).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn direction_norm_bounded_by_largest((sizes, tau, sums) in arb_round()) {
            let p = weights(&sizes).unwrap();
            let reports: Vec<ClientReport> = sums.iter().enumerate()
                .map(|(i, s)| report(i, tau, s)).collect();
            let step = aggregate_fednova(&reports, &p, 0.1, &ParamVector::zeros(sums[0].len())).unwrap();
            let max = reports.iter().map(|r| l2_norm(&r.direction)).fold(0.0, f64::max);
            prop_assert!(l2_norm(&step.d_k) <= max * (1.0 + 1e-12));
        }
    }
}
