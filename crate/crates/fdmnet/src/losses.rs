//! Training objectives: filtered-image consistency, the adversarial
//! discriminator/confusion pair, per-modality identity classification,
//! center-cluster structure, and their weighted total.
//!
//! All builders extend a [`Tape`] so every loss is differentiable into its
//! inputs. Probability pairs are validated up front; logs are clamped at
//! [`PROB_FLOOR`] so losses stay finite at the simplex boundary.

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape};

/// Floor applied inside every log so boundary probabilities stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Slack accepted when validating that a probability pair sums to one. Loose
/// enough that finite-difference probes (steps around 1e-5) of loss inputs
/// remain valid.
pub const PROB_TOLERANCE: f64 = 1e-3;

/// Scalar weights of the total objective: lambda1 on consistency, lambda2 on
/// center-cluster, rho the center-separation margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.5,
            rho: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.rho < 0.0 {
            return Err(Error::invalid(format!(
                "loss weights must be nonnegative, got lambda1={} lambda2={} rho={}",
                self.lambda1, self.lambda2, self.rho
            )));
        }
        Ok(())
    }
}

/// Mean over the batch of elementwise L1 distance between paired filtered
/// images: (1/n) sum_i ||a_i - b_i||_1.
pub fn consistency_loss(tape: &mut Tape, a: &[NodeId], b: &[NodeId]) -> Result<NodeId> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "consistency loss needs equal nonempty batches, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        let diff = tape.sub(x, y)?;
        let mag = tape.abs(diff);
        per_sample.push(tape.sum(mag));
    }
    tape.mean_scalars(&per_sample)
}

fn validate_probability_pair(tape: &Tape, pred: NodeId) -> Result<()> {
    let v = tape.value(pred);
    if v.shape() != [2] {
        return Err(Error::shape(format!(
            "prediction must be a probability pair [2], got {:?}",
            v.shape()
        )));
    }
    let (p0, p1) = (v.data()[0], v.data()[1]);
    let sum = p0 + p1;
    if !(p0 >= 0.0 && p1 >= 0.0 && (sum - 1.0).abs() <= PROB_TOLERANCE) {
        return Err(Error::invalid(format!(
            "prediction [{p0}, {p1}] is not a probability pair (sum {sum})"
        )));
    }
    Ok(())
}

/// Cross-entropy of modality predictions against real one-hot modality
/// labels: -(1/(n+m)) sum_i log p(modality_i).
pub fn discriminator_loss(
    tape: &mut Tape,
    preds: &[NodeId],
    labels: &[Modality],
) -> Result<NodeId> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::invalid(format!(
            "discriminator loss needs equal nonempty preds/labels, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(preds.len());
    for (&pred, &label) in preds.iter().zip(labels) {
        validate_probability_pair(tape, pred)?;
        let index = match label {
            Modality::Visible => 0,
            Modality::Infrared => 1,
        };
        let p = tape.pick(pred, index)?;
        terms.push(tape.ln_clamped(p, PROB_FLOOR));
    }
    let mean = tape.mean_scalars(&terms)?;
    Ok(tape.scale(mean, -1.0))
}

/// Cross-entropy of modality predictions against the fake uniform label
/// [0.5, 0.5]; minimized (at log 2) exactly when the discriminator cannot
/// tell modalities apart.
pub fn confusion_loss(tape: &mut Tape, preds: &[NodeId]) -> Result<NodeId> {
    if preds.is_empty() {
        return Err(Error::invalid("confusion loss needs a nonempty batch"));
    }
    let mut terms = Vec::with_capacity(preds.len());
    for &pred in preds {
        validate_probability_pair(tape, pred)?;
        let p0 = tape.pick(pred, 0)?;
        let p1 = tape.pick(pred, 1)?;
        let l0 = tape.ln_clamped(p0, PROB_FLOOR);
        let l1 = tape.ln_clamped(p1, PROB_FLOOR);
        let both = tape.add(l0, l1)?;
        terms.push(tape.scale(both, 0.5));
    }
    let mean = tape.mean_scalars(&terms)?;
    Ok(tape.scale(mean, -1.0))
}

/// Identity classification: per-modality mean cross-entropy over the shared
/// classifier's logits, summed across the two modality terms.
pub fn identity_loss(
    tape: &mut Tape,
    logits_visible: &[NodeId],
    labels_visible: &[usize],
    logits_infrared: &[NodeId],
    labels_infrared: &[usize],
) -> Result<NodeId> {
    let v = cross_entropy_mean(tape, logits_visible, labels_visible)?;
    let i = cross_entropy_mean(tape, logits_infrared, labels_infrared)?;
    tape.add(v, i)
}

/// Mean cross-entropy `-(1/n) sum log softmax(logits)[label]` over a batch
/// of logit vectors.
pub fn cross_entropy_mean(
    tape: &mut Tape,
    logits: &[NodeId],
    labels: &[usize],
) -> Result<NodeId> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::invalid(format!(
            "identity loss needs equal nonempty logits/labels per modality, got {} and {}",
            logits.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(logits.len());
    for (&node, &label) in logits.iter().zip(labels) {
        let classes = tape.value(node).numel();
        if label >= classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let log_probs = tape.log_softmax(node)?;
        terms.push(tape.pick(log_probs, label)?);
    }
    let mean = tape.mean_scalars(&terms)?;
    Ok(tape.scale(mean, -1.0))
}

/// Center-cluster loss: mean distance of each feature to its identity's
/// batch center, plus the mean margin hinge [rho - ||c_k - c_j||]_+ over
/// distinct center pairs. A single identity contributes no pair term.
pub fn center_cluster_loss(
    tape: &mut Tape,
    features: &[NodeId],
    labels: &[usize],
    rho: f64,
) -> Result<NodeId> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invalid(format!(
            "center-cluster loss needs equal nonempty features/labels, got {} and {}",
            features.len(),
            labels.len()
        )));
    }
    let dim = tape.value(features[0]).shape().to_vec();
    for &f in features {
        if tape.shape(f) != dim {
            return Err(Error::shape("center-cluster features must share a shape"));
        }
    }

    // batch-local identity centers, in first-appearance order
    let mut identities: Vec<usize> = Vec::new();
    for &label in labels {
        if !identities.contains(&label) {
            identities.push(label);
        }
    }
    let mut centers = Vec::with_capacity(identities.len());
    for &identity in &identities {
        let members: Vec<NodeId> = features
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == identity)
            .map(|(&f, _)| f)
            .collect();
        let mut acc = members[0];
        for &m in &members[1..] {
            acc = tape.add(acc, m)?;
        }
        centers.push(tape.scale(acc, 1.0 / members.len() as f64));
    }

    let mut to_center = Vec::with_capacity(features.len());
    for (&f, &label) in features.iter().zip(labels) {
        let center = centers[identities.iter().position(|&i| i == label).unwrap()];
        to_center.push(euclidean_distance(tape, f, center)?);
    }
    let term1 = tape.mean_scalars(&to_center)?;

    if identities.len() < 2 {
        return Ok(term1);
    }
    let mut hinges = Vec::new();
    for k in 0..centers.len() {
        for j in k + 1..centers.len() {
            let dist = euclidean_distance(tape, centers[k], centers[j])?;
            let margin = tape.scalar_const(rho);
            let gap = tape.sub(margin, dist)?;
            hinges.push(tape.relu(gap));
        }
    }
    let term2 = tape.mean_scalars(&hinges)?;
    tape.add(term1, term2)
}

fn euclidean_distance(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.sqrt(total))
}

/// Weighted total objective: extractor_confusion + identity
/// + lambda1 * consistency + lambda2 * center_cluster. The discriminator's
/// own loss is optimized separately and is not a summand.
pub fn total_loss(
    tape: &mut Tape,
    confusion: NodeId,
    identity: NodeId,
    consistency: NodeId,
    center_cluster: NodeId,
    weights: &LossWeights,
) -> Result<NodeId> {
    weights.validate()?;
    let con = tape.scale(consistency, weights.lambda1);
    let cc = tape.scale(center_cluster, weights.lambda2);
    let a = tape.add(confusion, identity)?;
    let b = tape.add(con, cc)?;
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn leaf(tape: &mut Tape, data: Vec<f64>) -> NodeId {
        let n = data.len();
        tape.leaf(&Tensor::new(vec![n], data).unwrap())
    }

    #[test]
    fn consistency_hand_value_and_symmetry() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::full(&[2, 2, 1], 0.75));
        let b = tape.leaf(&Tensor::full(&[2, 2, 1], 0.25));
        let ab = consistency_loss(&mut tape, &[a], &[b]).unwrap();
        assert!((tape.value(ab).item() - 2.0).abs() < 1e-12);
        let ba = consistency_loss(&mut tape, &[b], &[a]).unwrap();
        assert_eq!(tape.value(ab).item(), tape.value(ba).item());
        let same = consistency_loss(&mut tape, &[a], &[a]).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
    }

    #[test]
    fn discriminator_hand_values() {
        let mut tape = Tape::new();
        let uniform = leaf(&mut tape, vec![0.5, 0.5]);
        let loss = discriminator_loss(&mut tape, &[uniform], &[Modality::Visible]).unwrap();
        assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);

        let a = leaf(&mut tape, vec![0.9, 0.1]);
        let b = leaf(&mut tape, vec![0.2, 0.8]);
        let loss = discriminator_loss(
            &mut tape,
            &[a, b],
            &[Modality::Visible, Modality::Infrared],
        )
        .unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);

        let confident = leaf(&mut tape, vec![1.0 - 1e-12, 1e-12]);
        let loss = discriminator_loss(&mut tape, &[confident], &[Modality::Visible]).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-9);
    }

    #[test]
    fn discriminator_rejects_unnormalized_pred() {
        let mut tape = Tape::new();
        let bad = leaf(&mut tape, vec![0.9, 0.3]);
        assert!(discriminator_loss(&mut tape, &[bad], &[Modality::Visible]).is_err());
        let negative = leaf(&mut tape, vec![-0.1, 1.1]);
        assert!(discriminator_loss(&mut tape, &[negative], &[Modality::Visible]).is_err());
    }

    #[test]
    fn confusion_hand_values_and_symmetry() {
        let mut tape = Tape::new();
        let uniform = leaf(&mut tape, vec![0.5, 0.5]);
        let loss = confusion_loss(&mut tape, &[uniform]).unwrap();
        assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);

        let skewed = leaf(&mut tape, vec![0.9, 0.1]);
        let loss = confusion_loss(&mut tape, &[skewed]).unwrap();
        let expected = -0.5 * (0.9f64.ln() + 0.1f64.ln());
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);

        let swapped = leaf(&mut tape, vec![0.1, 0.9]);
        let loss_swapped = confusion_loss(&mut tape, &[swapped]).unwrap();
        assert!((tape.value(loss).item() - tape.value(loss_swapped).item()).abs() < 1e-15);
    }

    #[test]
    fn identity_hand_values() {
        let mut tape = Tape::new();
        let v = leaf(&mut tape, vec![2.0, 0.0]);
        let i = leaf(&mut tape, vec![0.0, 1.0]);
        let loss = identity_loss(&mut tape, &[v], &[0], &[i], &[0]).unwrap();
        let expected = -(2.0f64.exp() / (2.0f64.exp() + 1.0)).ln()
            - (1.0 / (1.0 + 1.0f64.exp())).ln();
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
        assert!((tape.value(loss).item() - 1.440190).abs() < 1e-6);

        let uv = leaf(&mut tape, vec![0.0; 4]);
        let ui = leaf(&mut tape, vec![0.0; 4]);
        let loss = identity_loss(&mut tape, &[uv], &[3], &[ui], &[1]).unwrap();
        assert!((tape.value(loss).item() - 2.0 * 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let v = leaf(&mut tape, vec![1.0, 2.0]);
        let i = leaf(&mut tape, vec![1.0, 2.0]);
        assert!(identity_loss(&mut tape, &[v], &[2], &[i], &[0]).is_err());
    }

    #[test]
    fn center_cluster_hand_values() {
        // two identities, one feature each sitting exactly at its center,
        // centers 0.6 apart with margin 1.0: loss = 1.0 - 0.6
        let mut tape = Tape::new();
        let f0 = leaf(&mut tape, vec![0.0, 0.0]);
        let f1 = leaf(&mut tape, vec![0.6, 0.0]);
        let loss = center_cluster_loss(&mut tape, &[f0, f1], &[0, 1], 1.0).unwrap();
        assert!((tape.value(loss).item() - 0.4).abs() < 1e-12);

        // single identity, two features symmetric about the center at
        // distance 2 from each other: term1 = 1, no pair term
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![-1.0, 0.0]);
        let b = leaf(&mut tape, vec![1.0, 0.0]);
        let loss = center_cluster_loss(&mut tape, &[a, b], &[7, 7], 1.0).unwrap();
        assert!((tape.value(loss).item() - 1.0).abs() < 1e-12);

        // everything at its center and centers far apart: exactly zero
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![0.0, 0.0]);
        let b = leaf(&mut tape, vec![5.0, 0.0]);
        let loss = center_cluster_loss(&mut tape, &[a, b], &[0, 1], 1.0).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn center_cluster_is_permutation_invariant() {
        let feats = [
            vec![0.3, -0.2],
            vec![1.1, 0.4],
            vec![-0.5, 0.9],
            vec![0.8, 0.8],
        ];
        let labels = [0usize, 1, 0, 2];
        let eval = |order: &[usize]| {
            let mut tape = Tape::new();
            let nodes: Vec<NodeId> = order
                .iter()
                .map(|&k| leaf(&mut tape, feats[k].clone()))
                .collect();
            let perm_labels: Vec<usize> = order.iter().map(|&k| labels[k]).collect();
            let loss = center_cluster_loss(&mut tape, &nodes, &perm_labels, 2.0).unwrap();
            tape.value(loss).item()
        };
        let base = eval(&[0, 1, 2, 3]);
        for order in [[3, 1, 0, 2], [2, 3, 1, 0], [1, 0, 3, 2]] {
            assert!((eval(&order) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn total_combines_with_weights() {
        let mut tape = Tape::new();
        let le = tape.scalar_const(0.7);
        let lid = tape.scalar_const(1.4);
        let lcon = tape.scalar_const(2.0);
        let lcc = tape.scalar_const(1.0);
        let weights = LossWeights {
            lambda1: 0.5,
            lambda2: 0.25,
            rho: 1.0,
        };
        let total = total_loss(&mut tape, le, lid, lcon, lcc, &weights).unwrap();
        assert!((tape.value(total).item() - 3.35).abs() < 1e-12);

        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            rho: 1.0,
        };
        let total = total_loss(&mut tape, le, lid, lcon, lcc, &zero).unwrap();
        assert!((tape.value(total).item() - 2.1).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative_on_random_valid_inputs() {
        let mut state = 11u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let mut tape = Tape::new();
            let p = next() * 0.98 + 0.01;
            let pred = leaf(&mut tape, vec![p, 1.0 - p]);
            let d = discriminator_loss(&mut tape, &[pred], &[Modality::Infrared]).unwrap();
            assert!(tape.value(d).item() >= 0.0);
            let c = confusion_loss(&mut tape, &[pred]).unwrap();
            assert!(tape.value(c).item() >= 2.0f64.ln() - 1e-12);
            let logits = leaf(&mut tape, vec![next(), next(), next()]);
            let i = identity_loss(&mut tape, &[logits], &[1], &[logits], &[1]).unwrap();
            assert!(tape.value(i).item() >= 0.0);
            let f0 = leaf(&mut tape, vec![next(), next()]);
            let f1 = leaf(&mut tape, vec![next(), next()]);
            let cc = center_cluster_loss(&mut tape, &[f0, f1], &[0, 1], 1.0).unwrap();
            assert!(tape.value(cc).item() >= 0.0);
        }
    }
}
