//! Alternating adversarial training loop.
//!
//! Each step runs two phases on fresh tapes. Phase A forwards the batch,
//! detaches the pooled embeddings, trains the discriminator on them, and
//! steps only its parameters. Phase B recomputes the forward pass, combines
//! confusion, identity, consistency, and center-cluster terms, and steps the
//! filter and extractor while the discriminator stays frozen. Batch norm
//! running statistics are refreshed after every train-mode forward.

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, Dataset, Modality, Split};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::model::{ForwardOutput, Model};
use crate::tensor::{NodeId, ParamId, Sgd, Tape, Tensor};

/// Epoch count, learning-rate decay, and batch composition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub base_lr: f64,
    /// Fractions of the epoch budget after which the rate decays once more.
    pub milestones: Vec<f64>,
    pub lr_decay: f64,
    /// Identities per batch (P).
    pub batch_identities: usize,
    /// Images per identity per modality (K).
    pub images_per_modality: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 40,
            base_lr: 0.01,
            milestones: vec![0.2, 0.5],
            lr_decay: 0.1,
            batch_identities: 4,
            images_per_modality: 2,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("schedule needs at least one epoch"));
        }
        if self.base_lr < 0.0 || !self.base_lr.is_finite() {
            return Err(Error::invalid("base learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.lr_decay) || self.lr_decay <= 0.0 {
            return Err(Error::invalid("decay factor must be in (0, 1)"));
        }
        let increasing = self
            .milestones
            .windows(2)
            .all(|w| w[0] < w[1]);
        let in_range = self.milestones.iter().all(|m| (0.0..1.0).contains(m) && *m > 0.0);
        if !increasing || !in_range {
            return Err(Error::invalid(
                "milestones must be strictly increasing fractions in (0, 1)",
            ));
        }
        if self.batch_identities * self.images_per_modality < 2 {
            return Err(Error::invalid("batch needs P*K >= 2"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::invalid("bad momentum or weight decay"));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch: the base rate times one decay
    /// factor per milestone already passed.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| (m * self.epochs as f64).floor() < epoch as f64)
            .count();
        self.base_lr * self.lr_decay.powi(passed as i32)
    }
}

/// One training image with its classifier label (index into train identities).
pub struct BatchItem {
    pub image: Tensor,
    pub label: usize,
}

/// P identities times K images per modality, flip augmentation applied.
pub struct Batch {
    pub visible: Vec<BatchItem>,
    pub infrared: Vec<BatchItem>,
}

/// Loss values and discriminator accuracy from one alternating step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub l_id: f64,
    pub l_cc: f64,
    pub l_con: f64,
    pub l_e: f64,
    pub l_m: f64,
    pub disc_acc: f64,
}

/// Per-epoch averages plus the rate used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_id: f64,
    pub l_cc: f64,
    pub l_con: f64,
    pub l_e: f64,
    pub l_m: f64,
    pub disc_acc: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,L_id,L_cc,L_con,L_e,L_m,disc_acc,lr";

/// Full fit outcome: per-epoch metrics and the rendered CSV log.
pub struct FitReport {
    pub epochs: Vec<EpochMetrics>,
    pub log_csv: String,
}

pub struct Trainer {
    pub model: Model,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    /// When on, grayscale copies also contribute identity-loss terms; the
    /// guidance images otherwise feed only the consistency term.
    pub gray_identity_loss: bool,
    opt: Sgd,
    rng: ChaCha8Rng,
    /// Per label, per modality (visible = 0), the train images of that
    /// identity.
    pools: Vec<[Vec<Tensor>; 2]>,
    theta_a: Vec<ParamId>,
    theta_e: Vec<ParamId>,
    theta_m: Vec<ParamId>,
}

impl Trainer {
    /// Binds a model to a dataset's train split. The model's classifier
    /// width must match the number of train identities.
    pub fn new(
        model: Model,
        dataset: &Dataset,
        schedule: TrainSchedule,
        weights: LossWeights,
        seed: u64,
    ) -> Result<Trainer> {
        schedule.validate()?;
        weights.validate()?;
        let mut ids: Vec<usize> = dataset
            .samples_in(Split::Train)
            .map(|s| s.identity)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != model.cfg.num_identities {
            return Err(Error::invalid(format!(
                "model classifies {} identities but the train split has {}",
                model.cfg.num_identities,
                ids.len()
            )));
        }
        let mut pools: Vec<[Vec<Tensor>; 2]> = ids.iter().map(|_| [Vec::new(), Vec::new()]).collect();
        for s in dataset.samples_in(Split::Train) {
            let label = ids.binary_search(&s.identity).expect("identity listed above");
            let m = match s.modality {
                Modality::Visible => 0,
                Modality::Infrared => 1,
            };
            pools[label][m].push(s.image.clone());
        }
        let k = schedule.images_per_modality;
        if ids.len() < schedule.batch_identities {
            return Err(Error::Dataset(format!(
                "need {} identities per batch, train split has {}",
                schedule.batch_identities,
                ids.len()
            )));
        }
        for (label, pool) in pools.iter().enumerate() {
            if pool[0].len() < k || pool[1].len() < k {
                return Err(Error::Dataset(format!(
                    "identity {label} has {}/{} visible/infrared images, need {k} of each",
                    pool[0].len(),
                    pool[1].len()
                )));
            }
        }
        let opt = Sgd::new(schedule.base_lr, schedule.momentum, schedule.weight_decay);
        let partitions = model.partitions();
        Ok(Trainer {
            model,
            schedule,
            weights,
            gray_identity_loss: false,
            opt,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pools,
            theta_a: partitions.theta_a,
            theta_e: partitions.theta_e,
            theta_m: partitions.theta_m,
        })
    }

    /// Batches that make up one pass over the train images.
    pub fn steps_per_epoch(&self) -> usize {
        let total: usize = self.pools.iter().map(|p| p[0].len() + p[1].len()).sum();
        let batch = 2 * self.schedule.batch_identities * self.schedule.images_per_modality;
        total.div_ceil(batch).max(1)
    }

    /// Draws P identities without replacement, then K visible and K infrared
    /// images per identity without replacement, each flipped with
    /// probability one half.
    pub fn sample_batch(&mut self) -> Result<Batch> {
        let p = self.schedule.batch_identities;
        let k = self.schedule.images_per_modality;
        let mut order: Vec<usize> = (0..self.pools.len()).collect();
        for i in 0..p {
            let j = self.rng.gen_range(i..order.len());
            order.swap(i, j);
        }
        let mut visible = Vec::with_capacity(p * k);
        let mut infrared = Vec::with_capacity(p * k);
        for &label in &order[..p] {
            for (m, out) in [(0, &mut visible), (1, &mut infrared)] {
                let pool = &self.pools[label][m];
                let mut picks: Vec<usize> = (0..pool.len()).collect();
                for i in 0..k {
                    let j = self.rng.gen_range(i..picks.len());
                    picks.swap(i, j);
                }
                for &idx in &picks[..k] {
                    let image = if self.rng.gen_bool(0.5) {
                        data::flip_horizontal(&pool[idx])?
                    } else {
                        pool[idx].clone()
                    };
                    out.push(BatchItem { image, label });
                }
            }
        }
        Ok(Batch { visible, infrared })
    }

    fn guard_finite_params(&self, context: &str) -> Result<()> {
        let mut dump = String::new();
        for (_, entry) in self.model.store.iter() {
            if !entry.tensor.all_finite() {
                let (mut lo, mut hi, mut bad) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
                for &v in entry.tensor.data() {
                    if v.is_finite() {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    } else {
                        bad += 1;
                    }
                }
                let _ = writeln!(
                    dump,
                    "  {}: {} non-finite of {} values, finite range [{lo:.3e}, {hi:.3e}]",
                    entry.name,
                    bad,
                    entry.tensor.numel()
                );
            }
        }
        if dump.is_empty() {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "non-finite parameters {context}:\n{dump}"
            )))
        }
    }

    fn guard_finite_losses(&self, pairs: &[(&str, f64)]) -> Result<()> {
        let bad: Vec<String> = pairs
            .iter()
            .filter(|(_, v)| !v.is_finite())
            .map(|(n, v)| format!("{n} = {v}"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "non-finite losses, aborting: {}",
                bad.join(", ")
            )))
        }
    }

    /// Forward everything in one call: visible, then infrared, then (when
    /// guidance is on) grayscale copies of the visible images. Only the
    /// visible and infrared images define batch statistics; the copies are
    /// normalized against those statistics without shifting them.
    fn forward_batch(
        &self,
        tape: &mut Tape,
        batch: &Batch,
    ) -> Result<(ForwardOutput, usize, usize, usize)> {
        let guidance = self.model.cfg.toggles.grayscale_guidance;
        let mut nodes = Vec::new();
        for item in batch.visible.iter().chain(&batch.infrared) {
            nodes.push(tape.leaf(&item.image));
        }
        let primary = nodes.len();
        let mut gray = 0;
        if guidance {
            for item in &batch.visible {
                nodes.push(tape.leaf(&data::to_grayscale(&item.image)?));
                gray += 1;
            }
        }
        let out = self
            .model
            .forward_with_primary(tape, &nodes, primary, true)?;
        Ok((out, batch.visible.len(), batch.infrared.len(), gray))
    }

    /// Phase A: train the discriminator on detached embeddings, stepping
    /// only its parameters. Returns its loss and batch accuracy.
    pub fn phase_a(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        self.guard_finite_params("before the discriminator step")?;
        let mut tape = Tape::new();
        let (out, nv, ni, _) = self.forward_batch(&mut tape, batch)?;
        let mut detached = Vec::with_capacity(nv + ni);
        let mut labels = Vec::with_capacity(nv + ni);
        for (i, &e) in out.embeddings.iter().take(nv + ni).enumerate() {
            let values = tape.value(e).clone();
            detached.push(tape.constant(values));
            labels.push(if i < nv {
                Modality::Visible
            } else {
                Modality::Infrared
            });
        }
        let preds = self.model.discriminate(&mut tape, &detached)?;
        let loss = losses::discriminator_loss(&mut tape, &preds, &labels)?;
        let l_m = tape.value(loss).item();
        let correct = preds
            .iter()
            .zip(&labels)
            .filter(|(&p, &l)| {
                let d = tape.value(p).data();
                let said_infrared = d[1] > d[0];
                said_infrared == (l == Modality::Infrared)
            })
            .count();
        let disc_acc = correct as f64 / (nv + ni) as f64;
        self.guard_finite_losses(&[("L_m", l_m)])?;

        tape.backward(loss)?;
        self.model.store.zero_grads();
        tape.accumulate_param_grads(&mut self.model.store);
        let ids = self.theta_m.clone();
        self.opt.step(&mut self.model.store, &ids)?;
        self.model.store.zero_grads();
        self.model.update_running_stats(&tape, &out);
        Ok((l_m, disc_acc))
    }

    /// Builds the Phase B graph: total loss plus the individual terms
    /// (confusion, identity, consistency, center-cluster).
    fn phase_b_loss(
        &self,
        tape: &mut Tape,
        batch: &Batch,
    ) -> Result<(NodeId, [f64; 4], ForwardOutput)> {
        let (out, nv, ni, ng) = self.forward_batch(tape, batch)?;
        let toggles = self.model.cfg.toggles;

        let vis_labels: Vec<usize> = batch.visible.iter().map(|b| b.label).collect();
        let inf_labels: Vec<usize> = batch.infrared.iter().map(|b| b.label).collect();
        let mut identity = losses::identity_loss(
            tape,
            &out.logits[..nv],
            &vis_labels,
            &out.logits[nv..nv + ni],
            &inf_labels,
        )?;
        if self.gray_identity_loss && ng > 0 {
            let gray_ce = losses::cross_entropy_mean(
                tape,
                &out.logits[nv + ni..],
                &vis_labels[..ng],
            )?;
            identity = tape.add(identity, gray_ce)?;
        }

        let mut all_labels = vis_labels;
        all_labels.extend(inf_labels);
        let cc = losses::center_cluster_loss(
            tape,
            &out.embeddings[..nv + ni],
            &all_labels,
            self.weights.rho,
        )?;

        let consistency = if toggles.grayscale_guidance && ng > 0 {
            losses::consistency_loss(
                tape,
                &out.filtered[..ng],
                &out.filtered[nv + ni..nv + ni + ng],
            )?
        } else {
            tape.scalar_const(0.0)
        };

        let confusion = if toggles.mal {
            let live: Vec<NodeId> = out.embeddings[..nv + ni].to_vec();
            let preds = self.model.discriminate(tape, &live)?;
            losses::confusion_loss(tape, &preds)?
        } else {
            tape.scalar_const(0.0)
        };

        let total = losses::total_loss(tape, confusion, identity, consistency, cc, &self.weights)?;
        let parts = [
            tape.value(confusion).item(),
            tape.value(identity).item(),
            tape.value(consistency).item(),
            tape.value(cc).item(),
        ];
        Ok((total, parts, out))
    }

    /// Phase B: step the filter and extractor against the combined
    /// objective; the discriminator stays frozen.
    pub fn phase_b(&mut self, batch: &Batch) -> Result<[f64; 4]> {
        self.guard_finite_params("before the extractor step")?;
        let mut tape = Tape::new();
        let (total, parts, out) = self.phase_b_loss(&mut tape, batch)?;
        self.guard_finite_losses(&[
            ("L_e", parts[0]),
            ("L_id", parts[1]),
            ("L_con", parts[2]),
            ("L_cc", parts[3]),
        ])?;
        tape.backward(total)?;
        self.model.store.zero_grads();
        tape.accumulate_param_grads(&mut self.model.store);
        let mut ids = self.theta_a.clone();
        ids.extend(&self.theta_e);
        self.opt.step(&mut self.model.store, &ids)?;
        self.model.store.zero_grads();
        self.model.update_running_stats(&tape, &out);
        Ok(parts)
    }

    /// One alternating step: Phase A (skipped with the adversarial branch
    /// off), then Phase B.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let (l_m, disc_acc) = if self.model.cfg.toggles.mal {
            self.phase_a(batch)?
        } else {
            (0.0, 0.0)
        };
        let [l_e, l_id, l_con, l_cc] = self.phase_b(batch)?;
        Ok(StepMetrics {
            l_id,
            l_cc,
            l_con,
            l_e,
            l_m,
            disc_acc,
        })
    }

    /// Runs the full schedule. When `out_dir` is given, writes `log.csv`,
    /// one checkpoint directory per epoch, and `checkpoint_final`.
    pub fn fit(&mut self, out_dir: Option<&Path>) -> Result<FitReport> {
        let mut epochs = Vec::with_capacity(self.schedule.epochs);
        let mut log_csv = String::from(LOG_HEADER);
        log_csv.push('\n');
        let steps = self.steps_per_epoch();
        for epoch in 1..=self.schedule.epochs {
            self.opt.lr = self.schedule.lr_at_epoch(epoch);
            let mut sums = StepMetrics {
                l_id: 0.0,
                l_cc: 0.0,
                l_con: 0.0,
                l_e: 0.0,
                l_m: 0.0,
                disc_acc: 0.0,
            };
            for _ in 0..steps {
                let batch = self.sample_batch()?;
                let m = self.train_step(&batch)?;
                sums.l_id += m.l_id;
                sums.l_cc += m.l_cc;
                sums.l_con += m.l_con;
                sums.l_e += m.l_e;
                sums.l_m += m.l_m;
                sums.disc_acc += m.disc_acc;
            }
            let n = steps as f64;
            let row = EpochMetrics {
                epoch,
                l_id: sums.l_id / n,
                l_cc: sums.l_cc / n,
                l_con: sums.l_con / n,
                l_e: sums.l_e / n,
                l_m: sums.l_m / n,
                disc_acc: sums.disc_acc / n,
                lr: self.opt.lr,
            };
            let _ = writeln!(
                log_csv,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                row.epoch, row.l_id, row.l_cc, row.l_con, row.l_e, row.l_m, row.disc_acc, row.lr
            );
            if let Some(dir) = out_dir {
                let ckpt = dir.join(format!("checkpoint_epoch_{epoch:03}"));
                self.model.save_checkpoint(&ckpt)?;
            }
            epochs.push(row);
        }
        if let Some(dir) = out_dir {
            self.model.save_checkpoint(&dir.join("checkpoint_final"))?;
            std::fs::write(dir.join("log.csv"), &log_csv)
                .map_err(|e| Error::io(dir.join("log.csv"), e))?;
        }
        Ok(FitReport { epochs, log_csv })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticDatasetSpec;
    use crate::model::ModelConfig;

    fn tiny_dataset() -> Dataset {
        let spec = SyntheticDatasetSpec {
            train_identities: 4,
            test_identities: 1,
            images_per_modality: 3,
            height: 16,
            width: 8,
            ..SyntheticDatasetSpec::default()
        };
        Dataset::generate(&spec).unwrap()
    }

    fn tiny_trainer(seed: u64) -> Trainer {
        let ds = tiny_dataset();
        let cfg = ModelConfig {
            stage_channels: vec![4, 6, 8],
            num_identities: 4,
            disc_hidden: 6,
            ..ModelConfig::default()
        };
        let model = Model::new(&cfg, seed).unwrap();
        let schedule = TrainSchedule {
            epochs: 2,
            batch_identities: 2,
            images_per_modality: 2,
            ..TrainSchedule::default()
        };
        Trainer::new(model, &ds, schedule, LossWeights::default(), seed).unwrap()
    }

    #[test]
    fn lr_schedule_matches_fractional_milestones() {
        let s = TrainSchedule {
            epochs: 100,
            base_lr: 0.1,
            milestones: vec![0.2, 0.5],
            ..TrainSchedule::default()
        };
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12 * b.abs().max(1.0);
        assert!(close(s.lr_at_epoch(1), 0.1));
        assert!(close(s.lr_at_epoch(20), 0.1));
        assert!(close(s.lr_at_epoch(21), 0.01));
        assert!(close(s.lr_at_epoch(50), 0.01));
        assert!(close(s.lr_at_epoch(51), 0.001));
        assert!(close(s.lr_at_epoch(100), 0.001));
    }

    #[test]
    fn schedule_validation_rejects_bad_milestones() {
        let mut s = TrainSchedule::default();
        s.milestones = vec![0.5, 0.2];
        assert!(s.validate().is_err());
        s.milestones = vec![0.2, 1.0];
        assert!(s.validate().is_err());
        s.milestones = vec![];
        assert!(s.validate().is_ok());
    }

    #[test]
    fn batch_has_k_per_identity_per_modality() {
        let mut t = tiny_trainer(5);
        let b = t.sample_batch().unwrap();
        assert_eq!(b.visible.len(), 4);
        assert_eq!(b.infrared.len(), 4);
        let mut v_counts = [0usize; 4];
        let mut i_counts = [0usize; 4];
        for item in &b.visible {
            v_counts[item.label] += 1;
        }
        for item in &b.infrared {
            i_counts[item.label] += 1;
        }
        for label in 0..4 {
            assert_eq!(v_counts[label], i_counts[label]);
            assert!(v_counts[label] == 0 || v_counts[label] == 2);
        }
        assert_eq!(v_counts.iter().filter(|&&c| c == 2).count(), 2);
    }

    #[test]
    fn identities_are_sampled_uniformly() {
        // 4000 draws of 2 of 4 identities: each expected 2000 times with
        // sigma = sqrt(4000 * 0.5 * 0.5) ~ 31.6
        let mut t = tiny_trainer(11);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            let b = t.sample_batch().unwrap();
            let mut seen = [false; 4];
            for item in &b.visible {
                seen[item.label] = true;
            }
            for (c, s) in counts.iter_mut().zip(seen) {
                *c += s as usize;
            }
        }
        for &c in &counts {
            assert!(
                (c as f64 - 2000.0).abs() <= 3.0 * 31.7,
                "identity frequency {c} outside 3 sigma of uniform"
            );
        }
    }

    #[test]
    fn zero_lr_step_changes_nothing() {
        let mut t = tiny_trainer(7);
        t.schedule.base_lr = 0.0;
        t.opt.lr = 0.0;
        let all: Vec<ParamId> = t.model.store.ids().collect();
        let before = t.model.store.checksum(&all);
        let batch = t.sample_batch().unwrap();
        t.train_step(&batch).unwrap();
        assert_eq!(before, t.model.store.checksum(&all));
    }

    #[test]
    fn phases_touch_only_their_partitions() {
        let mut t = tiny_trainer(9);
        let batch = t.sample_batch().unwrap();
        let (a, e, m) = (t.theta_a.clone(), t.theta_e.clone(), t.theta_m.clone());
        let (ca, ce, cm) = (
            t.model.store.checksum(&a),
            t.model.store.checksum(&e),
            t.model.store.checksum(&m),
        );
        t.phase_a(&batch).unwrap();
        assert_eq!(ca, t.model.store.checksum(&a), "phase A must not move the filter");
        assert_eq!(ce, t.model.store.checksum(&e), "phase A must not move the extractor");
        assert_ne!(cm, t.model.store.checksum(&m), "phase A must move the discriminator");
        let cm2 = t.model.store.checksum(&m);
        t.phase_b(&batch).unwrap();
        assert_ne!(ca, t.model.store.checksum(&a), "phase B must move the filter");
        assert_ne!(ce, t.model.store.checksum(&e), "phase B must move the extractor");
        assert_eq!(cm2, t.model.store.checksum(&m), "phase B must not move the discriminator");
    }

    #[test]
    fn phase_a_descends_on_a_fixed_batch() {
        let mut t = tiny_trainer(13);
        t.opt.lr = 1e-3;
        t.schedule.base_lr = 1e-3;
        let batch = t.sample_batch().unwrap();
        let (before, _) = t.phase_a(&batch).unwrap();
        let (after, _) = t.phase_a(&batch).unwrap();
        assert!(
            after < before,
            "discriminator loss must fall on the same batch: {before} -> {after}"
        );
    }

    #[test]
    fn mal_off_never_touches_a_discriminator_and_reports_zero() {
        let ds = tiny_dataset();
        let cfg = ModelConfig {
            stage_channels: vec![4, 6, 8],
            num_identities: 4,
            toggles: crate::model::Toggles {
                mal: false,
                ..Default::default()
            },
            ..ModelConfig::default()
        };
        let model = Model::new(&cfg, 3).unwrap();
        let schedule = TrainSchedule {
            epochs: 1,
            batch_identities: 2,
            images_per_modality: 2,
            ..TrainSchedule::default()
        };
        let mut t = Trainer::new(model, &ds, schedule, LossWeights::default(), 3).unwrap();
        assert!(t.theta_m.is_empty());
        let batch = t.sample_batch().unwrap();
        let m = t.train_step(&batch).unwrap();
        assert_eq!(m.l_m, 0.0);
        assert_eq!(m.l_e, 0.0);
        assert_eq!(m.disc_acc, 0.0);
    }

    #[test]
    fn every_filter_and_extractor_parameter_gets_gradient() {
        let mut t = tiny_trainer(17);
        let batch = t.sample_batch().unwrap();
        let mut tape = Tape::new();
        let (total, _, _) = t.phase_b_loss(&mut tape, &batch).unwrap();
        tape.backward(total).unwrap();
        t.model.store.zero_grads();
        tape.accumulate_param_grads(&mut t.model.store);
        for &id in t.theta_a.iter().chain(&t.theta_e) {
            let entry = t.model.store.get(id);
            let grad = entry.tensor.grad.as_ref().unwrap_or_else(|| {
                panic!("parameter {} received no gradient", entry.name)
            });
            assert!(
                grad.iter().any(|&g| g != 0.0),
                "parameter {} has an all-zero gradient",
                entry.name
            );
        }
    }

    #[test]
    fn poisoned_parameters_abort_with_a_diagnostic() {
        let mut t = tiny_trainer(19);
        let id = t.theta_e[0];
        let name = t.model.store.get(id).name.clone();
        t.model.store.tensor_mut(id).data_mut()[0] = f64::NAN;
        let batch_err = t.sample_batch().and_then(|b| t.train_step(&b));
        let msg = format!("{}", batch_err.unwrap_err());
        assert!(msg.contains("non-finite"), "got: {msg}");
        assert!(msg.contains(&name), "dump must name the bad tensor: {msg}");
    }

    #[test]
    fn fit_is_deterministic_and_logs_csv() {
        let run = |seed: u64| {
            let mut t = tiny_trainer(seed);
            let report = t.fit(None).unwrap();
            let ids: Vec<ParamId> = t.model.store.ids().collect();
            (report.log_csv, t.model.store.checksum(&ids))
        };
        let (log1, sum1) = run(23);
        let (log2, sum2) = run(23);
        assert_eq!(log1, log2);
        assert_eq!(sum1, sum2);
        let lines: Vec<&str> = log1.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines.len(), 3, "two epochs -> two rows");
        assert!(lines[1].starts_with("1,"));
        let fields = lines[1].split(',').count();
        assert_eq!(fields, 8);
    }

    #[test]
    fn fit_writes_checkpoints_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = tiny_trainer(29);
        t.schedule.epochs = 1;
        t.fit(Some(dir.path())).unwrap();
        assert!(dir.path().join("log.csv").is_file());
        assert!(dir.path().join("checkpoint_epoch_001").join("manifest.txt").is_file());
        let final_dir = dir.path().join("checkpoint_final");
        let mut restored = {
            let cfg = ModelConfig {
                stage_channels: vec![4, 6, 8],
                num_identities: 4,
                disc_hidden: 6,
                ..ModelConfig::default()
            };
            Model::new(&cfg, 999).unwrap()
        };
        restored.load_checkpoint(&final_dir).unwrap();
        let ids: Vec<ParamId> = restored.store.ids().collect();
        let trained: Vec<ParamId> = t.model.store.ids().collect();
        assert_eq!(
            restored.store.checksum(&ids),
            t.model.store.checksum(&trained)
        );
    }
}
