//! The full network: amplitude filter, convolutional extractor whose final
//! stage can swap batch norm for phase-preserving normalization, a shared
//! identity classifier, and a modality discriminator.
//!
//! Each backbone stage is a small residual block: a 3x3 convolution feeds
//! the stage normalization, a learned 1x1 projection of the stage input
//! bypasses it, and their sum passes through relu. The bypass keeps
//! per-instance channel means visible to the global pool even when the
//! normalization strips them from the main branch.
//!
//! All trainable tensors live in one [`ParamStore`], split into three
//! partitions: the filter (theta_a), extractor plus classifier (theta_e),
//! and discriminator (theta_m). Batch norm running statistics are buffers,
//! serialized with checkpoints but never placed on a tape as parameters.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::iaf::{Iaf, IafConfig, IafForward};
use crate::io::fdmt::{self, ContainerEntry};
use crate::ppnorm::{self, PPNormConfig};
use crate::tensor::{NodeId, ParamId, ParamStore, Tape, Tensor};

/// Component switches mirroring the ablation axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Toggles {
    pub iaf: bool,
    pub ppnorm: bool,
    pub mal: bool,
    /// Feed grayscale copies of visible images alongside them and tie the
    /// filtered pairs together with the consistency loss.
    pub grayscale_guidance: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            iaf: true,
            ppnorm: true,
            mal: true,
            grayscale_guidance: true,
        }
    }
}

/// Everything needed to build the network deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Output channels of each backbone stage; 2x2 mean pooling follows
    /// every stage except the last, which keeps full resolution.
    pub stage_channels: Vec<usize>,
    pub num_identities: usize,
    pub disc_hidden: usize,
    pub iaf: IafConfig,
    pub ppnorm: PPNormConfig,
    pub toggles: Toggles,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            stage_channels: vec![8, 16, 32],
            num_identities: 20,
            disc_hidden: 16,
            iaf: IafConfig::default(),
            ppnorm: PPNormConfig::default(),
            toggles: Toggles::default(),
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(Error::invalid("backbone needs at least one stage"));
        }
        if self.num_identities < 2 {
            return Err(Error::invalid("classifier needs at least two identities"));
        }
        if self.disc_hidden == 0 {
            return Err(Error::invalid("discriminator hidden width must be positive"));
        }
        if self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid(format!(
                "bad normalization constants: eps {} momentum {}",
                self.bn_eps, self.bn_momentum
            )));
        }
        if self.toggles.ppnorm {
            self.ppnorm.validate(self.stage_channels.len())?;
        }
        Ok(())
    }

    /// Embedding width; the global pool of the last stage.
    pub fn embed_dim(&self) -> usize {
        *self.stage_channels.last().expect("validated nonempty")
    }
}

enum StageNorm {
    Batch {
        gamma: ParamId,
        beta: ParamId,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    /// Keeps the per-channel affine of the layer it replaces.
    PhasePreserving { gamma: ParamId, beta: ParamId },
}

struct Stage {
    conv_weight: ParamId,
    conv_bias: ParamId,
    proj_weight: ParamId,
    proj_bias: ParamId,
    norm: StageNorm,
    pool: bool,
}

/// Disjoint trainable-tensor groups for the alternating optimization.
pub struct Partitions {
    pub theta_a: Vec<ParamId>,
    pub theta_e: Vec<ParamId>,
    pub theta_m: Vec<ParamId>,
}

/// One batched forward pass's outputs and bookkeeping.
pub struct ForwardOutput {
    /// Raw pooled embeddings, one `[d]` node per input.
    pub embeddings: Vec<NodeId>,
    /// Identity logits, one `[num_identities]` node per input.
    pub logits: Vec<NodeId>,
    /// Filter outputs when the filter is on, otherwise the input nodes.
    pub filtered: Vec<NodeId>,
    /// Learned masks; empty when the filter is off.
    pub masks: Vec<NodeId>,
    iaf_forward: Option<IafForward>,
    /// (stage index, batch-norm node, values per channel) for stat updates.
    bn_nodes: Vec<(usize, NodeId, usize)>,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    iaf: Option<Iaf>,
    stages: Vec<Stage>,
    classifier_weight: ParamId,
    classifier_bias: ParamId,
    disc: Option<DiscriminatorParams>,
}

struct DiscriminatorParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Model {
    /// Builds and initializes the network; deterministic in `seed`.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let iaf = if cfg.toggles.iaf {
            Some(Iaf::register(&mut store, &cfg.iaf, "iaf.", &mut rng)?)
        } else {
            None
        };

        let mut stages = Vec::with_capacity(cfg.stage_channels.len());
        let mut cin = cfg.in_channels;
        let last = cfg.stage_channels.len();
        for (i, &cout) in cfg.stage_channels.iter().enumerate() {
            let stage_no = i + 1;
            let prefix = format!("backbone.stage{stage_no}.");
            let conv_weight = store.add(
                format!("{prefix}conv.weight"),
                he_init(&[3, 3, cin, cout], 9 * cin, &mut rng),
                true,
            );
            let conv_bias = store.add(format!("{prefix}conv.bias"), Tensor::zeros(&[cout]), true);
            let proj_weight = store.add(
                format!("{prefix}proj.weight"),
                he_init(&[1, 1, cin, cout], cin, &mut rng),
                true,
            );
            let proj_bias = store.add(format!("{prefix}proj.bias"), Tensor::zeros(&[cout]), true);
            let replaced = cfg.toggles.ppnorm && cfg.ppnorm.stages.contains(&stage_no);
            let norm = if replaced {
                StageNorm::PhasePreserving {
                    gamma: store.add(
                        format!("{prefix}norm.gamma"),
                        Tensor::full(&[cout], 1.0),
                        true,
                    ),
                    beta: store.add(format!("{prefix}norm.beta"), Tensor::zeros(&[cout]), true),
                }
            } else {
                StageNorm::Batch {
                    gamma: store.add(format!("{prefix}bn.gamma"), Tensor::full(&[cout], 1.0), true),
                    beta: store.add(format!("{prefix}bn.beta"), Tensor::zeros(&[cout]), true),
                    running_mean: vec![0.0; cout],
                    running_var: vec![1.0; cout],
                }
            };
            stages.push(Stage {
                conv_weight,
                conv_bias,
                proj_weight,
                proj_bias,
                norm,
                pool: stage_no < last,
            });
            cin = cout;
        }

        let d = cfg.embed_dim();
        let classifier_weight = store.add(
            "classifier.weight",
            he_init(&[d, cfg.num_identities], d, &mut rng),
            true,
        );
        let classifier_bias = store.add(
            "classifier.bias",
            Tensor::zeros(&[cfg.num_identities]),
            true,
        );

        let disc = if cfg.toggles.mal {
            Some(DiscriminatorParams {
                w1: store.add("disc.fc1.weight", he_init(&[d, cfg.disc_hidden], d, &mut rng), true),
                b1: store.add("disc.fc1.bias", Tensor::zeros(&[cfg.disc_hidden]), true),
                w2: store.add(
                    "disc.fc2.weight",
                    he_init(&[cfg.disc_hidden, 2], cfg.disc_hidden, &mut rng),
                    true,
                ),
                b2: store.add("disc.fc2.bias", Tensor::zeros(&[2]), true),
            })
        } else {
            None
        };

        Ok(Model {
            cfg: cfg.clone(),
            store,
            iaf,
            stages,
            classifier_weight,
            classifier_bias,
            disc,
        })
    }

    /// Runs filter, extractor, and classifier on a batch of image nodes.
    pub fn forward(
        &self,
        tape: &mut Tape,
        images: &[NodeId],
        train: bool,
    ) -> Result<ForwardOutput> {
        self.forward_with_primary(tape, images, images.len(), train)
    }

    /// Like [`Model::forward`], but only the first `primary` images define
    /// the train-mode batch statistics; trailing auxiliary images are
    /// normalized against those statistics without influencing them.
    pub fn forward_with_primary(
        &self,
        tape: &mut Tape,
        images: &[NodeId],
        primary: usize,
        train: bool,
    ) -> Result<ForwardOutput> {
        if images.is_empty() {
            return Err(Error::invalid("forward needs at least one image"));
        }
        if primary == 0 || primary > images.len() {
            return Err(Error::invalid(format!(
                "primary count {primary} must be in 1..={}",
                images.len()
            )));
        }

        let (filtered, masks, iaf_forward) = match &self.iaf {
            Some(iaf) => {
                let fwd = iaf.forward_with_primary(tape, &self.store, images, primary, train)?;
                (fwd.filtered.clone(), fwd.masks.clone(), Some(fwd))
            }
            None => (images.to_vec(), Vec::new(), None),
        };

        let mut current = filtered.clone();
        let mut bn_nodes = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let w = tape.param(&self.store, stage.conv_weight);
            let b = tape.param(&self.store, stage.conv_bias);
            let pw = tape.param(&self.store, stage.proj_weight);
            let pb = tape.param(&self.store, stage.proj_bias);
            let normalized: Vec<NodeId> = match &stage.norm {
                StageNorm::Batch {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let convs: Vec<NodeId> = current
                        .iter()
                        .map(|&x| tape.conv2d(x, w, b))
                        .collect::<Result<_>>()?;
                    let g = tape.param(&self.store, *gamma);
                    let be = tape.param(&self.store, *beta);
                    if train {
                        let stacked = tape.stack(&convs[..primary])?;
                        let node = tape.batch_norm_train(stacked, g, be, self.cfg.bn_eps)?;
                        let count =
                            tape.value(stacked).numel() / self.cfg.stage_channels[i];
                        bn_nodes.push((i, node, count));
                        let mut out: Vec<NodeId> = (0..primary)
                            .map(|k| tape.index(node, k))
                            .collect::<Result<_>>()?;
                        if primary < convs.len() {
                            let (mean, var) = {
                                let (m, v) = tape
                                    .batch_stats(node)
                                    .expect("train-mode batch norm records stats");
                                (m.to_vec(), v.to_vec())
                            };
                            let aux = tape.stack(&convs[primary..])?;
                            let aux_node = tape.batch_norm_eval(
                                aux,
                                g,
                                be,
                                &mean,
                                &var,
                                self.cfg.bn_eps,
                            )?;
                            for k in 0..convs.len() - primary {
                                out.push(tape.index(aux_node, k)?);
                            }
                        }
                        out
                    } else {
                        let stacked = tape.stack(&convs)?;
                        let node = tape.batch_norm_eval(
                            stacked,
                            g,
                            be,
                            running_mean,
                            running_var,
                            self.cfg.bn_eps,
                        )?;
                        (0..convs.len())
                            .map(|k| tape.index(node, k))
                            .collect::<Result<_>>()?
                    }
                }
                StageNorm::PhasePreserving { gamma, beta } => {
                    let g = tape.param(&self.store, *gamma);
                    let be = tape.param(&self.store, *beta);
                    current
                        .iter()
                        .map(|&x| {
                            let z = tape.conv2d(x, w, b)?;
                            let n = ppnorm::ppnorm(tape, z, self.cfg.ppnorm.eps)?;
                            tape.channel_affine(n, g, be)
                        })
                        .collect::<Result<_>>()?
                }
            };
            let activated: Vec<NodeId> = current
                .iter()
                .zip(&normalized)
                .map(|(&x, &n)| {
                    let s = tape.conv2d(x, pw, pb)?;
                    let sum = tape.add(n, s)?;
                    Ok(tape.relu(sum))
                })
                .collect::<Result<_>>()?;
            current = if stage.pool {
                activated
                    .iter()
                    .map(|&x| tape.avg_pool2(x))
                    .collect::<Result<_>>()?
            } else {
                activated
            };
        }

        let cw = tape.param(&self.store, self.classifier_weight);
        let cb = tape.param(&self.store, self.classifier_bias);
        let mut embeddings = Vec::with_capacity(current.len());
        let mut logits = Vec::with_capacity(current.len());
        for &x in &current {
            let f = tape.global_avg_pool(x)?;
            embeddings.push(f);
            logits.push(tape.linear(f, cw, cb)?);
        }

        Ok(ForwardOutput {
            embeddings,
            logits,
            filtered,
            masks,
            iaf_forward,
            bn_nodes,
        })
    }

    /// Maps embedding nodes to modality probability pairs. Errors when the
    /// adversarial branch is disabled.
    pub fn discriminate(&self, tape: &mut Tape, embeddings: &[NodeId]) -> Result<Vec<NodeId>> {
        let disc = self
            .disc
            .as_ref()
            .ok_or_else(|| Error::invalid("adversarial branch is disabled in this model"))?;
        let w1 = tape.param(&self.store, disc.w1);
        let b1 = tape.param(&self.store, disc.b1);
        let w2 = tape.param(&self.store, disc.w2);
        let b2 = tape.param(&self.store, disc.b2);
        embeddings
            .iter()
            .map(|&f| {
                let h = tape.linear(f, w1, b1)?;
                let a = tape.relu(h);
                let logits = tape.linear(a, w2, b2)?;
                tape.softmax(logits)
            })
            .collect()
    }

    /// Folds the batch statistics of a train-mode forward into the running
    /// statistics of every batch norm, including the filter's.
    pub fn update_running_stats(&mut self, tape: &Tape, fwd: &ForwardOutput) {
        let momentum = self.cfg.bn_momentum;
        if let (Some(iaf), Some(ifwd)) = (self.iaf.as_mut(), fwd.iaf_forward.as_ref()) {
            iaf.update_running_stats(tape, ifwd, momentum);
        }
        for &(stage_idx, node, count) in &fwd.bn_nodes {
            let (mean, var) = tape
                .batch_stats(node)
                .expect("recorded nodes are train-mode batch norms");
            if let StageNorm::Batch {
                running_mean,
                running_var,
                ..
            } = &mut self.stages[stage_idx].norm
            {
                let unbias = count as f64 / (count as f64 - 1.0);
                for ch in 0..running_mean.len() {
                    running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean[ch];
                    running_var[ch] =
                        (1.0 - momentum) * running_var[ch] + momentum * var[ch] * unbias;
                }
            }
        }
    }

    /// The three disjoint trainable partitions.
    pub fn partitions(&self) -> Partitions {
        let theta_a = self.iaf.as_ref().map(|i| i.param_ids()).unwrap_or_default();
        let mut theta_e = Vec::new();
        for stage in &self.stages {
            theta_e.push(stage.conv_weight);
            theta_e.push(stage.conv_bias);
            theta_e.push(stage.proj_weight);
            theta_e.push(stage.proj_bias);
            match &stage.norm {
                StageNorm::Batch { gamma, beta, .. }
                | StageNorm::PhasePreserving { gamma, beta } => {
                    theta_e.push(*gamma);
                    theta_e.push(*beta);
                }
            }
        }
        theta_e.push(self.classifier_weight);
        theta_e.push(self.classifier_bias);
        let theta_m = self
            .disc
            .as_ref()
            .map(|d| vec![d.w1, d.b1, d.w2, d.b2])
            .unwrap_or_default();
        Partitions {
            theta_a,
            theta_e,
            theta_m,
        }
    }

    /// All buffers (running statistics) with their serialization names.
    fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(iaf) = &self.iaf {
            out.extend(iaf.buffers("iaf."));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if let StageNorm::Batch {
                running_mean,
                running_var,
                ..
            } = &stage.norm
            {
                let prefix = format!("backbone.stage{}.", i + 1);
                out.push((
                    format!("{prefix}bn.running_mean"),
                    Tensor::new(vec![running_mean.len()], running_mean.clone())
                        .expect("buffer shape is consistent"),
                ));
                out.push((
                    format!("{prefix}bn.running_var"),
                    Tensor::new(vec![running_var.len()], running_var.clone())
                        .expect("buffer shape is consistent"),
                ));
            }
        }
        out
    }

    /// Writes parameters and buffers as a checkpoint container directory.
    pub fn save_checkpoint(&self, dir: &std::path::Path) -> Result<()> {
        let mut entries = Vec::new();
        for (_, entry) in self.store.iter() {
            entries.push(ContainerEntry {
                name: entry.name.clone(),
                tensor: entry.tensor.clone(),
                role: "param".into(),
            });
        }
        for (name, tensor) in self.buffers() {
            entries.push(ContainerEntry {
                name,
                tensor,
                role: "buffer".into(),
            });
        }
        fdmt::save_container(dir, &entries)
    }

    /// Loads a checkpoint written by [`Model::save_checkpoint`] into this
    /// model. Every parameter and buffer must be present with its shape.
    pub fn load_checkpoint(&mut self, dir: &std::path::Path) -> Result<()> {
        let entries = fdmt::load_container(dir)?;
        let mut seen = std::collections::HashSet::new();
        for entry in &entries {
            seen.insert(entry.name.clone());
            match entry.role.as_str() {
                "param" => {
                    let id = self.store.find(&entry.name).ok_or_else(|| {
                        Error::invalid(format!(
                            "checkpoint parameter {:?} does not exist in this model",
                            entry.name
                        ))
                    })?;
                    let target = self.store.tensor_mut(id);
                    if target.shape() != entry.tensor.shape() {
                        return Err(Error::shape(format!(
                            "checkpoint parameter {:?} has shape {:?}, model expects {:?}",
                            entry.name,
                            entry.tensor.shape(),
                            target.shape()
                        )));
                    }
                    target.data_mut().copy_from_slice(entry.tensor.data());
                }
                "buffer" => self.load_buffer(&entry.name, &entry.tensor)?,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown checkpoint role {other:?} for {:?}",
                        entry.name
                    )))
                }
            }
        }
        for (_, entry) in self.store.iter() {
            if !seen.contains(&entry.name) {
                return Err(Error::invalid(format!(
                    "checkpoint is missing parameter {:?}",
                    entry.name
                )));
            }
        }
        for (name, _) in self.buffers() {
            if !seen.contains(&name) {
                return Err(Error::invalid(format!(
                    "checkpoint is missing buffer {name:?}"
                )));
            }
        }
        Ok(())
    }

    fn load_buffer(&mut self, name: &str, tensor: &Tensor) -> Result<()> {
        if let Some(stripped) = name.strip_prefix("iaf.") {
            let iaf = self.iaf.as_mut().ok_or_else(|| {
                Error::invalid(format!("buffer {name:?} targets a disabled filter"))
            })?;
            return iaf.load_buffer(stripped, tensor);
        }
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let prefix = format!("backbone.stage{}.bn.", i + 1);
            if let Some(field) = name.strip_prefix(&prefix) {
                if let StageNorm::Batch {
                    running_mean,
                    running_var,
                    ..
                } = &mut stage.norm
                {
                    let target = match field {
                        "running_mean" => running_mean,
                        "running_var" => running_var,
                        other => {
                            return Err(Error::invalid(format!("unknown buffer field {other:?}")))
                        }
                    };
                    if tensor.numel() != target.len() {
                        return Err(Error::shape(format!(
                            "buffer {name:?} expects {} values, got {}",
                            target.len(),
                            tensor.numel()
                        )));
                    }
                    target.copy_from_slice(tensor.data());
                    return Ok(());
                }
            }
        }
        Err(Error::invalid(format!("unknown buffer {name:?}")))
    }
}

fn he_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut state = seed;
        Tensor::from_fn(&[h, w, 3], |_| {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            z as f64 / u64::MAX as f64
        })
    }

    #[test]
    fn construction_is_deterministic() {
        let cfg = ModelConfig::default();
        let a = Model::new(&cfg, 3).unwrap();
        let b = Model::new(&cfg, 3).unwrap();
        for (ia, ib) in a.store.ids().zip(b.store.ids()) {
            assert_eq!(a.store.tensor(ia).data(), b.store.tensor(ib).data());
        }
        let c = Model::new(&cfg, 4).unwrap();
        let differs = a
            .store
            .ids()
            .zip(c.store.ids())
            .any(|(x, y)| a.store.tensor(x).data() != c.store.tensor(y).data());
        assert!(differs, "different seeds must give different weights");
    }

    #[test]
    fn forward_shapes_match_contract() {
        let cfg = ModelConfig::default();
        let model = Model::new(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(&test_image(32, 16, 7));
        let y = tape.leaf(&test_image(32, 16, 8));
        let out = model.forward(&mut tape, &[x, y], true).unwrap();
        assert_eq!(out.embeddings.len(), 2);
        assert_eq!(tape.shape(out.embeddings[0]), &[32]);
        assert_eq!(tape.shape(out.logits[0]), &[20]);
        assert_eq!(tape.shape(out.filtered[0]), &[32, 16, 3]);
        assert_eq!(tape.shape(out.masks[0]), &[32, 9, 1]);
        let probs = model.discriminate(&mut tape, &out.embeddings).unwrap();
        assert_eq!(tape.shape(probs[0]), &[2]);
        let p = tape.value(probs[0]).data();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = ModelConfig::default();
        let model = Model::new(&cfg, 1).unwrap();
        // filter: 1x1x3x8 conv + 8 bias + 8 gamma + 8 beta + 3x3x2x1 + 1
        let iaf = 24 + 8 + 8 + 8 + 18 + 1;
        // per stage: 3x3 conv + bias, 1x1 bypass projection + bias, and a
        // per-channel gamma + beta for either normalization flavor
        let stage1 = (216 + 8) + (24 + 8) + 16;
        let stage2 = (1152 + 16) + (128 + 16) + 32;
        let stage3 = (4608 + 32) + (512 + 32) + 64;
        let backbone = stage1 + stage2 + stage3;
        let classifier = 32 * 20 + 20;
        let disc = (32 * 16 + 16) + (16 * 2 + 2);
        let expected = iaf + backbone + classifier + disc;
        let total: usize = model
            .store
            .iter()
            .map(|(_, e)| e.tensor.numel())
            .sum();
        assert_eq!(total, expected);
    }

    #[test]
    fn partitions_are_disjoint_and_cover_store() {
        let model = Model::new(&ModelConfig::default(), 2).unwrap();
        let p = model.partitions();
        let mut all: Vec<ParamId> = p
            .theta_a
            .iter()
            .chain(&p.theta_e)
            .chain(&p.theta_m)
            .copied()
            .collect();
        let count = all.len();
        all.sort_by_key(|id| format!("{id:?}"));
        all.dedup_by_key(|id| format!("{id:?}"));
        assert_eq!(all.len(), count, "partitions overlap");
        assert_eq!(count, model.store.len(), "partitions must cover the store");
    }

    #[test]
    fn toggles_remove_their_partitions() {
        let mut cfg = ModelConfig::default();
        cfg.toggles.iaf = false;
        cfg.toggles.mal = false;
        let model = Model::new(&cfg, 2).unwrap();
        let p = model.partitions();
        assert!(p.theta_a.is_empty());
        assert!(p.theta_m.is_empty());
        let mut tape = Tape::new();
        let x = tape.leaf(&test_image(16, 8, 1));
        let out = model.forward(&mut tape, &[x], true).unwrap();
        assert!(out.masks.is_empty());
        assert_eq!(out.filtered, vec![x]);
        assert!(model.discriminate(&mut tape, &out.embeddings).is_err());
    }

    #[test]
    fn eval_differs_from_train_until_stats_settle() {
        let cfg = ModelConfig::default();
        let mut model = Model::new(&cfg, 5).unwrap();
        let image = test_image(16, 8, 11);
        let embed = |model: &Model, train: bool| {
            let mut tape = Tape::new();
            let x = tape.leaf(&image);
            let out = model.forward(&mut tape, &[x], train).unwrap();
            tape.value(out.embeddings[0]).data().to_vec()
        };
        let before = embed(&model, false);
        let mut tape = Tape::new();
        let x = tape.leaf(&image);
        let out = model.forward(&mut tape, &[x], true).unwrap();
        model.update_running_stats(&tape, &out);
        let after = embed(&model, false);
        assert_ne!(before, after, "running stats must move eval outputs");
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::default();
        let mut model = Model::new(&cfg, 6).unwrap();
        // move stats away from init so buffers are exercised too
        let mut tape = Tape::new();
        let x = tape.leaf(&test_image(16, 8, 12));
        let out = model.forward(&mut tape, &[x], true).unwrap();
        model.update_running_stats(&tape, &out);
        model.save_checkpoint(dir.path()).unwrap();

        let mut restored = Model::new(&cfg, 999).unwrap();
        restored.load_checkpoint(dir.path()).unwrap();
        for (ia, ib) in model.store.ids().zip(restored.store.ids()) {
            let (a, b) = (model.store.tensor(ia), restored.store.tensor(ib));
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let embed = |model: &Model| {
            let mut tape = Tape::new();
            let x = tape.leaf(&test_image(16, 8, 13));
            let out = model.forward(&mut tape, &[x], false).unwrap();
            tape.value(out.embeddings[0]).data().to_vec()
        };
        assert_eq!(embed(&model), embed(&restored));
    }

    #[test]
    fn mismatched_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(&ModelConfig::default(), 7).unwrap();
        model.save_checkpoint(dir.path()).unwrap();
        let mut smaller = ModelConfig::default();
        smaller.stage_channels = vec![8, 16, 16];
        let mut other = Model::new(&smaller, 7).unwrap();
        assert!(other.load_checkpoint(dir.path()).is_err());
    }
}
