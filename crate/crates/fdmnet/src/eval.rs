//! Cross-modality retrieval evaluation.
//!
//! Test images are embedded once in eval mode. Each repeated split then
//! draws a gallery of one randomly chosen visible image per identity, ranks
//! every infrared image against it by cosine similarity, and scores the
//! rankings with CMC and mean average precision. The report carries each
//! split's numbers plus their mean and spread.

use std::fmt::Write as _;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::data::{self, Dataset, Modality, Split};
use crate::error::{Error, Result};
use crate::losses;
use crate::model::Model;
use crate::tensor::{ParamStore, Sgd, Tape, Tensor};

/// One query's gallery ordering: indices sorted by falling similarity with
/// ties broken by ascending gallery index, plus each entry's relevance.
pub struct RankingResult {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    pub relevant: Vec<bool>,
}

/// Cosine of the angle between two equal-length nonzero vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!(
            "cosine needs equal nonempty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na * nb;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Numerical(
            "cosine similarity of a zero or non-finite vector".into(),
        ));
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Ranks a gallery against one query. `relevant[i]` flags gallery index `i`
/// as a correct match; the flags come back reordered alongside the scores.
pub fn rank(query: &[f64], gallery: &[Vec<f64>], relevant: &[bool]) -> Result<RankingResult> {
    if gallery.len() != relevant.len() || gallery.is_empty() {
        return Err(Error::invalid(format!(
            "gallery has {} items but {} relevance flags",
            gallery.len(),
            relevant.len()
        )));
    }
    let mut scored = Vec::with_capacity(gallery.len());
    for (i, item) in gallery.iter().enumerate() {
        scored.push((i, cosine_similarity(query, item)?));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
    Ok(RankingResult {
        order: scored.iter().map(|&(i, _)| i).collect(),
        scores: scored.iter().map(|&(_, s)| s).collect(),
        relevant: scored.iter().map(|&(i, _)| relevant[i]).collect(),
    })
}

fn first_relevant_rank(r: &RankingResult) -> Result<usize> {
    r.relevant
        .iter()
        .position(|&x| x)
        .map(|p| p + 1)
        .ok_or_else(|| Error::invalid("a query has no relevant gallery item"))
}

/// Fraction of queries whose first correct match lands in the top k, for
/// each requested k.
pub fn cmc(rankings: &[RankingResult], k_values: &[usize]) -> Result<Vec<f64>> {
    if rankings.is_empty() {
        return Err(Error::invalid("cmc needs at least one query"));
    }
    let mut firsts = Vec::with_capacity(rankings.len());
    for r in rankings {
        firsts.push(first_relevant_rank(r)?);
    }
    Ok(k_values
        .iter()
        .map(|&k| firsts.iter().filter(|&&f| f <= k).count() as f64 / firsts.len() as f64)
        .collect())
}

/// Mean over queries of the average precision at each relevant item's rank.
pub fn mean_average_precision(rankings: &[RankingResult]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::invalid("mAP needs at least one query"));
    }
    let mut total = 0.0;
    for r in rankings {
        first_relevant_rank(r)?;
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (pos, &rel) in r.relevant.iter().enumerate() {
            if rel {
                hits += 1;
                ap += hits as f64 / (pos + 1) as f64;
            }
        }
        total += ap / hits as f64;
    }
    Ok(total / rankings.len() as f64)
}

/// An embedded image with its retrieval labels.
#[derive(Debug, Clone)]
pub struct EmbeddedSample {
    pub features: Vec<f64>,
    pub identity: usize,
    pub modality: Modality,
}

/// Retrieval scores of one split, as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub rank1: f64,
    pub rank10: f64,
    pub rank20: f64,
    pub map: f64,
}

/// Per-split scores with their mean and population standard deviation.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub splits: Vec<SplitMetrics>,
    pub mean: SplitMetrics,
    pub std: SplitMetrics,
}

impl EvalReport {
    /// Rows of fractions: one per split, then mean and std.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,R-1,R-10,R-20,mAP\n");
        let row = |label: &str, m: &SplitMetrics| {
            format!(
                "{label},{:.6},{:.6},{:.6},{:.6}\n",
                m.rank1, m.rank10, m.rank20, m.map
            )
        };
        for (i, m) in self.splits.iter().enumerate() {
            out.push_str(&row(&(i + 1).to_string(), m));
        }
        out.push_str(&row("mean", &self.mean));
        out.push_str(&row("std", &self.std));
        out
    }

    /// Aligned text table in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6}  {:>7}  {:>7}  {:>7}  {:>7}", "", "R-1", "R-10", "R-20", "mAP");
        let mut row = |label: &str, m: &SplitMetrics| {
            let _ = writeln!(
                out,
                "{label:>6}  {:>6.2}%  {:>6.2}%  {:>6.2}%  {:>6.2}%",
                100.0 * m.rank1,
                100.0 * m.rank10,
                100.0 * m.rank20,
                100.0 * m.map
            );
        };
        row("mean", &self.mean);
        row("std", &self.std);
        out
    }
}

/// Embeds every image of one dataset split in eval mode.
pub fn embed_split(model: &Model, dataset: &Dataset, split: Split) -> Result<Vec<EmbeddedSample>> {
    let samples: Vec<_> = dataset.samples_in(split).collect();
    if samples.is_empty() {
        return Err(Error::Dataset(format!("split {:?} has no images", split.as_str())));
    }
    let mut tape = Tape::new();
    let nodes: Vec<_> = samples.iter().map(|s| tape.leaf(&s.image)).collect();
    let out = model.forward(&mut tape, &nodes, false)?;
    Ok(samples
        .iter()
        .zip(&out.embeddings)
        .map(|(s, &e)| EmbeddedSample {
            features: tape.value(e).data().to_vec(),
            identity: s.identity,
            modality: s.modality,
        })
        .collect())
}

const SALT_SPLIT: u64 = 0x53504c54;

/// Scores precomputed embeddings over `n_splits` random gallery draws. Every
/// infrared image queries a gallery of one visible image per identity; a
/// draw that cannot cover some queried identity is retried up to 100 times.
pub fn evaluate_embeddings(
    samples: &[EmbeddedSample],
    n_splits: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_splits == 0 {
        return Err(Error::invalid("need at least one evaluation split"));
    }
    let mut identities: Vec<usize> = samples.iter().map(|s| s.identity).collect();
    identities.sort_unstable();
    identities.dedup();
    let visible_pool: Vec<Vec<usize>> = identities
        .iter()
        .map(|&id| {
            (0..samples.len())
                .filter(|&i| samples[i].identity == id && samples[i].modality == Modality::Visible)
                .collect()
        })
        .collect();
    let queries: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].modality == Modality::Infrared)
        .collect();
    if queries.is_empty() {
        return Err(Error::Dataset("no infrared queries to evaluate".into()));
    }

    let mut splits = Vec::with_capacity(n_splits);
    for s in 0..n_splits {
        let mut rng = ChaCha8Rng::seed_from_u64(data::mix(&[SALT_SPLIT, seed, s as u64]));
        let mut gallery_samples: Option<Vec<usize>> = None;
        for _ in 0..100 {
            let queried_covered = queries.iter().all(|&q| {
                identities
                    .binary_search(&samples[q].identity)
                    .map(|slot| !visible_pool[slot].is_empty())
                    .unwrap_or(false)
            });
            if !queried_covered {
                continue;
            }
            let draw: Vec<usize> = visible_pool
                .iter()
                .filter(|pool| !pool.is_empty())
                .map(|pool| pool[rng.gen_range(0..pool.len())])
                .collect();
            gallery_samples = Some(draw);
            break;
        }
        let gallery_samples = gallery_samples.ok_or_else(|| {
            Error::Dataset("no visible gallery image for a queried identity after 100 draws".into())
        })?;
        let gallery: Vec<Vec<f64>> = gallery_samples
            .iter()
            .map(|&i| samples[i].features.clone())
            .collect();

        let mut rankings = Vec::with_capacity(queries.len());
        for &q in &queries {
            let relevant: Vec<bool> = gallery_samples
                .iter()
                .map(|&g| samples[g].identity == samples[q].identity)
                .collect();
            rankings.push(rank(&samples[q].features, &gallery, &relevant)?);
        }
        let c = cmc(&rankings, &[1, 10, 20])?;
        splits.push(SplitMetrics {
            rank1: c[0],
            rank10: c[1],
            rank20: c[2],
            map: mean_average_precision(&rankings)?,
        });
    }

    let mean = |f: fn(&SplitMetrics) -> f64| {
        splits.iter().map(f).sum::<f64>() / splits.len() as f64
    };
    let spread = |f: fn(&SplitMetrics) -> f64, m: f64| {
        (splits.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / splits.len() as f64).sqrt()
    };
    let mean = SplitMetrics {
        rank1: mean(|m| m.rank1),
        rank10: mean(|m| m.rank10),
        rank20: mean(|m| m.rank20),
        map: mean(|m| m.map),
    };
    let std = SplitMetrics {
        rank1: spread(|m| m.rank1, mean.rank1),
        rank10: spread(|m| m.rank10, mean.rank10),
        rank20: spread(|m| m.rank20, mean.rank20),
        map: spread(|m| m.map, mean.map),
    };
    Ok(EvalReport { splits, mean, std })
}

/// Embeds the test split and scores it over repeated gallery draws.
pub fn evaluate(model: &Model, dataset: &Dataset, n_splits: usize, seed: u64) -> Result<EvalReport> {
    evaluate_embeddings(&embed_split(model, dataset, Split::Test)?, n_splits, seed)
}

/// Trains a fresh two-layer modality classifier on one embedding set and
/// returns its accuracy on another: a post-hoc measure of how much modality
/// information the embeddings still carry.
pub fn modality_probe(
    train: &[EmbeddedSample],
    held_out: &[EmbeddedSample],
    hidden: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    if train.is_empty() || held_out.is_empty() || hidden == 0 {
        return Err(Error::invalid("probe needs samples and a hidden width"));
    }
    let dim = train[0].features.len();
    if train
        .iter()
        .chain(held_out)
        .any(|s| s.features.len() != dim || s.features.is_empty())
    {
        return Err(Error::shape("probe embeddings must share one nonzero length"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |fan_in: usize, shape: &[usize]| -> Tensor {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite sigma");
        Tensor::from_fn(shape, |_| dist.sample(&mut rng))
    };
    let mut store = ParamStore::new();
    let w1 = store.add("probe.fc1.weight", gauss(dim, &[dim, hidden]), true);
    let b1 = store.add("probe.fc1.bias", Tensor::zeros(&[hidden]), true);
    let w2 = store.add("probe.fc2.weight", gauss(hidden, &[hidden, 2]), true);
    let b2 = store.add("probe.fc2.bias", Tensor::zeros(&[2]), true);
    let ids = [w1, b1, w2, b2];

    let forward = |tape: &mut Tape, store: &ParamStore, features: &[f64]| -> Result<crate::tensor::NodeId> {
        let x = tape.constant(Tensor::new(vec![features.len()], features.to_vec())?);
        let (w1, b1) = (tape.param(store, w1), tape.param(store, b1));
        let (w2, b2) = (tape.param(store, w2), tape.param(store, b2));
        let h = tape.linear(x, w1, b1)?;
        let h = tape.relu(h);
        let logits = tape.linear(h, w2, b2)?;
        tape.softmax(logits)
    };

    let mut opt = Sgd::new(lr, 0.9, 0.0);
    let labels: Vec<Modality> = train.iter().map(|s| s.modality).collect();
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let preds: Vec<_> = train
            .iter()
            .map(|s| forward(&mut tape, &store, &s.features))
            .collect::<Result<_>>()?;
        let loss = losses::discriminator_loss(&mut tape, &preds, &labels)?;
        tape.backward(loss)?;
        store.zero_grads();
        tape.accumulate_param_grads(&mut store);
        opt.step(&mut store, &ids)?;
        store.zero_grads();
    }

    let mut correct = 0usize;
    let mut tape = Tape::new();
    for s in held_out {
        let p = forward(&mut tape, &store, &s.features)?;
        let d = tape.value(p).data();
        let said_infrared = d[1] > d[0];
        if said_infrared == (s.modality == Modality::Infrared) {
            correct += 1;
        }
    }
    Ok(correct as f64 / held_out.len() as f64)
}
