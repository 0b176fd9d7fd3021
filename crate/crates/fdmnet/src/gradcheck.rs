//! Central finite-difference verification of every backward rule.
//!
//! Each case reduces a graph to a scalar, usually a fixed-weight sum of the
//! operation's output, then compares the analytic gradient of every input
//! element against `(f(x+h) - f(x-h)) / 2h` evaluated on fresh tapes. Inputs
//! are drawn away from the kinks of non-smooth operations (relu, abs, hinge,
//! max pooling, amplitude and phase extraction near zero bins), where the
//! gradient is defined everywhere; spectral cases use images rebuilt with an
//! amplitude floor of 0.5 and phases pulled inside the principal branch so a
//! step of `FD_STEP` can never cross a cone vertex or branch cut.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::fourier;
use crate::iaf::{Iaf, IafConfig};
use crate::losses::{self, LossWeights};
use crate::model::{Model, ModelConfig};
use crate::ppnorm;
use crate::tensor::{NodeId, ParamStore, Tape, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Pass threshold for `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub const REL_TOL: f64 = 1e-4;

type BuildFn = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>>;
type ParamBuildFn = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<NodeId>>;

/// A scalar functional of plain tensor leaves.
pub struct LeafCase {
    pub name: String,
    pub leaves: Vec<Tensor>,
    pub build: BuildFn,
}

/// A scalar functional of every trainable entry in a parameter store.
pub struct ParamCase {
    pub name: String,
    pub store: ParamStore,
    pub build: ParamBuildFn,
}

pub enum Case {
    Leaf(LeafCase),
    Params(ParamCase),
}

impl Case {
    pub fn name(&self) -> &str {
        match self {
            Case::Leaf(c) => &c.name,
            Case::Params(c) => &c.name,
        }
    }
}

/// Outcome of checking one case.
pub struct CaseReport {
    pub name: String,
    pub checks: usize,
    pub max_rel_err: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

/// Aggregated outcome of one operation family across its instances.
pub struct FamilyReport {
    pub name: String,
    pub instances: usize,
    pub checks: usize,
    pub max_rel_err: f64,
    pub worst_instance: usize,
}

impl FamilyReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

fn ensure_scalar(tape: &Tape, node: NodeId) -> Result<()> {
    if tape.value(node).numel() != 1 {
        return Err(Error::invalid(format!(
            "gradient check functionals must be scalar, got shape {:?}",
            tape.shape(node)
        )));
    }
    Ok(())
}

/// Checks one case; see module docs for the comparison rule.
pub fn check(case: &Case) -> Result<CaseReport> {
    match case {
        Case::Leaf(c) => check_leaf_case(c),
        Case::Params(c) => check_param_case(c),
    }
}

fn check_leaf_case(case: &LeafCase) -> Result<CaseReport> {
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = case.leaves.iter().map(|t| tape.leaf(t)).collect();
    let out = (case.build)(&mut tape, &nodes)?;
    ensure_scalar(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = nodes
        .iter()
        .zip(&case.leaves)
        .map(|(&n, t)| {
            tape.grad(n)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = values.iter().map(|t| tape.leaf(t)).collect();
        let out = (case.build)(&mut tape, &nodes)?;
        Ok(tape.value(out).data()[0])
    };

    let mut values = case.leaves.clone();
    let mut max_rel_err = 0.0f64;
    let mut checks = 0;
    for li in 0..values.len() {
        for e in 0..values[li].numel() {
            let orig = values[li].data()[e];
            values[li].data_mut()[e] = orig + FD_STEP;
            let plus = eval(&values)?;
            values[li].data_mut()[e] = orig - FD_STEP;
            let minus = eval(&values)?;
            values[li].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(rel_err(analytic[li][e], numeric));
            checks += 1;
        }
    }
    Ok(CaseReport {
        name: case.name.clone(),
        checks,
        max_rel_err,
    })
}

fn check_param_case(case: &ParamCase) -> Result<CaseReport> {
    let mut store = case.store.clone();
    let mut tape = Tape::new();
    let out = (case.build)(&mut tape, &store)?;
    ensure_scalar(&tape, out)?;
    tape.backward(out)?;
    store.zero_grads();
    tape.accumulate_param_grads(&mut store);
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, e)| e.trainable)
        .map(|(id, _)| id)
        .collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let t = store.tensor(id);
            t.grad.clone().unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |values: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = (case.build)(&mut tape, values)?;
        Ok(tape.value(out).data()[0])
    };

    let mut values = case.store.clone();
    let mut max_rel_err = 0.0f64;
    let mut checks = 0;
    for (pi, &id) in ids.iter().enumerate() {
        for e in 0..values.tensor(id).numel() {
            let orig = values.tensor(id).data()[e];
            values.tensor_mut(id).data_mut()[e] = orig + FD_STEP;
            let plus = eval(&values)?;
            values.tensor_mut(id).data_mut()[e] = orig - FD_STEP;
            let minus = eval(&values)?;
            values.tensor_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(rel_err(analytic[pi][e], numeric));
            checks += 1;
        }
    }
    Ok(CaseReport {
        name: case.name.clone(),
        checks,
        max_rel_err,
    })
}

// ---- random input construction ----

fn rng_for(seed: u64, family: &str, k: usize) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in family.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= (k as u64).wrapping_mul(0x9e3779b97f4a7c15);
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values with `min_mag <= |x| < max_mag` and random sign, clear of kinks
/// that sit at zero.
fn signed_tensor(rng: &mut ChaCha8Rng, shape: &[usize], min_mag: f64, max_mag: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let mag = rng.gen_range(min_mag..max_mag);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

fn small_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.gen_range(2..=6usize),
        rng.gen_range(2..=6usize),
        rng.gen_range(1..=4usize),
    )
}

/// Per-pixel channel values pairwise separated by at least `gap`, so max
/// pooling never has a near-tie within reach of the step.
fn channel_separated(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, gap: f64) -> Tensor {
    let mut data = vec![0.0; h * w * c];
    for px in 0..h * w {
        loop {
            let vals: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let separated = (0..c)
                .all(|i| (0..i).all(|j| (vals[i] - vals[j]).abs() >= gap));
            if separated {
                data[px * c..(px + 1) * c].copy_from_slice(&vals);
                break;
            }
        }
    }
    Tensor::new(vec![h, w, c], data).expect("shape matches data")
}

/// Rebuilds a random image so every spectrum bin has amplitude at least 0.5
/// and phase inside (-0.9 pi, 0.9 pi), with exactly-real bins pinned to
/// phase zero. Gradients of amplitude and phase at such points are smooth
/// over a `FD_STEP`-sized neighborhood.
fn amplitude_floored_image(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    c: usize,
) -> Result<Tensor> {
    let raw = rand_tensor(rng, &[h, w, c], 0.0, 1.0);
    let spec = fourier::dft2d_forward(&raw)?;
    let parts = fourier::decompose(&spec);
    let mut amp = parts.amplitude;
    let mut phase = parts.phase;
    let wh = w / 2 + 1;
    for u in 0..h {
        for v in 0..wh {
            let self_conjugate = (2 * u) % h == 0 && (2 * v) % w == 0;
            for ch in 0..c {
                let i = (u * wh + v) * c + ch;
                amp.data_mut()[i] += 0.5;
                phase.data_mut()[i] = if self_conjugate {
                    0.0
                } else {
                    0.9 * phase.data()[i]
                };
            }
        }
    }
    let composed = fourier::compose(&amp, &phase, w)?;
    fourier::dft2d_inverse(&composed)
}

/// An amplitude-floored image whose instance-normalized spectrum also keeps
/// all bins except the (identically zero) mean bin away from the amplitude
/// cone vertex.
fn normalization_safe_image(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    c: usize,
) -> Result<Tensor> {
    for _ in 0..64 {
        let img = amplitude_floored_image(rng, h, w, c)?;
        let mut normalized = img.clone();
        let (hw, wh) = (h * w, w / 2 + 1);
        for ch in 0..c {
            let vals: Vec<f64> = (0..hw).map(|p| img.data()[p * c + ch]).collect();
            let mean = vals.iter().sum::<f64>() / hw as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hw as f64;
            let scale = 1.0 / (var + 1e-5).sqrt();
            for p in 0..hw {
                normalized.data_mut()[p * c + ch] = (vals[p] - mean) * scale;
            }
        }
        let parts = fourier::decompose(&fourier::dft2d_forward(&normalized)?);
        let safe = (0..h).all(|u| {
            (0..wh).all(|v| {
                (0..c).all(|ch| {
                    (u == 0 && v == 0) || parts.amplitude.data()[(u * wh + v) * c + ch] > 0.05
                })
            })
        });
        if safe {
            return Ok(img);
        }
    }
    Err(Error::Numerical(
        "could not draw a normalization-safe test image".into(),
    ))
}

/// Features for the clustering loss with every member at least 0.05 from its
/// center and every center gap at least 0.05 from both zero and the margin.
fn clustered_features(
    rng: &mut ChaCha8Rng,
    ids: usize,
    per_id: usize,
    d: usize,
    rho: f64,
) -> (Vec<Tensor>, Vec<usize>) {
    let labels: Vec<usize> = (0..ids).flat_map(|i| std::iter::repeat(i).take(per_id)).collect();
    loop {
        let feats: Vec<Tensor> = (0..ids * per_id)
            .map(|_| rand_tensor(rng, &[d], -1.0, 1.0))
            .collect();
        let centers: Vec<Vec<f64>> = (0..ids)
            .map(|i| {
                let mut c = vec![0.0; d];
                for m in 0..per_id {
                    for (cv, fv) in c.iter_mut().zip(feats[i * per_id + m].data()) {
                        *cv += fv / per_id as f64;
                    }
                }
                c
            })
            .collect();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let members_clear = (0..ids * per_id)
            .all(|i| dist(feats[i].data(), &centers[labels[i]]) >= 0.05);
        let centers_clear = (0..ids).all(|i| {
            (0..i).all(|j| {
                let g = dist(&centers[i], &centers[j]);
                g >= 0.05 && (g - rho).abs() >= 0.05
            })
        });
        if members_clear && centers_clear {
            return (feats, labels);
        }
    }
}

/// `sum(weights * node)` with weights fixed at case-generation time.
fn weighted_sum(tape: &mut Tape, node: NodeId, weights: &Tensor) -> Result<NodeId> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(node, w)?;
    Ok(tape.sum(prod))
}

fn weights_like(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    signed_tensor(rng, shape, 0.25, 1.25)
}

// ---- case generators, one per operation family ----

type Gen = fn(u64, usize) -> Result<Case>;

struct FamilySpec {
    name: &'static str,
    /// Instance cap for expensive composites; None means the suite default.
    cap: Option<usize>,
    gen: Gen,
}

fn leaf_case(
    name: String,
    leaves: Vec<Tensor>,
    build: impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId> + 'static,
) -> Case {
    Case::Leaf(LeafCase {
        name,
        leaves,
        build: Box::new(build),
    })
}

fn gen_add(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "add", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("add[{k}]"), vec![a, b], move |t, n| {
        let s = t.add(n[0], n[1])?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_sub(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "sub", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("sub[{k}]"), vec![a, b], move |t, n| {
        let s = t.sub(n[0], n[1])?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_mul(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "mul", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("mul[{k}]"), vec![a, b], move |t, n| {
        let s = t.mul(n[0], n[1])?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_mul_broadcast_last(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "mul_broadcast_last", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let m = rand_tensor(&mut rng, &[h, w, 1], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(
        format!("mul_broadcast_last[{k}]"),
        vec![a, m],
        move |t, n| {
            let s = t.mul_broadcast_last(n[0], n[1])?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_scale(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "scale", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let factor = rng.gen_range(-2.0..2.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("scale[{k}]"), vec![a], move |t, n| {
        let s = t.scale(n[0], factor);
        weighted_sum(t, s, &ws)
    }))
}

fn gen_abs(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "abs", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = signed_tensor(&mut rng, &[h, w, c], 0.2, 1.5);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("abs[{k}]"), vec![a], move |t, n| {
        let s = t.abs(n[0]);
        weighted_sum(t, s, &ws)
    }))
}

fn gen_relu(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "relu", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = signed_tensor(&mut rng, &[h, w, c], 0.2, 1.5);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("relu[{k}]"), vec![a], move |t, n| {
        let s = t.relu(n[0]);
        weighted_sum(t, s, &ws)
    }))
}

fn gen_sigmoid(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "sigmoid", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -3.0, 3.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("sigmoid[{k}]"), vec![a], move |t, n| {
        let s = t.sigmoid(n[0]);
        weighted_sum(t, s, &ws)
    }))
}

fn gen_sqrt(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "sqrt", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], 0.1, 2.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("sqrt[{k}]"), vec![a], move |t, n| {
        let s = t.sqrt(n[0]);
        weighted_sum(t, s, &ws)
    }))
}

fn gen_log1p(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "log1p", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -0.8, 1.5);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("log1p[{k}]"), vec![a], move |t, n| {
        let s = t.log1p(n[0]);
        weighted_sum(t, s, &ws)
    }))
}

fn gen_ln_clamped(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "ln_clamped", k);
    let (h, w, c) = small_dims(&mut rng);
    let min = if k % 2 == 0 { 1e-12 } else { 0.05 };
    let a = rand_tensor(&mut rng, &[h, w, c], min + 0.1, min + 1.6);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("ln_clamped[{k}]"), vec![a], move |t, n| {
        let s = t.ln_clamped(n[0], min);
        weighted_sum(t, s, &ws)
    }))
}

fn gen_sum(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "sum", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    Ok(leaf_case(format!("sum[{k}]"), vec![a], move |t, n| {
        Ok(t.sum(n[0]))
    }))
}

fn gen_pick(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "pick", k);
    let n = rng.gen_range(2..=6usize);
    let a = rand_tensor(&mut rng, &[n], -1.0, 1.0);
    let idx = rng.gen_range(0..n);
    Ok(leaf_case(format!("pick[{k}]"), vec![a], move |t, nodes| {
        t.pick(nodes[0], idx)
    }))
}

fn gen_mean_scalars(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "mean_scalars", k);
    let m = rng.gen_range(2..=4usize);
    let leaves: Vec<Tensor> = (0..m)
        .map(|_| Tensor::scalar(rng.gen_range(-1.0..1.0)))
        .collect();
    Ok(leaf_case(
        format!("mean_scalars[{k}]"),
        leaves,
        move |t, n| t.mean_scalars(n),
    ))
}

fn gen_concat(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "concat", k);
    let (h, w, c) = small_dims(&mut rng);
    let axis = rng.gen_range(0..3usize);
    let parts = rng.gen_range(2..=3usize);
    let mut leaves = Vec::new();
    let mut out_shape = [h, w, c];
    out_shape[axis] = 0;
    for _ in 0..parts {
        let mut s = [h, w, c];
        s[axis] = rng.gen_range(1..=3usize);
        out_shape[axis] += s[axis];
        leaves.push(rand_tensor(&mut rng, &s, -1.0, 1.0));
    }
    let ws = weights_like(&mut rng, &out_shape);
    Ok(leaf_case(format!("concat[{k}]"), leaves, move |t, n| {
        let s = t.concat(n, axis)?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_stack_index(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "stack_index", k);
    let (h, w, c) = small_dims(&mut rng);
    let m = rng.gen_range(2..=3usize);
    let leaves: Vec<Tensor> = (0..m)
        .map(|_| rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0))
        .collect();
    let pick = rng.gen_range(0..m);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("stack_index[{k}]"), leaves, move |t, n| {
        let stacked = t.stack(n)?;
        let one = t.index(stacked, pick)?;
        weighted_sum(t, one, &ws)
    }))
}

fn gen_conv2d(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "conv2d", k);
    let h = rng.gen_range(2..=5usize);
    let w = rng.gen_range(2..=5usize);
    let cin = rng.gen_range(1..=3usize);
    let cout = rng.gen_range(1..=3usize);
    let ksize = if k % 2 == 0 { 3 } else { 1 };
    let input = rand_tensor(&mut rng, &[h, w, cin], -1.0, 1.0);
    let kernel = rand_tensor(&mut rng, &[ksize, ksize, cin, cout], -1.0, 1.0);
    let bias = rand_tensor(&mut rng, &[cout], -0.5, 0.5);
    let ws = weights_like(&mut rng, &[h, w, cout]);
    Ok(leaf_case(
        format!("conv2d[{k}]"),
        vec![input, kernel, bias],
        move |t, n| {
            let s = t.conv2d(n[0], n[1], n[2])?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_avg_pool2(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "avg_pool2", k);
    let h = 2 * rng.gen_range(1..=3usize);
    let w = 2 * rng.gen_range(1..=3usize);
    let c = rng.gen_range(1..=4usize);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h / 2, w / 2, c]);
    Ok(leaf_case(format!("avg_pool2[{k}]"), vec![a], move |t, n| {
        let s = t.avg_pool2(n[0])?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_instance_norm(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "instance_norm", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(
        format!("instance_norm[{k}]"),
        vec![a],
        move |t, n| {
            let s = t.instance_norm(n[0], 1e-5)?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_batch_norm_train(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "batch_norm_train", k);
    let n = rng.gen_range(2..=3usize);
    let h = rng.gen_range(2..=4usize);
    let w = rng.gen_range(2..=4usize);
    let c = rng.gen_range(1..=3usize);
    let x = rand_tensor(&mut rng, &[n, h, w, c], -1.0, 1.0);
    let gamma = signed_tensor(&mut rng, &[c], 0.3, 1.5);
    let beta = rand_tensor(&mut rng, &[c], -0.5, 0.5);
    let ws = weights_like(&mut rng, &[n, h, w, c]);
    Ok(leaf_case(
        format!("batch_norm_train[{k}]"),
        vec![x, gamma, beta],
        move |t, nodes| {
            let s = t.batch_norm_train(nodes[0], nodes[1], nodes[2], 1e-5)?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_batch_norm_eval(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "batch_norm_eval", k);
    let n = rng.gen_range(1..=3usize);
    let h = rng.gen_range(2..=4usize);
    let w = rng.gen_range(2..=4usize);
    let c = rng.gen_range(1..=3usize);
    let x = rand_tensor(&mut rng, &[n, h, w, c], -1.0, 1.0);
    let gamma = signed_tensor(&mut rng, &[c], 0.3, 1.5);
    let beta = rand_tensor(&mut rng, &[c], -0.5, 0.5);
    let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.3..1.5)).collect();
    let ws = weights_like(&mut rng, &[n, h, w, c]);
    Ok(leaf_case(
        format!("batch_norm_eval[{k}]"),
        vec![x, gamma, beta],
        move |t, nodes| {
            let s = t.batch_norm_eval(nodes[0], nodes[1], nodes[2], &mean, &var, 1e-5)?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_channel_avg_pool(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "channel_avg_pool", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w, 1]);
    Ok(leaf_case(
        format!("channel_avg_pool[{k}]"),
        vec![a],
        move |t, n| {
            let s = t.channel_avg_pool(n[0])?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_channel_max_pool(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "channel_max_pool", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = channel_separated(&mut rng, h, w, c, 1e-3);
    let ws = weights_like(&mut rng, &[h, w, 1]);
    Ok(leaf_case(
        format!("channel_max_pool[{k}]"),
        vec![a],
        move |t, n| {
            let s = t.channel_max_pool(n[0])?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_global_avg_pool(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "global_avg_pool", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[c]);
    Ok(leaf_case(
        format!("global_avg_pool[{k}]"),
        vec![a],
        move |t, n| {
            let s = t.global_avg_pool(n[0])?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_linear(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "linear", k);
    let din = rng.gen_range(2..=5usize);
    let dout = rng.gen_range(2..=5usize);
    let x = rand_tensor(&mut rng, &[din], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[din, dout], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[dout], -0.5, 0.5);
    let ws = weights_like(&mut rng, &[dout]);
    Ok(leaf_case(
        format!("linear[{k}]"),
        vec![x, w, b],
        move |t, n| {
            let s = t.linear(n[0], n[1], n[2])?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_log_softmax(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "log_softmax", k);
    let n = rng.gen_range(2..=6usize);
    let x = rand_tensor(&mut rng, &[n], -2.0, 2.0);
    let ws = weights_like(&mut rng, &[n]);
    Ok(leaf_case(format!("log_softmax[{k}]"), vec![x], move |t, nodes| {
        let s = t.log_softmax(nodes[0])?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_softmax(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "softmax", k);
    let n = rng.gen_range(2..=6usize);
    let x = rand_tensor(&mut rng, &[n], -2.0, 2.0);
    let ws = weights_like(&mut rng, &[n]);
    Ok(leaf_case(format!("softmax[{k}]"), vec![x], move |t, nodes| {
        let s = t.softmax(nodes[0])?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_l2_normalize(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "l2_normalize", k);
    let d = rng.gen_range(2..=6usize);
    let x = signed_tensor(&mut rng, &[d], 0.3, 1.5);
    let ws = weights_like(&mut rng, &[d]);
    Ok(leaf_case(format!("l2_normalize[{k}]"), vec![x], move |t, n| {
        let s = t.l2_normalize(n[0])?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_rfft2(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "rfft2", k);
    let h = rng.gen_range(1..=6usize);
    let w = rng.gen_range(1..=6usize);
    let c = rng.gen_range(1..=3usize);
    let x = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w / 2 + 1, c, 2]);
    Ok(leaf_case(format!("rfft2[{k}]"), vec![x], move |t, n| {
        let s = t.rfft2(n[0])?;
        weighted_sum(t, s, &ws)
    }))
}

fn gen_irfft2(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "irfft2", k);
    let h = rng.gen_range(1..=6usize);
    let w = rng.gen_range(1..=6usize);
    let c = rng.gen_range(1..=3usize);
    let x = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("irfft2[{k}]"), vec![x], move |t, n| {
        let s = t.rfft2(n[0])?;
        let y = t.irfft2(s, w)?;
        weighted_sum(t, y, &ws)
    }))
}

fn gen_amplitude(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "amplitude", k);
    let h = rng.gen_range(2..=6usize);
    let w = rng.gen_range(2..=6usize);
    let c = rng.gen_range(1..=3usize);
    let x = amplitude_floored_image(&mut rng, h, w, c)?;
    let ws = weights_like(&mut rng, &[h, w / 2 + 1, c]);
    Ok(leaf_case(format!("amplitude[{k}]"), vec![x], move |t, n| {
        let s = t.rfft2(n[0])?;
        let a = t.amplitude(s)?;
        weighted_sum(t, a, &ws)
    }))
}

fn gen_phase(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "phase", k);
    let h = rng.gen_range(2..=6usize);
    let w = rng.gen_range(2..=6usize);
    let c = rng.gen_range(1..=3usize);
    let x = amplitude_floored_image(&mut rng, h, w, c)?;
    let ws = weights_like(&mut rng, &[h, w / 2 + 1, c]);
    Ok(leaf_case(format!("phase[{k}]"), vec![x], move |t, n| {
        let s = t.rfft2(n[0])?;
        let p = t.phase(s)?;
        weighted_sum(t, p, &ws)
    }))
}

fn gen_polar_compose(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "polar_compose", k);
    let h = rng.gen_range(2..=6usize);
    let wh = rng.gen_range(1..=4usize);
    let c = rng.gen_range(1..=3usize);
    let amp = rand_tensor(&mut rng, &[h, wh, c], 0.3, 1.5);
    let phase = rand_tensor(&mut rng, &[h, wh, c], -2.8, 2.8);
    let ws = weights_like(&mut rng, &[h, wh, c, 2]);
    Ok(leaf_case(
        format!("polar_compose[{k}]"),
        vec![amp, phase],
        move |t, n| {
            let s = t.polar_compose(n[0], n[1])?;
            weighted_sum(t, s, &ws)
        },
    ))
}

fn gen_symmetrize_mask(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "symmetrize_mask", k);
    let h = rng.gen_range(2..=6usize);
    let w = rng.gen_range(2..=6usize);
    let m = rand_tensor(&mut rng, &[h, w / 2 + 1, 1], 0.0, 1.0);
    let ws = weights_like(&mut rng, &[h, w / 2 + 1, 1]);
    Ok(leaf_case(
        format!("symmetrize_mask[{k}]"),
        vec![m],
        move |t, n| {
            let s = t.symmetrize_mask(n[0], w)?;
            weighted_sum(t, s, &ws)
        },
    ))
}

/// The whole filter tail: decompose, mask the amplitudes, recompose, invert.
fn gen_spectral_pipeline(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "spectral_pipeline", k);
    let h = rng.gen_range(2..=6usize);
    let w = rng.gen_range(2..=6usize);
    let c = rng.gen_range(1..=3usize);
    let img = amplitude_floored_image(&mut rng, h, w, c)?;
    let mask = rand_tensor(&mut rng, &[h, w / 2 + 1, 1], 0.2, 0.9);
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(
        format!("spectral_pipeline[{k}]"),
        vec![img, mask],
        move |t, n| {
            let s = t.rfft2(n[0])?;
            let a = t.amplitude(s)?;
            let p = t.phase(s)?;
            let m = t.symmetrize_mask(n[1], w)?;
            let fa = t.mul_broadcast_last(a, m)?;
            let composed = t.polar_compose(fa, p)?;
            let y = t.irfft2(composed, w)?;
            weighted_sum(t, y, &ws)
        },
    ))
}

fn gen_ppnorm(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "ppnorm", k);
    let h = rng.gen_range(2..=6usize);
    let w = rng.gen_range(2..=6usize);
    let c = rng.gen_range(1..=3usize);
    let z = normalization_safe_image(&mut rng, h, w, c)?;
    let ws = weights_like(&mut rng, &[h, w, c]);
    Ok(leaf_case(format!("ppnorm[{k}]"), vec![z], move |t, n| {
        let y = ppnorm::ppnorm(t, n[0], 1e-5)?;
        weighted_sum(t, y, &ws)
    }))
}

fn gen_iaf_image(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "iaf_image", k);
    let h = rng.gen_range(3..=6usize);
    let w = rng.gen_range(3..=6usize);
    let images = vec![
        amplitude_floored_image(&mut rng, h, w, 3)?,
        amplitude_floored_image(&mut rng, h, w, 3)?,
    ];
    let cfg = IafConfig {
        in_channels: 3,
        hidden_channels: 4,
        log_compress: k % 4 < 2,
        bn_eps: 1e-5,
    };
    let train = k % 2 == 0;
    let mut store = ParamStore::new();
    let iaf = Iaf::register(&mut store, &cfg, "iaf.", &mut rng)?;
    let w_img = weights_like(&mut rng, &[h, w, 3]);
    let w_mask = weights_like(&mut rng, &[h, w / 2 + 1, 1]);
    Ok(leaf_case(format!("iaf_image[{k}]"), images, move |t, n| {
        let fwd = iaf.forward(t, &store, n, train)?;
        let mut total = t.scalar_const(0.0);
        for (&f, &m) in fwd.filtered.iter().zip(&fwd.masks) {
            let a = weighted_sum(t, f, &w_img)?;
            let b = weighted_sum(t, m, &w_mask)?;
            let s = t.add(a, b)?;
            total = t.add(total, s)?;
        }
        Ok(total)
    }))
}

fn gen_iaf_params(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "iaf_params", k);
    let h = rng.gen_range(3..=6usize);
    let w = rng.gen_range(3..=6usize);
    let images = vec![
        amplitude_floored_image(&mut rng, h, w, 3)?,
        amplitude_floored_image(&mut rng, h, w, 3)?,
    ];
    let cfg = IafConfig {
        in_channels: 3,
        hidden_channels: 4,
        log_compress: k % 4 < 2,
        bn_eps: 1e-5,
    };
    let train = k % 2 == 0;
    let mut store = ParamStore::new();
    let iaf = Iaf::register(&mut store, &cfg, "iaf.", &mut rng)?;
    let w_img = weights_like(&mut rng, &[h, w, 3]);
    Ok(Case::Params(ParamCase {
        name: format!("iaf_params[{k}]"),
        store,
        build: Box::new(move |t, s| {
            let nodes: Vec<NodeId> = images.iter().map(|i| t.constant(i.clone())).collect();
            let fwd = iaf.forward(t, s, &nodes, train)?;
            let mut total = t.scalar_const(0.0);
            for &f in &fwd.filtered {
                let a = weighted_sum(t, f, &w_img)?;
                total = t.add(total, a)?;
            }
            Ok(total)
        }),
    }))
}

/// The full network trained end to end: every parameter of every partition
/// against the combined training objective.
fn gen_model_full(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "model_full", k);
    let cfg = ModelConfig {
        in_channels: 3,
        stage_channels: vec![2, 3],
        num_identities: 2,
        disc_hidden: 3,
        iaf: IafConfig {
            in_channels: 3,
            hidden_channels: 3,
            log_compress: true,
            bn_eps: 1e-5,
        },
        ppnorm: crate::ppnorm::PPNormConfig {
            eps: 1e-5,
            stages: vec![2],
        },
        ..ModelConfig::default()
    };
    let model_seed = rng.gen::<u64>();
    let model = Model::new(&cfg, model_seed)?;
    let images: Vec<Tensor> = (0..4)
        .map(|_| amplitude_floored_image(&mut rng, 6, 6, 3))
        .collect::<Result<_>>()?;
    let weights = LossWeights::default();
    let far = Tensor::full(&[6, 6, 3], 2.0);
    let cfg2 = cfg.clone();
    Ok(Case::Params(ParamCase {
        name: format!("model_full[{k}]"),
        store: model.store.clone(),
        build: Box::new(move |t, s| {
            let mut m = Model::new(&cfg2, 0)?;
            m.store.load_values_from(s)?;
            let nodes: Vec<NodeId> = images.iter().map(|i| t.constant(i.clone())).collect();
            let out = m.forward(t, &nodes, true)?;
            let preds = m.discriminate(t, &out.embeddings)?;
            let confusion = losses::confusion_loss(t, &preds)?;
            let identity = losses::identity_loss(
                t,
                &out.logits[..2],
                &[0, 1],
                &out.logits[2..],
                &[0, 1],
            )?;
            let anchor = t.constant(far.clone());
            let consistency = losses::consistency_loss(t, &[out.filtered[0]], &[anchor])?;
            let cc = losses::center_cluster_loss(
                t,
                &out.embeddings,
                &[0, 1, 0, 1],
                weights.rho,
            )?;
            losses::total_loss(t, confusion, identity, consistency, cc, &weights)
        }),
    }))
}

fn gen_consistency(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "loss_consistency", k);
    let (h, w, c) = small_dims(&mut rng);
    let a = rand_tensor(&mut rng, &[h, w, c], -1.0, 1.0);
    let delta = signed_tensor(&mut rng, &[h, w, c], 0.05, 0.8);
    let b = Tensor::from_fn(&[h, w, c], |i| a.data()[i] + delta.data()[i]);
    Ok(leaf_case(
        format!("loss_consistency[{k}]"),
        vec![a, b],
        move |t, n| losses::consistency_loss(t, &[n[0]], &[n[1]]),
    ))
}

fn gen_discriminator_loss(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "loss_discriminator", k);
    let n = rng.gen_range(2..=4usize);
    let leaves: Vec<Tensor> = (0..n)
        .map(|_| rand_tensor(&mut rng, &[2], -2.0, 2.0))
        .collect();
    let labels: Vec<Modality> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                Modality::Visible
            } else {
                Modality::Infrared
            }
        })
        .collect();
    Ok(leaf_case(
        format!("loss_discriminator[{k}]"),
        leaves,
        move |t, nodes| {
            let preds: Vec<NodeId> = nodes
                .iter()
                .map(|&x| t.softmax(x))
                .collect::<Result<_>>()?;
            losses::discriminator_loss(t, &preds, &labels)
        },
    ))
}

fn gen_confusion_loss(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "loss_confusion", k);
    let n = rng.gen_range(2..=4usize);
    let leaves: Vec<Tensor> = (0..n)
        .map(|_| rand_tensor(&mut rng, &[2], -2.0, 2.0))
        .collect();
    Ok(leaf_case(
        format!("loss_confusion[{k}]"),
        leaves,
        move |t, nodes| {
            let preds: Vec<NodeId> = nodes
                .iter()
                .map(|&x| t.softmax(x))
                .collect::<Result<_>>()?;
            losses::confusion_loss(t, &preds)
        },
    ))
}

fn gen_identity_loss(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "loss_identity", k);
    let classes = rng.gen_range(2..=5usize);
    let nv = rng.gen_range(1..=3usize);
    let ni = rng.gen_range(1..=3usize);
    let leaves: Vec<Tensor> = (0..nv + ni)
        .map(|_| rand_tensor(&mut rng, &[classes], -2.0, 2.0))
        .collect();
    let lv: Vec<usize> = (0..nv).map(|_| rng.gen_range(0..classes)).collect();
    let li: Vec<usize> = (0..ni).map(|_| rng.gen_range(0..classes)).collect();
    Ok(leaf_case(
        format!("loss_identity[{k}]"),
        leaves,
        move |t, nodes| losses::identity_loss(t, &nodes[..nv], &lv, &nodes[nv..], &li),
    ))
}

fn gen_center_cluster_loss(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "loss_center_cluster", k);
    let ids = rng.gen_range(2..=3usize);
    let d = rng.gen_range(2..=4usize);
    let rho = 1.0;
    let (feats, labels) = clustered_features(&mut rng, ids, 2, d, rho);
    Ok(leaf_case(
        format!("loss_center_cluster[{k}]"),
        feats,
        move |t, nodes| losses::center_cluster_loss(t, nodes, &labels, rho),
    ))
}

/// All four training terms combined with their weights.
fn gen_total_loss(seed: u64, k: usize) -> Result<Case> {
    let mut rng = rng_for(seed, "loss_total", k);
    let d = 3;
    let classes = 2;
    let weights = LossWeights::default();
    let map_a = rand_tensor(&mut rng, &[3, 3, 2], -1.0, 1.0);
    let delta = signed_tensor(&mut rng, &[3, 3, 2], 0.05, 0.8);
    let map_b = Tensor::from_fn(&[3, 3, 2], |i| map_a.data()[i] + delta.data()[i]);
    let (feats, labels) = clustered_features(&mut rng, 2, 2, d, weights.rho);
    let logits: Vec<Tensor> = (0..4)
        .map(|_| rand_tensor(&mut rng, &[classes], -2.0, 2.0))
        .collect();
    let disc: Vec<Tensor> = (0..4)
        .map(|_| rand_tensor(&mut rng, &[2], -2.0, 2.0))
        .collect();
    let mut leaves = vec![map_a, map_b];
    leaves.extend(feats);
    leaves.extend(logits);
    leaves.extend(disc);
    Ok(leaf_case(format!("loss_total[{k}]"), leaves, move |t, n| {
        let consistency = losses::consistency_loss(t, &[n[0]], &[n[1]])?;
        let cc = losses::center_cluster_loss(t, &n[2..6], &labels, weights.rho)?;
        let identity = losses::identity_loss(t, &n[6..8], &[0, 1], &n[8..10], &[0, 1])?;
        let preds: Vec<NodeId> = n[10..14]
            .iter()
            .map(|&x| t.softmax(x))
            .collect::<Result<_>>()?;
        let confusion = losses::confusion_loss(t, &preds)?;
        losses::total_loss(t, confusion, identity, consistency, cc, &weights)
    }))
}

fn families() -> Vec<FamilySpec> {
    vec![
        FamilySpec { name: "add", cap: None, gen: gen_add },
        FamilySpec { name: "sub", cap: None, gen: gen_sub },
        FamilySpec { name: "mul", cap: None, gen: gen_mul },
        FamilySpec { name: "mul_broadcast_last", cap: None, gen: gen_mul_broadcast_last },
        FamilySpec { name: "scale", cap: None, gen: gen_scale },
        FamilySpec { name: "abs", cap: None, gen: gen_abs },
        FamilySpec { name: "relu", cap: None, gen: gen_relu },
        FamilySpec { name: "sigmoid", cap: None, gen: gen_sigmoid },
        FamilySpec { name: "sqrt", cap: None, gen: gen_sqrt },
        FamilySpec { name: "log1p", cap: None, gen: gen_log1p },
        FamilySpec { name: "ln_clamped", cap: None, gen: gen_ln_clamped },
        FamilySpec { name: "sum", cap: None, gen: gen_sum },
        FamilySpec { name: "pick", cap: None, gen: gen_pick },
        FamilySpec { name: "mean_scalars", cap: None, gen: gen_mean_scalars },
        FamilySpec { name: "concat", cap: None, gen: gen_concat },
        FamilySpec { name: "stack_index", cap: None, gen: gen_stack_index },
        FamilySpec { name: "conv2d", cap: None, gen: gen_conv2d },
        FamilySpec { name: "avg_pool2", cap: None, gen: gen_avg_pool2 },
        FamilySpec { name: "instance_norm", cap: None, gen: gen_instance_norm },
        FamilySpec { name: "batch_norm_train", cap: None, gen: gen_batch_norm_train },
        FamilySpec { name: "batch_norm_eval", cap: None, gen: gen_batch_norm_eval },
        FamilySpec { name: "channel_avg_pool", cap: None, gen: gen_channel_avg_pool },
        FamilySpec { name: "channel_max_pool", cap: None, gen: gen_channel_max_pool },
        FamilySpec { name: "global_avg_pool", cap: None, gen: gen_global_avg_pool },
        FamilySpec { name: "linear", cap: None, gen: gen_linear },
        FamilySpec { name: "log_softmax", cap: None, gen: gen_log_softmax },
        FamilySpec { name: "softmax", cap: None, gen: gen_softmax },
        FamilySpec { name: "l2_normalize", cap: None, gen: gen_l2_normalize },
        FamilySpec { name: "rfft2", cap: None, gen: gen_rfft2 },
        FamilySpec { name: "irfft2", cap: None, gen: gen_irfft2 },
        FamilySpec { name: "amplitude", cap: None, gen: gen_amplitude },
        FamilySpec { name: "phase", cap: None, gen: gen_phase },
        FamilySpec { name: "polar_compose", cap: None, gen: gen_polar_compose },
        FamilySpec { name: "symmetrize_mask", cap: None, gen: gen_symmetrize_mask },
        FamilySpec { name: "spectral_pipeline", cap: None, gen: gen_spectral_pipeline },
        FamilySpec { name: "ppnorm", cap: None, gen: gen_ppnorm },
        FamilySpec { name: "iaf_image", cap: None, gen: gen_iaf_image },
        FamilySpec { name: "loss_consistency", cap: None, gen: gen_consistency },
        FamilySpec { name: "loss_discriminator", cap: None, gen: gen_discriminator_loss },
        FamilySpec { name: "loss_confusion", cap: None, gen: gen_confusion_loss },
        FamilySpec { name: "loss_identity", cap: None, gen: gen_identity_loss },
        FamilySpec { name: "loss_center_cluster", cap: None, gen: gen_center_cluster_loss },
        FamilySpec { name: "loss_total", cap: None, gen: gen_total_loss },
        FamilySpec { name: "iaf_params", cap: Some(6), gen: gen_iaf_params },
        FamilySpec { name: "model_full", cap: Some(2), gen: gen_model_full },
    ]
}

/// Runs the whole suite: `instances` random instances per operation family
/// (expensive end-to-end composites are capped lower), deterministic in
/// `seed`. Returns one aggregated report per family.
pub fn run_standard(instances: usize, seed: u64) -> Result<Vec<FamilyReport>> {
    if instances == 0 {
        return Err(Error::invalid("need at least one instance per family"));
    }
    let mut reports = Vec::new();
    for family in families() {
        let n = family.cap.map_or(instances, |c| c.min(instances));
        let mut checks = 0;
        let mut max_rel_err = 0.0f64;
        let mut worst_instance = 0;
        for k in 0..n {
            let case = (family.gen)(seed, k)?;
            let report = check(&case)?;
            checks += report.checks;
            if report.max_rel_err > max_rel_err {
                max_rel_err = report.max_rel_err;
                worst_instance = k;
            }
        }
        reports.push(FamilyReport {
            name: family.name.into(),
            instances: n,
            checks,
            max_rel_err,
            worst_instance,
        });
    }
    Ok(reports)
}
