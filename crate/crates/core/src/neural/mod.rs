//! Message-passing network over employment graphs with hand-written
//! reverse-mode gradients.
//!
//! Every layer sends `MLP_m(x_u ⊕ e_uv)` along each edge, averages the
//! messages at the receiver (zero when isolated) and updates the state with
//! `MLP_u(x_v ⊕ mean)`. A policy head scores each vertex; a value head reads
//! the mean vertex state.

mod mlp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EmploymentGraph, Role};
pub use mlp::{Mlp, MlpTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnArch {
    /// Vertex feature dimension.
    pub d_v: usize,
    pub hidden: usize,
    pub layers: usize,
}

/// Edge features are scalars.
pub const EDGE_DIM: usize = 1;

impl GnnArch {
    pub fn new(d_v: usize) -> Self {
        GnnArch { d_v, hidden: 32, layers: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_v == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Shape(format!(
                "architecture needs d_v, hidden and layers >= 1, got {} / {} / {}",
                self.d_v, self.hidden, self.layers
            )));
        }
        Ok(())
    }
}

/// The MLPs of an architecture with their offsets in the flat vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub message: Vec<Mlp>,
    pub update: Vec<Mlp>,
    pub policy: Mlp,
    pub value: Mlp,
    pub len: usize,
}

impl Layout {
    pub fn of(arch: &GnnArch) -> Layout {
        let h = arch.hidden;
        let mut offset = 0;
        let mut take = |dims: Vec<usize>, squash: bool| {
            let m = Mlp::new(dims, squash, offset);
            offset += m.param_count();
            m
        };
        let mut message = Vec::new();
        let mut update = Vec::new();
        for l in 0..arch.layers {
            let d_in = if l == 0 { arch.d_v } else { h };
            message.push(take(vec![d_in + EDGE_DIM, h, h], true));
            update.push(take(vec![d_in + h, h, h], true));
        }
        let policy = take(vec![h, h, 1], false);
        let value = take(vec![h, h, 1], false);
        Layout { message, update, policy, value, len: offset }
    }

    fn all(&self) -> impl Iterator<Item = &Mlp> {
        self.message.iter().chain(&self.update).chain([&self.policy, &self.value])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub arch: GnnArch,
    pub values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(arch: GnnArch) -> Self {
        PolicyParams { arch, values: vec![0.0; Layout::of(&arch).len] }
    }

    pub fn layout(&self) -> Layout {
        Layout::of(&self.arch)
    }

    pub fn mean_abs(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the bit patterns
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.values {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: GnnArch, seed: u64) -> Result<PolicyParams> {
    arch.validate()?;
    let layout = Layout::of(&arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.len];
    for m in layout.all() {
        for k in 0..m.layers() {
            let (wo, bo) = m.layer_offsets(k);
            let (fan_in, fan_out) = (m.dims[k], m.dims[k + 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut values[wo..bo] {
                *w = rng.gen_range(-a..=a);
            }
        }
    }
    Ok(PolicyParams { arch, values })
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    fingerprint: u64,
    adjacency: Vec<Vec<(usize, f64)>>,
    /// `messages[l][v][k]`: message from the `k`-th neighbour of `v`.
    messages: Vec<Vec<Vec<MlpTrace>>>,
    updates: Vec<Vec<MlpTrace>>,
    policy: Vec<MlpTrace>,
    value: MlpTrace,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub scores: Vec<f64>,
    pub value: f64,
    pub cache: ForwardCache,
}

pub fn gnn_forward(params: &PolicyParams, graph: &EmploymentGraph) -> Result<Forward> {
    let arch = params.arch;
    let layout = params.layout();
    if params.values.len() != layout.len {
        return Err(Error::Shape(format!("{} parameters, layout needs {}", params.values.len(), layout.len)));
    }
    if let Some(f) = graph.features.iter().find(|f| f.len() != arch.d_v) {
        return Err(Error::Shape(format!("vertex features of width {}, expected {}", f.len(), arch.d_v)));
    }
    if graph.edges.iter().any(|e| e.a >= graph.len() || e.b >= graph.len()) {
        return Err(Error::Shape("edge endpoint outside the vertex set".into()));
    }
    let p = &params.values;
    let h = arch.hidden;
    let n = graph.len();
    let adjacency = graph.adjacency();
    let mut states: Vec<Vec<f64>> = graph.features.clone();
    let mut messages = Vec::with_capacity(arch.layers);
    let mut updates = Vec::with_capacity(arch.layers);
    for l in 0..arch.layers {
        let mut layer_msgs = Vec::with_capacity(n);
        let mut layer_ups = Vec::with_capacity(n);
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let mut agg = vec![0.0; h];
            let mut traces = Vec::with_capacity(adjacency[v].len());
            for &(u, e) in &adjacency[v] {
                let mut input = states[u].clone();
                input.push(e);
                let t = layout.message[l].forward(p, &input);
                for (a, m) in agg.iter_mut().zip(t.output()) {
                    *a += m;
                }
                traces.push(t);
            }
            if !traces.is_empty() {
                let k = traces.len() as f64;
                agg.iter_mut().for_each(|a| *a /= k);
            }
            let mut input = states[v].clone();
            input.extend_from_slice(&agg);
            let t = layout.update[l].forward(p, &input);
            next.push(t.output().to_vec());
            layer_msgs.push(traces);
            layer_ups.push(t);
        }
        states = next;
        messages.push(layer_msgs);
        updates.push(layer_ups);
    }
    let policy: Vec<MlpTrace> = states.iter().map(|x| layout.policy.forward(p, x)).collect();
    let mut readout = vec![0.0; h];
    for x in &states {
        for (r, v) in readout.iter_mut().zip(x) {
            *r += v;
        }
    }
    if n > 0 {
        readout.iter_mut().for_each(|r| *r /= n as f64);
    }
    let value = layout.value.forward(p, &readout);
    Ok(Forward {
        scores: policy.iter().map(|t| t.output()[0]).collect(),
        value: value.output()[0],
        cache: ForwardCache { fingerprint: params.fingerprint(), adjacency, messages, updates, policy, value },
    })
}

/// Softmax over the unmasked entries; masked entries get probability 0.
pub fn policy_distribution(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::Shape(format!("{} scores, {} mask entries", scores.len(), mask.len())));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let max = scores.iter().zip(mask).filter(|(_, m)| **m).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Feasibility("every action is masked".into()));
    }
    let exp: Vec<f64> = scores.iter().zip(mask).map(|(s, m)| if *m { (s - max).exp() } else { 0.0 }).collect();
    let z: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / z).collect())
}

/// Logit source of one option in a choice group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Logit {
    /// Score of a graph vertex.
    Vertex(usize),
    /// Constant logit, e.g. 0 for "skip".
    Fixed,
}

/// A softmax over some vertices (plus optional fixed-logit options), the
/// option that was taken and its advantage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub options: Vec<Logit>,
    pub taken: usize,
    pub advantage: f64,
}

impl Choice {
    pub fn logits(&self, scores: &[f64]) -> Vec<f64> {
        self.options
            .iter()
            .map(|o| match o {
                Logit::Vertex(v) => scores[*v],
                Logit::Fixed => 0.0,
            })
            .collect()
    }

    pub fn probabilities(&self, scores: &[f64]) -> Vec<f64> {
        let logits = self.logits(scores);
        policy_distribution(&logits, &vec![true; logits.len()]).unwrap_or_default()
    }
}

/// Loss = Σ_choices [−log π(taken)·A − β·H(π)] + c·Σ_returns (V − R)².
/// Advantages are constants of the loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub choices: Vec<Choice>,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub returns: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grads {
    pub values: Vec<f64>,
    pub loss: f64,
    pub entropy: f64,
}

impl Grads {
    pub fn zeros(len: usize) -> Self {
        Grads { values: vec![0.0; len], loss: 0.0, entropy: 0.0 }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        self.loss += other.loss;
        self.entropy += other.entropy;
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Loss value and its gradient with respect to vertex scores and value.
fn loss_terms(scores: &[f64], value: f64, spec: &LossSpec) -> Result<(f64, f64, Vec<f64>, f64)> {
    let mut loss = spec.returns.iter().map(|r| spec.value_weight * (value - r).powi(2)).sum::<f64>();
    let dvalue = spec.returns.iter().map(|r| 2.0 * spec.value_weight * (value - r)).sum::<f64>();
    let mut dscores = vec![0.0; scores.len()];
    let mut total_entropy = 0.0;
    for c in &spec.choices {
        if c.taken >= c.options.len() {
            return Err(Error::Decision(format!("option {} of {}", c.taken, c.options.len())));
        }
        if let Some(Logit::Vertex(v)) = c.options.iter().find(|o| matches!(o, Logit::Vertex(v) if *v >= scores.len())) {
            return Err(Error::Shape(format!("choice refers to vertex {v} of {}", scores.len())));
        }
        let p = c.probabilities(scores);
        let h = entropy(&p);
        total_entropy += h;
        loss += -p[c.taken].ln() * c.advantage - spec.entropy_weight * h;
        for (k, o) in c.options.iter().enumerate() {
            let Logit::Vertex(v) = *o else { continue };
            let pk = p[k];
            let hit = if k == c.taken { 1.0 } else { 0.0 };
            let mut dz = -c.advantage * (hit - pk);
            if pk > 0.0 {
                dz += spec.entropy_weight * pk * (pk.ln() + h);
            }
            dscores[v] += dz;
        }
    }
    Ok((loss, total_entropy, dscores, dvalue))
}

/// Scalar loss of a fresh forward pass; the finite-difference reference.
pub fn loss_value(params: &PolicyParams, graph: &EmploymentGraph, spec: &LossSpec) -> Result<f64> {
    let f = gnn_forward(params, graph)?;
    Ok(loss_terms(&f.scores, f.value, spec)?.0)
}

/// Exact gradient of the loss with respect to every parameter.
pub fn backward(
    params: &PolicyParams,
    graph: &EmploymentGraph,
    forward: &Forward,
    spec: &LossSpec,
) -> Result<Grads> {
    let cache = &forward.cache;
    if cache.fingerprint != params.fingerprint() || cache.policy.len() != graph.len() {
        return Err(Error::StaleCache("forward pass was run with other parameters or another graph".into()));
    }
    let arch = params.arch;
    let layout = params.layout();
    let p = &params.values;
    let n = graph.len();
    let (loss, entropy, dscores, dvalue) = loss_terms(&forward.scores, forward.value, spec)?;
    let mut grad = vec![0.0; p.len()];

    let mut dstates: Vec<Vec<f64>> = (0..n)
        .map(|v| layout.policy.backward(p, &cache.policy[v], &[dscores[v]], &mut grad))
        .collect();
    let dreadout = layout.value.backward(p, &cache.value, &[dvalue], &mut grad);
    if n > 0 {
        for ds in &mut dstates {
            for (d, r) in ds.iter_mut().zip(&dreadout) {
                *d += r / n as f64;
            }
        }
    }

    for l in (0..arch.layers).rev() {
        let d_in = if l == 0 { arch.d_v } else { arch.hidden };
        let mut dprev = vec![vec![0.0; d_in]; n];
        for v in 0..n {
            let dinput = layout.update[l].backward(p, &cache.updates[l][v], &dstates[v], &mut grad);
            for (d, x) in dprev[v].iter_mut().zip(&dinput[..d_in]) {
                *d += x;
            }
            let nbrs = &cache.adjacency[v];
            if nbrs.is_empty() {
                continue;
            }
            let dmsg: Vec<f64> = dinput[d_in..].iter().map(|d| d / nbrs.len() as f64).collect();
            for (k, &(u, _)) in nbrs.iter().enumerate() {
                let dm = layout.message[l].backward(p, &cache.messages[l][v][k], &dmsg, &mut grad);
                for (d, x) in dprev[u].iter_mut().zip(&dm[..d_in]) {
                    *d += x;
                }
            }
        }
        dstates = dprev;
    }
    Ok(Grads { values: grad, loss, entropy })
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub role: Role,
    pub store_version: u64,
    pub layout: Layout,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(role: Role, store_version: u64, params: PolicyParams) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, role, store_version, layout: params.layout(), params }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let c: Checkpoint = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Parse { field: e.path().to_string(), message: e.inner().to_string() })?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("checkpoint version {}, expected {CHECKPOINT_VERSION}", c.version)));
        }
        c.params.arch.validate()?;
        if c.layout != c.params.layout() || c.params.values.len() != c.layout.len {
            return Err(Error::Shape("checkpoint layout does not match its architecture".into()));
        }
        Ok(c)
    }
}
