//! Randomized finite-difference checks over every tape op, both encoders
//! and the three end-to-end fusion models, shared by the test suite and
//! the `gradcheck` CLI command.

use rand::Rng;

use crate::audio::FeatureImage;
use crate::autodiff::init::{rng, uniform, SeededRng};
use crate::autodiff::{grad_check, Bound, GradCheckReport, Graph, Tensor, Var};
use crate::chat::{TokenSequence, CLS, SEP};
use crate::encoders::{EncoderConfig, TextConfig, TextEncoder, VisionConfig, VisionEncoder};
use crate::error::Result;
use crate::fusion::{FusionKind, FusionModel, ModelConfig};
use crate::parallel::Execution;

/// Tolerance for ops without kinks.
pub const SMOOTH_TOL: f64 = 1e-6;
/// Default tolerance.
pub const DEFAULT_TOL: f64 = 1e-4;

type CaseFn = fn(u64, f64) -> Result<GradCheckReport>;

#[derive(Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    pub tol: f64,
    run: CaseFn,
}

impl std::fmt::Debug for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Case").field("name", &self.name).field("tol", &self.tol).finish()
    }
}

impl Case {
    pub fn run(&self, seed: u64) -> Result<GradCheckReport> {
        (self.run)(seed, self.tol)
    }
}

/// Aggregate over seeds for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub tol: f64,
    pub seeds: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// Seeds with at least one failing entry.
    pub failed_seeds: Vec<u64>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.failed_seeds.is_empty() && self.checked > 0
    }
}

pub fn op_cases() -> Vec<Case> {
    let c = |name, tol, run| Case { name, tol, run };
    vec![
        c("matmul", SMOOTH_TOL, op_matmul as CaseFn),
        c("matmul_batched", SMOOTH_TOL, op_matmul_batched),
        c("add", SMOOTH_TOL, op_add),
        c("add_bias", SMOOTH_TOL, op_add_bias),
        c("sub", SMOOTH_TOL, op_sub),
        c("mul", SMOOTH_TOL, op_mul),
        c("scale", SMOOTH_TOL, op_scale),
        c("concat", SMOOTH_TOL, op_concat),
        c("mean", SMOOTH_TOL, op_mean),
        c("transpose", SMOOTH_TOL, op_transpose),
        c("reshape", SMOOTH_TOL, op_reshape),
        c("slice", SMOOTH_TOL, op_slice),
        c("embedding", SMOOTH_TOL, op_embedding),
        c("masked_fill", SMOOTH_TOL, op_masked_fill),
        c("tanh", SMOOTH_TOL, op_tanh),
        c("sigmoid", SMOOTH_TOL, op_sigmoid),
        c("relu", DEFAULT_TOL, op_relu),
        c("map", SMOOTH_TOL, op_map),
        c("layer_norm", SMOOTH_TOL, op_layer_norm),
        c("softmax", SMOOTH_TOL, op_softmax),
        c("cross_entropy", SMOOTH_TOL, op_cross_entropy),
    ]
}

pub fn model_cases() -> Vec<Case> {
    let c = |name, run| Case {
        name,
        tol: DEFAULT_TOL,
        run,
    };
    vec![
        c("vision_encoder", vision_encoder as CaseFn),
        c("text_encoder", text_encoder),
        c("model_concat", model_concat),
        c("model_gmu", model_gmu),
        c("model_crossattn", model_crossattn),
    ]
}

pub fn all_cases() -> Vec<Case> {
    let mut v = op_cases();
    v.extend(model_cases());
    v
}

/// Run `case` for seeds `0..seeds`.
pub fn run_case(case: &Case, seeds: usize, exec: Execution) -> Result<CaseResult> {
    let reports = exec.map_range(seeds, |s| case.run(s as u64));
    let mut out = CaseResult {
        name: case.name,
        tol: case.tol,
        seeds,
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        failed_seeds: Vec::new(),
    };
    for (seed, report) in reports.into_iter().enumerate() {
        let report = report?;
        out.checked += report.checked;
        out.skipped_kinks += report.skipped_kinks;
        out.max_rel_error = out.max_rel_error.max(report.max_rel_error);
        if !report.passed() {
            out.failed_seeds.push(seed as u64);
        }
    }
    Ok(out)
}

// ---- helpers ------------------------------------------------------------

fn rand_shape(r: &mut SeededRng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| r.random_range(1..=4)).collect()
}

/// Entries `±U(0.5, 1.5)`: signed but bounded away from zero, so that
/// gradient entries rarely fall to the finite-difference noise floor.
fn randn(r: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
    let mut t: Tensor<f64> = uniform(r, shape, 0.5, 1.5);
    for v in t.data_mut() {
        if r.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// `Σ out ⊙ w` for a fixed random `w`, turning any tensor into a scalar
/// whose gradient reaches every output entry with a distinct weight.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut r = rng(seed ^ 0x9E37_79B9_7F4A_7C15);
    let w = g.constant(uniform(&mut r, &shape, 0.5, 1.5));
    let prod = g.mul(out, w)?;
    let flat = g.reshape(prod, &[1, n])?;
    let m = g.mean(flat, 1)?;
    g.scale(m, n as f64)
}

fn check1(
    seed: u64,
    tol: f64,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    grad_check(
        &inputs,
        |g, v| {
            let out = f(g, v)?;
            project(g, out, seed)
        },
        tol,
    )
}

// ---- op cases -------------------------------------------------------------

fn op_matmul(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 3);
    let inputs = vec![randn(&mut r, &[s[0], s[1]]), randn(&mut r, &[s[1], s[2]])];
    check1(seed, tol, inputs, |g, v| g.matmul(v[0], v[1]))
}

fn op_matmul_batched(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 4);
    let inputs = vec![randn(&mut r, &[s[0], s[1], s[2]]), randn(&mut r, &[s[0], s[2], s[3]])];
    check1(seed, tol, inputs, |g, v| g.matmul(v[0], v[1]))
}

fn op_add(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 3);
    let inputs = vec![randn(&mut r, &s), randn(&mut r, &s)];
    check1(seed, tol, inputs, |g, v| g.add(v[0], v[1]))
}

fn op_add_bias(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 3);
    let inputs = vec![randn(&mut r, &s), randn(&mut r, &s[2..])];
    check1(seed, tol, inputs, |g, v| g.add(v[0], v[1]))
}

fn op_sub(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 2);
    let inputs = vec![randn(&mut r, &s), randn(&mut r, &s)];
    check1(seed, tol, inputs, |g, v| g.sub(v[0], v[1]))
}

fn op_mul(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 2);
    let inputs = vec![randn(&mut r, &s), randn(&mut r, &s)];
    check1(seed, tol, inputs, |g, v| g.mul(v[0], v[1]))
}

fn op_scale(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 2);
    let factor = r.random_range(-2.0..2.0);
    let inputs = vec![randn(&mut r, &s)];
    check1(seed, tol, inputs, move |g, v| g.scale(v[0], factor))
}

fn op_concat(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let axis = r.random_range(0..3);
    let mut a = rand_shape(&mut r, 3);
    let mut b = a.clone();
    a[axis] = r.random_range(1..=3);
    b[axis] = r.random_range(1..=3);
    let inputs = vec![randn(&mut r, &a), randn(&mut r, &b)];
    check1(seed, tol, inputs, move |g, v| g.concat(v, axis))
}

fn op_mean(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let axis = r.random_range(0..3);
    let s = rand_shape(&mut r, 3);
    let inputs = vec![randn(&mut r, &s)];
    check1(seed, tol, inputs, move |g, v| g.mean(v[0], axis))
}

fn op_transpose(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 3);
    let inputs = vec![randn(&mut r, &s)];
    check1(seed, tol, inputs, |g, v| g.transpose(v[0]))
}

fn op_reshape(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 3);
    let inputs = vec![randn(&mut r, &s)];
    check1(seed, tol, inputs, move |g, v| g.reshape(v[0], &[s[0] * s[1], s[2]]))
}

fn op_slice(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let axis = r.random_range(0..3);
    let s = rand_shape(&mut r, 3);
    let start = r.random_range(0..s[axis]);
    let len = r.random_range(1..=s[axis] - start);
    let inputs = vec![randn(&mut r, &s)];
    check1(seed, tol, inputs, move |g, v| g.slice(v[0], axis, start, len))
}

fn op_embedding(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (vocab, d) = (r.random_range(2..=6), r.random_range(1..=4));
    let ids: Vec<usize> = (0..r.random_range(1..=6)).map(|_| r.random_range(0..vocab)).collect();
    let inputs = vec![randn(&mut r, &[vocab, d])];
    check1(seed, tol, inputs, move |g, v| g.embedding(v[0], &ids))
}

fn op_masked_fill(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 2);
    let n = s[0] * s[1];
    let mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
    let fill = r.random_range(-1.0..1.0);
    let inputs = vec![randn(&mut r, &s)];
    check1(seed, tol, inputs, move |g, v| g.masked_fill(v[0], &mask, fill))
}

fn op_tanh(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 2);
    let inputs = vec![uniform(&mut r, &s, -2.0, 2.0)];
    check1(seed, tol, inputs, |g, v| g.tanh(v[0]))
}

fn op_sigmoid(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 2);
    let inputs = vec![uniform(&mut r, &s, -3.0, 3.0)];
    check1(seed, tol, inputs, |g, v| g.sigmoid(v[0]))
}

fn op_relu(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 2);
    let inputs = vec![randn(&mut r, &s)];
    check1(seed, tol, inputs, |g, v| g.relu(v[0]))
}

fn op_map(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let s = rand_shape(&mut r, 2);
    let inputs = vec![randn(&mut r, &s)];
    check1(seed, tol, inputs, |g, v| g.map(v[0], f64::exp, |_, y| y))
}

fn op_layer_norm(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    // Width 2 is degenerate: the normalized row is ±1 whatever the input.
    let mut s = rand_shape(&mut r, 2);
    s[1] = r.random_range(3..=6);
    let inputs = vec![
        randn(&mut r, &s),
        uniform(&mut r, &s[1..], 0.5, 1.5),
        randn(&mut r, &s[1..]),
    ];
    check1(seed, tol, inputs, |g, v| g.layer_norm(v[0], v[1], v[2]))
}

fn op_softmax(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let axis = r.random_range(0..3);
    let s = rand_shape(&mut r, 3);
    let inputs = vec![uniform(&mut r, &s, -2.0, 2.0)];
    check1(seed, tol, inputs, move |g, v| g.softmax(v[0], axis))
}

fn op_cross_entropy(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let b = r.random_range(1..=5);
    let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..2)).collect();
    let inputs = vec![uniform(&mut r, &[b, 2], -2.0, 2.0)];
    grad_check(&inputs, move |g, v| g.cross_entropy(v[0], &labels), tol)
}

// ---- model cases ----------------------------------------------------------

fn toy_encoder(r: &mut SeededRng) -> EncoderConfig {
    let heads = r.random_range(1..=2);
    EncoderConfig {
        depth: 1,
        width: 4,
        heads,
        mlp_dim: 8,
    }
}

fn toy_vision(r: &mut SeededRng) -> VisionConfig {
    VisionConfig {
        encoder: toy_encoder(r),
        image_side: 8,
        patch: 4,
    }
}

fn toy_text(r: &mut SeededRng) -> TextConfig {
    TextConfig {
        encoder: toy_encoder(r),
        vocab_size: 8,
        max_len: 4,
    }
}

fn random_image(r: &mut SeededRng, side: usize) -> FeatureImage {
    let data = (0..3 * side * side).map(|_| r.random_range(-1.0f32..1.0)).collect();
    FeatureImage::from_vec(side, data).expect("sized to side")
}

/// CLS, random words, SEP, then padding.
fn random_tokens(r: &mut SeededRng, cfg: &TextConfig) -> TokenSequence {
    let words = r.random_range(0..=cfg.max_len - 2);
    let mut ids = vec![CLS];
    ids.extend((0..words).map(|_| r.random_range(4..cfg.vocab_size as u32)));
    ids.push(SEP);
    let real = ids.len();
    ids.resize(cfg.max_len, 0);
    let attention_mask = (0..cfg.max_len).map(|i| u8::from(i < real)).collect();
    TokenSequence {
        ids,
        attention_mask,
        vocab_size: cfg.vocab_size,
    }
}

/// Move every parameter away from its structured initial value (zero
/// biases, unit gains) so the check is taken at a generic point.
fn jitter(r: &mut SeededRng, tensors: &mut [Tensor<f64>]) {
    for t in tensors {
        for v in t.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
}

fn vision_encoder(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let cfg = toy_vision(&mut r);
    let mut store = crate::autodiff::ParamStore::<f64>::new();
    let enc = VisionEncoder::register(cfg, &mut store, &mut r, "vision")?;
    let images = [random_image(&mut r, 8), random_image(&mut r, 8)];
    let mut inputs = store.tensors().to_vec();
    jitter(&mut r, &mut inputs);
    check1(seed, tol, inputs, |g, v| {
        let p = Bound::from_vars(v.to_vec());
        Ok(enc.encode(g, &p, &[&images[0], &images[1]])?.tokens)
    })
}

fn text_encoder(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let cfg = toy_text(&mut r);
    let mut store = crate::autodiff::ParamStore::<f64>::new();
    let enc = TextEncoder::register(cfg, &mut store, &mut r, "text")?;
    let seqs = [random_tokens(&mut r, &cfg), random_tokens(&mut r, &cfg)];
    let mut inputs = store.tensors().to_vec();
    jitter(&mut r, &mut inputs);
    check1(seed, tol, inputs, |g, v| {
        let p = Bound::from_vars(v.to_vec());
        Ok(enc.encode(g, &p, &[&seqs[0], &seqs[1]])?.tokens)
    })
}

/// Toy model for end-to-end checks.
pub fn toy_model_config(seed: u64) -> ModelConfig {
    let mut r = rng(seed);
    let (vision, text) = (toy_vision(&mut r), toy_text(&mut r));
    ModelConfig {
        vision,
        text,
        gmu_dim: 3,
        concat_hidden: 5,
    }
}

fn model_case(kind: FusionKind, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let cfg = toy_model_config(seed);
    let model = FusionModel::<f64>::new(kind, cfg, seed)?;
    let mut r = rng(seed.wrapping_add(1));
    let images = [random_image(&mut r, 8), random_image(&mut r, 8)];
    let seqs = [random_tokens(&mut r, &cfg.text), random_tokens(&mut r, &cfg.text)];
    let labels = [0usize, 1];
    let mut inputs = model.params.tensors().to_vec();
    jitter(&mut r, &mut inputs);
    grad_check(
        &inputs,
        |g, v| {
            let p = Bound::from_vars(v.to_vec());
            let out = model.forward_bound(g, &p, &[&images[0], &images[1]], &[&seqs[0], &seqs[1]])?;
            g.cross_entropy(out.logits, &labels)
        },
        tol,
    )
}

fn model_concat(seed: u64, tol: f64) -> Result<GradCheckReport> {
    model_case(FusionKind::Concat, seed, tol)
}

fn model_gmu(seed: u64, tol: f64) -> Result<GradCheckReport> {
    model_case(FusionKind::Gmu, seed, tol)
}

fn model_crossattn(seed: u64, tol: f64) -> Result<GradCheckReport> {
    model_case(FusionKind::CrossAttention, seed, tol)
}
