//! Shared test helpers: random problems and a plain-loop reference model.
#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sap_core::sap::{
    AblationVariant, BranchFeature, BranchParams, ModelDims, ObjectBank, SapConfig, SapParams,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_params(rng: &mut ChaCha8Rng, dims: ModelDims, scale: f64) -> SapParams {
    let mut p = SapParams::zeros(dims);
    for t in p.tensors_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&uniform(rng, n, scale));
    }
    p
}

/// Bank of `n` rows, one frame per row, confidences non-increasing in-frame.
pub fn random_bank(rng: &mut ChaCha8Rng, n: usize, c: usize, scale: f64) -> ObjectBank {
    let conf: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    ObjectBank::new(uniform(rng, n * c, scale), c, conf, (0..n).collect()).unwrap()
}

pub struct Problem {
    pub params: SapParams,
    pub verb: BranchFeature,
    pub noun: BranchFeature,
    pub bank: ObjectBank,
}

impl Problem {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let dims = ModelDims {
            channels: r.random_range(1..=6),
            verbs: r.random_range(2..=5),
            nouns: r.random_range(2..=5),
        };
        let n = r.random_range(1..=8);
        Self::with_dims(&mut r, dims, n)
    }

    pub fn with_dims(r: &mut ChaCha8Rng, dims: ModelDims, n: usize) -> Self {
        let params = random_params(r, dims, 0.8);
        let verb = BranchFeature::verb(uniform(r, dims.channels, 1.5));
        let noun = BranchFeature::noun(uniform(r, dims.channels, 1.5));
        let bank = random_bank(r, n, dims.channels, 1.5);
        Self {
            params,
            verb,
            noun,
            bank,
        }
    }

    pub fn inputs(&self) -> sap_core::sap::SapInputs<'_> {
        sap_core::sap::SapInputs {
            verb: &self.verb,
            noun: &self.noun,
            bank: &self.bank,
        }
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn all_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, tol))
}

// ---- reference model, written with plain loops over nested vectors ----

type Mat = Vec<Vec<f64>>;

fn mat(data: &[f64], rows: usize, cols: usize) -> Mat {
    (0..rows).map(|i| data[i * cols..(i + 1) * cols].to_vec()).collect()
}

/// `W x` for a square `C x C` weight stored row-major.
fn apply(w: &Mat, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for i in 0..w.len() {
        let mut acc = 0.0;
        for j in 0..x.len() {
            acc += w[i][j] * x[j];
        }
        out[i] = acc;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mean_of(rows: &Mat) -> Vec<f64> {
    let c = rows[0].len();
    let mut out = vec![0.0; c];
    for r in rows {
        for j in 0..c {
            out[j] += r[j];
        }
    }
    for v in &mut out {
        *v /= rows.len() as f64;
    }
    out
}

fn max_of(rows: &Mat) -> Vec<f64> {
    let c = rows[0].len();
    let mut out = vec![f64::NEG_INFINITY; c];
    for r in rows {
        for j in 0..c {
            if r[j] > out[j] {
                out[j] = r[j];
            }
        }
    }
    out
}

pub fn reference_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Returns the attended vector and the weights.
pub fn reference_attend(rows: &Mat, query: &[f64], scale: Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = rows
        .iter()
        .map(|r| {
            let mut d = 0.0;
            for j in 0..query.len() {
                d += r[j] * query[j];
            }
            d * scale.unwrap_or(1.0)
        })
        .collect();
    let w = reference_softmax(&logits);
    let c = query.len();
    let mut out = vec![0.0; c];
    for (i, r) in rows.iter().enumerate() {
        for j in 0..c {
            out[j] += w[i] * r[j];
        }
    }
    (out, w)
}

fn gate_of(p: &BranchParams, source: &[f64]) -> Vec<f64> {
    let c = source.len();
    let wg = mat(p.gate_weight.data(), c, c);
    apply(&wg, source)
        .iter()
        .zip(p.gate_bias.data())
        .map(|(a, b)| a + b)
        .collect()
}

fn fuse(p: &BranchParams, own: &[f64], bank: &Mat) -> Mat {
    let c = own.len();
    let wf = mat(p.fusion_global.data(), c, c);
    let wo = mat(p.fusion_object.data(), c, c);
    let g = apply(&wf, own);
    bank.iter()
        .map(|row| {
            let o = apply(&wo, row);
            (0..c)
                .map(|j| (g[j] + o[j] + p.fusion_bias.data()[j]).max(0.0))
                .collect()
        })
        .collect()
}

fn scale_rows(rows: &Mat, by: &[f64]) -> Mat {
    rows.iter()
        .map(|r| r.iter().zip(by).map(|(a, b)| a * b).collect())
        .collect()
}

/// One branch; `own` is its global feature and `other` the opposite one.
pub fn reference_branch(
    p: &BranchParams,
    own: &[f64],
    other: &[f64],
    bank: &Mat,
    variant: AblationVariant,
    cfg: &SapConfig,
) -> Vec<f64> {
    use AblationVariant::*;
    let sig = |v: Vec<f64>| v.into_iter().map(sigmoid).collect::<Vec<f64>>();
    match variant {
        Baseline => own.to_vec(),
        NounPlusVerb => {
            let gate = sig(gate_of(p, other));
            own.iter().zip(&gate).map(|(a, b)| a * b).collect()
        }
        AvgPool => mean_of(bank),
        MaxPool => max_of(bank),
        NoCsgNoArm => mean_of(&fuse(p, own, bank)),
        NoCsg => reference_attend(&fuse(p, own, bank), other, cfg.attention_scale).0,
        NoArm => mean_of(&scale_rows(&fuse(p, own, bank), &sig(gate_of(p, other)))),
        Full => {
            let gated = scale_rows(&fuse(p, own, bank), &sig(gate_of(p, other)));
            reference_attend(&gated, other, cfg.attention_scale).0
        }
        NoGating => {
            let m = scale_rows(&fuse(p, own, bank), &gate_of(p, other));
            reference_attend(&m, other, cfg.attention_scale).0
        }
        NoCrossStream => {
            let gated = scale_rows(&fuse(p, own, bank), &sig(gate_of(p, own)));
            reference_attend(&gated, own, cfg.attention_scale).0
        }
    }
}

fn head(out: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let k = b.len();
    (0..k)
        .map(|v| {
            let mut acc = b[v];
            for c in 0..out.len() {
                acc += out[c] * w[c * k + v];
            }
            acc
        })
        .collect()
}

/// `(verb_logits, noun_logits)` of the reference model.
pub fn reference_forward(
    params: &SapParams,
    verb: &[f64],
    noun: &[f64],
    bank: &ObjectBank,
    variant: AblationVariant,
    cfg: &SapConfig,
) -> (Vec<f64>, Vec<f64>) {
    let variant = if bank.is_empty() && variant.uses_bank() {
        AblationVariant::Baseline
    } else {
        variant
    };
    let rows = mat(bank.features(), bank.rows(), bank.channels());
    let nout = reference_branch(&params.noun, noun, verb, &rows, variant, cfg);
    let vout = reference_branch(&params.verb, verb, noun, &rows, variant, cfg);
    (
        head(&vout, params.verb_head.data(), params.verb_head_bias.data()),
        head(&nout, params.noun_head.data(), params.noun_head_bias.data()),
    )
}
