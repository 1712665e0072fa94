//! Invariance checks shared by the invariants and acceptance targets.
//! Each returns a one-line summary on success.

use super::{random_bank, rng, uniform, Problem};
use rand::seq::SliceRandom;
use rand::Rng;
use sap_core::sap::{
    infer, integrate_privileged, AblationVariant, BranchFeature, ModelDims, SapConfig, SapInputs,
    SapParams,
};
use sap_core::tensor::{Graph, Tensor};

pub type Check = Result<String, String>;

/// 100 random bank permutations: logits, pooled and attended outputs agree
/// within 1e-9 and the weight vectors permute along.
pub fn permutation_invariance() -> Check {
    let cfg = SapConfig::default();
    let mut worst = 0.0f64;
    let mut r = rng(0x9e37);
    for case in 0..100u64 {
        let mut p = Problem::random(case);
        if p.bank.rows() < 2 {
            p.bank = random_bank(&mut r, 5, p.params.dims.channels, 1.5);
        }
        let mut order: Vec<usize> = (0..p.bank.rows()).collect();
        order.shuffle(&mut r);
        let permuted = p.bank.permuted(&order);
        let pin = SapInputs {
            verb: &p.verb,
            noun: &p.noun,
            bank: &permuted,
        };
        for v in AblationVariant::ALL {
            let a = infer(&p.params, p.inputs(), v, &cfg).map_err(|e| e.to_string())?;
            let b = infer(&p.params, pin, v, &cfg).map_err(|e| e.to_string())?;
            let pairs = [
                (&a.verb_logits, &b.verb_logits),
                (&a.noun_logits, &b.noun_logits),
                (&a.verb.attended, &b.verb.attended),
                (&a.noun.attended, &b.noun.attended),
            ];
            for (x, y) in pairs {
                for (s, t) in x.iter().zip(y.iter()) {
                    worst = worst.max((s - t).abs());
                }
            }
            for (wa, wb) in [
                (&a.verb.attention_weights, &b.verb.attention_weights),
                (&a.noun.attention_weights, &b.noun.attention_weights),
            ] {
                if let (Some(wa), Some(wb)) = (wa, wb) {
                    for (i, &src) in order.iter().enumerate() {
                        worst = worst.max((wb[i] - wa[src]).abs());
                    }
                }
            }
            if worst > 1e-9 {
                return Err(format!("{v} case {case}: deviation {worst:e} > 1e-9"));
            }
        }
    }
    Ok(format!("100 permutations x 10 variants, worst deviation {worst:.2e}"))
}

/// Softmax rows sum to 1 within 1e-12 over 1000 inputs, some with entries near 1e3.
pub fn softmax_normalization() -> Check {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = r.random_range(1..=12);
        let scale = if case % 2 == 0 { 1e3 } else { 5.0 };
        let x = uniform(&mut r, n, scale);
        let mut g = Graph::new();
        let xv = g.constant(&Tensor::vector(x)).unwrap();
        let s = g.softmax_rows(xv).unwrap();
        let sum: f64 = g.value(s).iter().sum();
        worst = worst.max((sum - 1.0).abs());
        if g.value(s).iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(format!("case {case}: probability outside [0, 1]"));
        }
    }
    if worst > 1e-12 {
        return Err(format!("worst |sum - 1| = {worst:e} > 1e-12"));
    }
    Ok(format!("1000 inputs, worst |sum - 1| {worst:.2e}"))
}

/// Softmax shift invariance, bit-exact. Inputs are multiples of 1/8 and the
/// shift an integer, so `x + c` and the max-shift are exact in f64.
pub fn softmax_shift_exact() -> Check {
    let mut r = rng(11);
    for case in 0..1000 {
        let n = r.random_range(1..=10);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-800i32..800) as f64 / 8.0).collect();
        let c = r.random_range(-1000i32..1000) as f64;
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let mut g = Graph::new();
        let a = g.constant(&Tensor::vector(x)).unwrap();
        let b = g.constant(&Tensor::vector(shifted)).unwrap();
        let sa = g.softmax_rows(a).unwrap();
        let sb = g.softmax_rows(b).unwrap();
        if g.value(sa) != g.value(sb) {
            return Err(format!("case {case}: shift {c} changed the output"));
        }
    }
    Ok("1000 integer shifts, bit-identical".into())
}

/// Gate entries strictly inside (0, 1), including saturating pre-activations.
pub fn gate_range() -> Check {
    let cfg = SapConfig::default();
    let mut r = rng(13);
    let mut seen = 0usize;
    for case in 0..200u64 {
        let mut p = Problem::random(case);
        // large weights push the gate pre-activations far into saturation
        let big = [1.0, 50.0, 1e4, 1e150][case as usize % 4];
        for t in p.params.tensors_mut() {
            for x in t.data_mut() {
                *x *= big;
            }
        }
        p.verb = BranchFeature::verb(uniform(&mut r, p.params.dims.channels, 3.0));
        for v in [
            AblationVariant::Full,
            AblationVariant::NoArm,
            AblationVariant::NoCrossStream,
            AblationVariant::NounPlusVerb,
        ] {
            let out = infer(&p.params, p.inputs(), v, &cfg).map_err(|e| e.to_string())?;
            for gate in [&out.verb.gate, &out.noun.gate].into_iter().flatten() {
                if let Some(x) = gate.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
                    return Err(format!("{v} case {case}: gate entry {x}"));
                }
                seen += gate.len();
            }
        }
    }
    let extremes = vec![-f64::MAX, -1e4, -745.5, -40.0, 0.0, 36.8, 40.0, 1e4, f64::MAX];
    let mut g = Graph::new();
    let x = g.constant(&Tensor::vector(extremes)).unwrap();
    let s = g.sigmoid(x);
    if let Some(v) = g.value(s).iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(format!("sigmoid of an extreme input gave {v}"));
    }
    Ok(format!("{seen} gate entries plus saturating sigmoid inputs, all in (0, 1)"))
}

/// With C = 1 the attended value lies between the smallest and largest gated row.
pub fn convex_hull_c1() -> Check {
    let cfg = SapConfig::default();
    let mut r = rng(17);
    for case in 0..500 {
        let dims = ModelDims {
            channels: 1,
            verbs: 2,
            nouns: 3,
        };
        let n = r.random_range(1..=10);
        let p = Problem::with_dims(&mut r, dims, n);
        for v in [AblationVariant::Full, AblationVariant::NoCsg, AblationVariant::NoCrossStream, AblationVariant::NoGating] {
            let out = infer(&p.params, p.inputs(), v, &cfg).map_err(|e| e.to_string())?;
            for act in [&out.verb, &out.noun] {
                let rows = act.gated.as_ref().or(act.fused.as_ref()).ok_or("no attended rows")?;
                let lo = rows.data().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = rows.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let y = act.attended[0];
                if y < lo || y > hi {
                    return Err(format!("{v} case {case}: {y} outside [{lo}, {hi}]"));
                }
            }
        }
    }
    Ok("500 clips x 4 attending variants, output inside [min, max]".into())
}

fn dyadic(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-32i32..=32) as f64 / 16.0).collect()
}

/// `[W_f | W_o] . [global; row] + b` through one `C x 2C` map against the
/// two-map form, for every row.
///
/// Returns the largest absolute deviation.
fn concat_gap(c: usize, n: usize, weights: &mut dyn FnMut(usize) -> Vec<f64>) -> f64 {
    let dims = ModelDims {
        channels: c,
        verbs: 2,
        nouns: 2,
    };
    let mut params = SapParams::zeros(dims);
    params.noun.fusion_global.data_mut().copy_from_slice(&weights(c * c));
    params.noun.fusion_object.data_mut().copy_from_slice(&weights(c * c));
    params.noun.fusion_bias.data_mut().copy_from_slice(&weights(c));
    let global = weights(c);
    let bank = weights(n * c);

    let mut g = Graph::new();
    let bound = params.bind(&mut g).unwrap();
    let gv = g.constant(&Tensor::vector(global.clone())).unwrap();
    let bv = g.constant(&Tensor::matrix(n, c, bank.clone()).unwrap()).unwrap();
    let fused = integrate_privileged(&mut g, gv, bv, &bound.noun).unwrap();
    let two_map = g.value(fused).to_vec();

    let (wf, wo) = (params.noun.fusion_global.data(), params.noun.fusion_object.data());
    let mut joint = Vec::with_capacity(c * 2 * c);
    for i in 0..c {
        joint.extend_from_slice(&wf[i * c..(i + 1) * c]);
        joint.extend_from_slice(&wo[i * c..(i + 1) * c]);
    }
    let joint = Tensor::matrix(c, 2 * c, joint).unwrap();
    let mut worst = 0.0f64;
    for row in 0..n {
        let mut h = Graph::new();
        let w = h.constant(&joint).unwrap();
        let mut x = global.clone();
        x.extend_from_slice(&bank[row * c..(row + 1) * c]);
        let xv = h.constant(&Tensor::vector(x)).unwrap();
        let b = h.constant(&params.noun.fusion_bias).unwrap();
        let pre = h.matmul(w, xv).unwrap();
        let pre = h.add(pre, b).unwrap();
        let out = h.relu(pre);
        for (a, b) in h.value(out).iter().zip(&two_map[row * c..(row + 1) * c]) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Concatenated-input form equals the two-map sum exactly.
///
/// Weights and inputs are multiples of 1/16 so every product and partial
/// sum is exact in f64 and summation order cannot matter. Continuous random
/// weights are checked too, to rounding.
pub fn concat_equivalence() -> Check {
    let mut r = rng(19);
    for case in 0..200 {
        let c = r.random_range(1..=8);
        let n = r.random_range(1..=6);
        let mut r2 = rng(1000 + case);
        let gap = concat_gap(c, n, &mut |k| dyadic(&mut r2, k));
        if gap != 0.0 {
            return Err(format!("dyadic case {case}: deviation {gap:e}"));
        }
    }
    let mut worst = 0.0f64;
    for case in 0..200 {
        let mut r2 = rng(5000 + case);
        let c = r2.random_range(1..=8);
        let n = r2.random_range(1..=6);
        let mut r3 = rng(9000 + case);
        worst = worst.max(concat_gap(c, n, &mut |k| uniform(&mut r3, k, 1.0)));
    }
    if worst > 1e-12 {
        return Err(format!("continuous weights: deviation {worst:e} > 1e-12"));
    }
    Ok(format!("200 dyadic cases exact, 200 continuous within {worst:.1e}"))
}

/// The noun path fed the verb branch's parameters and swapped features
/// reproduces the verb outputs bit for bit, and vice versa.
pub fn branch_symmetry() -> Check {
    let cfg = SapConfig::default();
    for case in 0..100u64 {
        let p = Problem::random(case);
        let d = p.params.dims;
        let mut s = SapParams::zeros(ModelDims {
            channels: d.channels,
            verbs: d.nouns,
            nouns: d.verbs,
        });
        s.noun = p.params.verb.clone();
        s.verb = p.params.noun.clone();
        s.noun_head = p.params.verb_head.clone();
        s.noun_head_bias = p.params.verb_head_bias.clone();
        s.verb_head = p.params.noun_head.clone();
        s.verb_head_bias = p.params.noun_head_bias.clone();
        let verb = BranchFeature::verb(p.noun.values.clone());
        let noun = BranchFeature::noun(p.verb.values.clone());
        let swapped = SapInputs {
            verb: &verb,
            noun: &noun,
            bank: &p.bank,
        };
        for v in AblationVariant::ALL {
            let a = infer(&p.params, p.inputs(), v, &cfg).map_err(|e| e.to_string())?;
            let b = infer(&s, swapped, v, &cfg).map_err(|e| e.to_string())?;
            if a.verb_logits != b.noun_logits || a.noun_logits != b.verb_logits || a.verb != b.noun || a.noun != b.verb {
                return Err(format!("{v} case {case}: swapped run differs"));
            }
        }
    }
    Ok("100 clips x 10 variants, bit-identical".into())
}

pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("permutation invariance", permutation_invariance()),
        ("softmax normalization", softmax_normalization()),
        ("softmax shift invariance", softmax_shift_exact()),
        ("gate range", gate_range()),
        ("convex hull (C=1)", convex_hull_c1()),
        ("concat equivalence", concat_equivalence()),
        ("branch symmetry", branch_symmetry()),
    ]
}

// ---- SAPB format ----

use sap_core::data::{decode_bank, encode_bank, generate_dataset, BankDataset, BankDims, FormatError, GeneratorSpec, World};

pub fn small_dataset(count: usize, seed: u64) -> BankDataset {
    let spec = GeneratorSpec {
        channels: 4,
        verbs: 3,
        nouns: 5,
        frames: 2,
        per_frame: 3,
        distractor_count: 1,
        seed,
        ..GeneratorSpec::default()
    };
    let world = World::new(&spec).unwrap();
    BankDataset {
        dims: BankDims {
            channels: 4,
            verbs: 3,
            nouns: 5,
            frames: 2,
            per_frame: 3,
        },
        episodes: generate_dataset(&world, count, 0).unwrap(),
    }
}

/// encode then decode reproduces every value, and re-encoding the decoded
/// dataset reproduces the bytes.
pub fn sapb_round_trip() -> Check {
    let spec = GeneratorSpec::default();
    let world = World::new(&spec).unwrap();
    let data = BankDataset {
        dims: BankDims {
            channels: spec.channels,
            verbs: spec.verbs,
            nouns: spec.nouns,
            frames: spec.frames,
            per_frame: spec.per_frame,
        },
        episodes: generate_dataset(&world, 50, 0).unwrap(),
    };
    let bytes = encode_bank(&data).map_err(|e| e.to_string())?;
    let back = decode_bank(&bytes).map_err(|e| e.to_string())?;
    if back != data {
        return Err("decoded dataset differs".into());
    }
    if encode_bank(&back).map_err(|e| e.to_string())? != bytes {
        return Err("re-encoded bytes differ".into());
    }
    let empty = BankDataset {
        dims: data.dims,
        episodes: Vec::new(),
    };
    let eb = encode_bank(&empty).map_err(|e| e.to_string())?;
    if decode_bank(&eb).map_err(|e| e.to_string())?.episodes.len() != 0 {
        return Err("empty dataset did not read back empty".into());
    }
    Ok(format!("50 default clips, {} bytes, bit-exact; empty file ok", bytes.len()))
}

const HEADER: usize = 36;

fn put_u32(b: &mut [u8], at: usize, v: u32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(b: &mut [u8], at: usize, v: f32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

/// 1000 damaged files. Truncations and targeted corruptions must give the
/// matching named error; random byte flips must not panic.
pub fn format_fuzz() -> Check {
    let data = small_dataset(5, 3);
    let good = encode_bank(&data).unwrap();
    let (c, rows) = (4usize, 6usize);
    let rec = 8 + 4 * (2 * c + rows + rows * c);
    let mut r = rng(23);
    let mut named = 0usize;
    let mut flipped_ok = 0usize;
    for case in 0..1000 {
        let kind = case % 8;
        let mut b = good.clone();
        let idx = r.random_range(0..5usize);
        let base = HEADER + idx * rec;
        let expect: fn(&FormatError) -> bool = match kind {
            0 => {
                b.truncate(r.random_range(0..good.len()));
                |e| matches!(e, FormatError::Truncated { .. })
            }
            1 => {
                b[r.random_range(0..4)] ^= 1 << r.random_range(0..8);
                |e| matches!(e, FormatError::BadMagic(_))
            }
            2 => {
                put_u32(&mut b, 4, r.random_range(2..u32::MAX));
                |e| matches!(e, FormatError::UnsupportedVersion(_))
            }
            3 => {
                for _ in 0..r.random_range(1..20) {
                    b.push(r.random());
                }
                |e| matches!(e, FormatError::TrailingBytes(_))
            }
            4 => {
                let (at, lim) = if r.random() { (base, 3u32) } else { (base + 4, 5u32) };
                put_u32(&mut b, at, r.random_range(lim..u32::MAX));
                |e| matches!(e, FormatError::InvalidRecord { .. })
            }
            5 => {
                let at = base + 8 + 4 * r.random_range(0..2 * c + rows + rows * c);
                put_f32(&mut b, at, if r.random() { f32::NAN } else { f32::INFINITY });
                |e| matches!(e, FormatError::InvalidRecord { .. })
            }
            6 => {
                let at = base + 8 + 4 * (2 * c + r.random_range(0..rows));
                put_f32(&mut b, at, r.random_range(1.5..10.0));
                |e| matches!(e, FormatError::InvalidRecord { .. })
            }
            _ => {
                for _ in 0..r.random_range(1..8) {
                    let i = r.random_range(0..b.len());
                    b[i] = r.random();
                }
                |_| true
            }
        };
        let out = std::panic::catch_unwind(|| decode_bank(&b));
        match out {
            Err(_) => return Err(format!("case {case}: decoder panicked")),
            Ok(Ok(_)) if kind == 7 => flipped_ok += 1,
            Ok(Ok(_)) => return Err(format!("case {case} (kind {kind}): damaged file accepted")),
            Ok(Err(e)) if expect(&e) => named += 1,
            Ok(Err(e)) => return Err(format!("case {case} (kind {kind}): unexpected error {e}")),
        }
    }
    Ok(format!("1000 cases, {named} named errors, {flipped_ok} benign flips decoded, 0 panics"))
}
