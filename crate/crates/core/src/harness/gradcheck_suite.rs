//! Finite-difference check of every graph primitive and of the composed
//! two-branch loss.

use crate::sap::{
    sap_forward, AblationVariant, BranchFeature, ModelDims, ObjectBank, SapConfig, SapError, SapInputs, SapParams,
};
use crate::tensor::{grad_check, Fault, Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub tolerance: f64,
    pub step: f64,
    pub seeds: Vec<u64>,
    /// Test fixture: corrupts a derivative inside every graph the suite builds.
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-6,
            seeds: vec![0, 1, 2],
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentResult {
    pub component: &'static str,
    pub seed: u64,
    pub coordinates: usize,
    pub worst_error: f64,
    pub worst_index: usize,
    pub passed: bool,
    /// Set when the check itself could not run.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSuiteReport {
    pub tolerance: f64,
    pub step: f64,
    pub results: Vec<ComponentResult>,
}

impl GradcheckSuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&ComponentResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }

    /// Worst error of a component over all seeds.
    pub fn worst(&self, component: &str) -> Option<f64> {
        self.results
            .iter()
            .filter(|r| r.component == component)
            .map(|r| r.worst_error)
            .reduce(f64::max)
    }

    pub fn components(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = Vec::new();
        for r in &self.results {
            if !names.contains(&r.component) {
                names.push(r.component);
            }
        }
        names
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for name in self.components() {
            let rows: Vec<&ComponentResult> = self.results.iter().filter(|r| r.component == name).collect();
            let ok = rows.iter().all(|r| r.passed);
            let worst = self.worst(name).unwrap_or(f64::NAN);
            let _ = write!(
                out,
                "{:<16} {} worst relative error {:.3e}",
                name,
                if ok { "PASS" } else { "FAIL" },
                worst
            );
            for r in rows.iter().filter_map(|r| r.error.as_ref()) {
                let _ = write!(out, " ({r})");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{} of {} checks passed at tolerance {:e}",
            self.results.iter().filter(|r| r.passed).count(),
            self.results.len(),
            self.tolerance
        );
        out
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn graph(fault: Option<Fault>) -> Graph {
    match fault {
        Some(f) => Graph::with_fault(f),
        None => Graph::new(),
    }
}

type Build = fn(&mut Graph, &[Var]) -> Result<Var, TensorError>;

/// Primitive name, input shapes, and the graph it builds.
fn primitives() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    vec![
        ("matmul", vec![vec![4, 3], vec![3, 2]], |g, x| g.matmul(x[0], x[1])),
        ("matmul_vec", vec![vec![4, 3], vec![3]], |g, x| g.matmul(x[0], x[1])),
        ("vec_matmul", vec![vec![3], vec![3, 2]], |g, x| g.matmul(x[0], x[1])),
        ("transpose", vec![vec![3, 4]], |g, x| g.transpose(x[0])),
        ("add", vec![vec![3, 4], vec![3, 4]], |g, x| g.add(x[0], x[1])),
        ("add_broadcast", vec![vec![3, 4], vec![4]], |g, x| g.add(x[0], x[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |g, x| g.mul(x[0], x[1])),
        ("mul_broadcast", vec![vec![3, 4], vec![4]], |g, x| g.mul(x[0], x[1])),
        ("relu", vec![vec![3, 4]], |g, x| Ok(g.relu(x[0]))),
        ("sigmoid", vec![vec![3, 4]], |g, x| Ok(g.sigmoid(x[0]))),
        ("softmax_rows", vec![vec![3, 4]], |g, x| g.softmax_rows(x[0])),
        ("softmax_vec", vec![vec![5]], |g, x| g.softmax_rows(x[0])),
        ("sum", vec![vec![3, 4]], |g, x| Ok(g.sum(x[0]))),
        ("mean_rows", vec![vec![3, 4]], |g, x| g.mean_rows(x[0])),
        ("max_rows", vec![vec![3, 4]], |g, x| g.max_rows(x[0])),
        ("scale", vec![vec![3, 4]], |g, x| Ok(g.scale(x[0], -1.75))),
        ("cross_entropy", vec![vec![5]], |g, x| g.cross_entropy(x[0], 2)),
    ]
}

fn split(theta: &[f64], shapes: &[Vec<usize>]) -> Vec<Tensor> {
    let mut at = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(s, theta[at..at + n].to_vec()).expect("shape matches length");
            at += n;
            t
        })
        .collect()
}

/// `sum(op(x) * r)` for fixed random `r`, with its gradient in `x`.
fn primitive_loss(
    theta: &Tensor,
    shapes: &[Vec<usize>],
    build: Build,
    seed: u64,
    fault: Option<Fault>,
) -> Result<(f64, Vec<f64>), TensorError> {
    let mut g = graph(fault);
    let vars = split(theta.data(), shapes)
        .iter()
        .map(|t| g.param(t))
        .collect::<Result<Vec<_>, _>>()?;
    let out = build(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
    let shape = g.shape(out).to_vec();
    let r = Tensor::new(&shape, normal(&mut rng, g.value(out).len()))?;
    let r = g.constant(&r)?;
    let weighted = g.mul(out, r)?;
    let loss = g.sum(weighted);
    let value = g.value(loss)[0];
    let grads = g.backward(loss)?;
    let mut grad = Vec::with_capacity(theta.numel());
    for (v, s) in vars.iter().zip(shapes) {
        match grads.get(*v) {
            Some(d) => grad.extend_from_slice(d),
            None => grad.extend(std::iter::repeat_n(0.0, s.iter().product())),
        }
    }
    Ok((value, grad))
}

const SAP_DIMS: ModelDims = ModelDims {
    channels: 4,
    verbs: 3,
    nouns: 4,
};
const SAP_ROWS: usize = 6;

struct SapProblem {
    template: SapParams,
    verb: BranchFeature,
    noun: BranchFeature,
    bank: ObjectBank,
    labels: (usize, usize),
}

impl SapProblem {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Initialization scale, biases included. Unit-variance weights
        // saturate the gates and push gradients below what central
        // differences can resolve.
        let bound = 1.0 / (SAP_DIMS.channels as f64).sqrt();
        let mut template = SapParams::zeros(SAP_DIMS);
        for t in template.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
        }
        let c = SAP_DIMS.channels;
        let verb = BranchFeature::verb(normal(&mut rng, c));
        let noun = BranchFeature::noun(normal(&mut rng, c));
        let bank = ObjectBank::new(
            normal(&mut rng, SAP_ROWS * c),
            c,
            vec![0.5; SAP_ROWS],
            (0..SAP_ROWS).map(|r| r / 2).collect(),
        )
        .expect("valid bank");
        let labels = (rng.random_range(0..SAP_DIMS.verbs), rng.random_range(0..SAP_DIMS.nouns));
        Self {
            template,
            verb,
            noun,
            bank,
            labels,
        }
    }

    fn theta(&self) -> Tensor {
        let data: Vec<f64> = self.template.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        Tensor::vector(data)
    }

    fn loss(&self, theta: &Tensor, variant: AblationVariant, fault: Option<Fault>) -> Result<(f64, Vec<f64>), SapError> {
        let mut params = self.template.clone();
        let mut at = 0;
        for t in params.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&theta.data()[at..at + n]);
            at += n;
        }
        let mut g = graph(fault);
        let bound = params.bind(&mut g)?;
        let inputs = SapInputs {
            verb: &self.verb,
            noun: &self.noun,
            bank: &self.bank,
        };
        let out = sap_forward(&mut g, &bound, inputs, variant, &SapConfig::default())?;
        let lv = g.cross_entropy(out.verb_logits, self.labels.0)?;
        let ln = g.cross_entropy(out.noun_logits, self.labels.1)?;
        let loss = g.add(lv, ln)?;
        let value = g.value(loss)[0];
        let grads = g.backward(loss)?;
        let mut grad = Vec::with_capacity(theta.numel());
        for (v, t) in bound.vars().iter().zip(params.tensors()) {
            match grads.get(*v) {
                Some(d) => grad.extend_from_slice(d),
                None => grad.extend(std::iter::repeat_n(0.0, t.numel())),
            }
        }
        Ok((value, grad))
    }
}

fn record<E: std::fmt::Display>(
    component: &'static str,
    seed: u64,
    outcome: Result<crate::tensor::GradCheckReport, E>,
) -> ComponentResult {
    match outcome {
        Ok(r) => ComponentResult {
            component,
            seed,
            coordinates: r.coordinates,
            worst_error: r.worst_error,
            worst_index: r.worst_index,
            passed: r.passed,
            error: None,
        },
        Err(e) => ComponentResult {
            component,
            seed,
            coordinates: 0,
            worst_error: f64::INFINITY,
            worst_index: 0,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

/// Every primitive plus the composed `full` loss, once per seed.
pub fn run_gradcheck_suite(opts: &GradcheckOptions) -> GradcheckSuiteReport {
    let mut results = Vec::new();
    for &seed in &opts.seeds {
        for (name, shapes, build) in primitives() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
            let theta = Tensor::vector(normal(&mut rng, n));
            let outcome = grad_check(
                |t| primitive_loss(t, &shapes, build, seed, opts.fault),
                &theta,
                opts.step,
                opts.tolerance,
            );
            results.push(record(name, seed, outcome));
        }
        let problem = SapProblem::new(seed);
        let outcome = grad_check(
            |t| problem.loss(t, AblationVariant::Full, opts.fault),
            &problem.theta(),
            opts.step,
            opts.tolerance,
        );
        results.push(record("full_sap_loss", seed, outcome));
    }
    GradcheckSuiteReport {
        tolerance: opts.tolerance,
        step: opts.step,
        results,
    }
}
