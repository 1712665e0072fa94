use super::SapError;
use crate::tensor::{Gradients, Graph, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Feature width `C`, verb classes `V`, noun classes `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub channels: usize,
    pub verbs: usize,
    pub nouns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchParams {
    /// `C x C`, applied to the branch's global feature.
    pub fusion_global: Tensor,
    /// `C x C`, applied to every bank row.
    pub fusion_object: Tensor,
    pub fusion_bias: Tensor,
    /// `C x C`, applied to the gating source feature.
    pub gate_weight: Tensor,
    pub gate_bias: Tensor,
}

impl BranchParams {
    fn zeros(c: usize) -> Self {
        Self {
            fusion_global: Tensor::zeros(&[c, c]).requires_grad(),
            fusion_object: Tensor::zeros(&[c, c]).requires_grad(),
            fusion_bias: Tensor::zeros(&[c]).requires_grad(),
            gate_weight: Tensor::zeros(&[c, c]).requires_grad(),
            gate_bias: Tensor::zeros(&[c]).requires_grad(),
        }
    }
}

/// Every learnable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapParams {
    pub dims: ModelDims,
    pub noun: BranchParams,
    pub verb: BranchParams,
    /// `C x V`
    pub verb_head: Tensor,
    pub verb_head_bias: Tensor,
    /// `C x U`
    pub noun_head: Tensor,
    pub noun_head_bias: Tensor,
    #[serde(skip)]
    grads_ready: bool,
}

/// Tensor names in [`SapParams::tensors`] order.
pub const PARAM_NAMES: [&str; 14] = [
    "noun.fusion_global",
    "noun.fusion_object",
    "noun.fusion_bias",
    "noun.gate_weight",
    "noun.gate_bias",
    "verb.fusion_global",
    "verb.fusion_object",
    "verb.fusion_bias",
    "verb.gate_weight",
    "verb.gate_bias",
    "verb_head",
    "verb_head_bias",
    "noun_head",
    "noun_head_bias",
];

#[derive(Debug, Clone, Copy)]
pub struct BoundBranch {
    pub fusion_global: Var,
    pub fusion_object: Var,
    pub fusion_bias: Var,
    pub gate_weight: Var,
    pub gate_bias: Var,
}

/// [`SapParams`] registered as trainable leaves of one graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub dims: ModelDims,
    pub noun: BoundBranch,
    pub verb: BoundBranch,
    pub verb_head: Var,
    pub verb_head_bias: Var,
    pub noun_head: Var,
    pub noun_head_bias: Var,
}

impl BoundParams {
    pub fn vars(&self) -> [Var; 14] {
        let (n, v) = (&self.noun, &self.verb);
        [
            n.fusion_global,
            n.fusion_object,
            n.fusion_bias,
            n.gate_weight,
            n.gate_bias,
            v.fusion_global,
            v.fusion_object,
            v.fusion_bias,
            v.gate_weight,
            v.gate_bias,
            self.verb_head,
            self.verb_head_bias,
            self.noun_head,
            self.noun_head_bias,
        ]
    }

    pub fn branch(&self, b: super::Branch) -> &BoundBranch {
        match b {
            super::Branch::Noun => &self.noun,
            super::Branch::Verb => &self.verb,
        }
    }
}

impl SapParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let c = dims.channels;
        Self {
            dims,
            noun: BranchParams::zeros(c),
            verb: BranchParams::zeros(c),
            verb_head: Tensor::zeros(&[c, dims.verbs]).requires_grad(),
            verb_head_bias: Tensor::zeros(&[dims.verbs]).requires_grad(),
            noun_head: Tensor::zeros(&[c, dims.nouns]).requires_grad(),
            noun_head_bias: Tensor::zeros(&[dims.nouns]).requires_grad(),
            grads_ready: false,
        }
    }

    /// Weights uniform in `(-1/sqrt(C), 1/sqrt(C))`, biases zero.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let bound = 1.0 / (dims.channels as f64).sqrt();
        for (name, t) in PARAM_NAMES.iter().zip(p.tensors_mut()) {
            if name.ends_with("bias") {
                continue;
            }
            for x in t.data_mut() {
                *x = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn tensors(&self) -> [&Tensor; 14] {
        let (n, v) = (&self.noun, &self.verb);
        [
            &n.fusion_global,
            &n.fusion_object,
            &n.fusion_bias,
            &n.gate_weight,
            &n.gate_bias,
            &v.fusion_global,
            &v.fusion_object,
            &v.fusion_bias,
            &v.gate_weight,
            &v.gate_bias,
            &self.verb_head,
            &self.verb_head_bias,
            &self.noun_head,
            &self.noun_head_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 14] {
        let (n, v) = (&mut self.noun, &mut self.verb);
        [
            &mut n.fusion_global,
            &mut n.fusion_object,
            &mut n.fusion_bias,
            &mut n.gate_weight,
            &mut n.gate_bias,
            &mut v.fusion_global,
            &mut v.fusion_object,
            &mut v.fusion_bias,
            &mut v.gate_weight,
            &mut v.gate_bias,
            &mut self.verb_head,
            &mut self.verb_head_bias,
            &mut self.noun_head,
            &mut self.noun_head_bias,
        ]
    }

    pub fn branch(&self, b: super::Branch) -> &BranchParams {
        match b {
            super::Branch::Noun => &self.noun,
            super::Branch::Verb => &self.verb,
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Checks every shape against `dims`, finiteness, and re-arms gradient
    /// buffers (they are not serialized).
    pub fn validate(&mut self) -> Result<(), SapError> {
        let d = self.dims;
        let c = d.channels;
        let expected: [Vec<usize>; 14] = [
            vec![c, c],
            vec![c, c],
            vec![c],
            vec![c, c],
            vec![c],
            vec![c, c],
            vec![c, c],
            vec![c],
            vec![c, c],
            vec![c],
            vec![c, d.verbs],
            vec![d.verbs],
            vec![c, d.nouns],
            vec![d.nouns],
        ];
        for (t, shape) in self.tensors_mut().into_iter().zip(expected) {
            if t.shape() != shape.as_slice() {
                return Err(SapError::Tensor(TensorError::Shape {
                    op: "params",
                    left: shape,
                    right: t.shape().to_vec(),
                }));
            }
            if !t.data().iter().all(|x| x.is_finite()) {
                return Err(SapError::Tensor(TensorError::NonFinite("params")));
            }
            t.ensure_grad();
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundParams, TensorError> {
        let mut vars = Vec::with_capacity(14);
        for t in self.tensors() {
            vars.push(g.param(t)?);
        }
        let branch = |o: usize| BoundBranch {
            fusion_global: vars[o],
            fusion_object: vars[o + 1],
            fusion_bias: vars[o + 2],
            gate_weight: vars[o + 3],
            gate_bias: vars[o + 4],
        };
        Ok(BoundParams {
            dims: self.dims,
            noun: branch(0),
            verb: branch(5),
            verb_head: vars[10],
            verb_head_bias: vars[11],
            noun_head: vars[12],
            noun_head_bias: vars[13],
        })
    }

    /// Adds the gradients of one backward pass into the parameter buffers.
    /// Parameters the loss did not reach receive nothing.
    pub fn accumulate(&mut self, bound: &BoundParams, grads: &Gradients) -> Result<(), TensorError> {
        self.accumulate_scaled(bound, grads, 1.0)
    }

    pub fn accumulate_scaled(
        &mut self,
        bound: &BoundParams,
        grads: &Gradients,
        scale: f64,
    ) -> Result<(), TensorError> {
        for (t, v) in self.tensors_mut().into_iter().zip(bound.vars()) {
            if let Some(g) = grads.get(v) {
                if scale == 1.0 {
                    t.accumulate_grad(g)?;
                } else {
                    let scaled: Vec<f64> = g.iter().map(|x| x * scale).collect();
                    t.accumulate_grad(&scaled)?;
                }
            }
        }
        self.grads_ready = true;
        Ok(())
    }

    /// Adds externally computed gradients, one buffer per tensor in
    /// [`SapParams::tensors`] order.
    pub fn add_grads(&mut self, grads: &[Vec<f64>]) -> Result<(), TensorError> {
        if grads.len() != PARAM_NAMES.len() {
            return Err(TensorError::DataLength {
                shape: vec![PARAM_NAMES.len()],
                len: grads.len(),
            });
        }
        for (t, g) in self.tensors_mut().into_iter().zip(grads) {
            t.ensure_grad();
            t.accumulate_grad(g)?;
        }
        self.grads_ready = true;
        Ok(())
    }

    /// True once a backward pass has been accumulated since the last step.
    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
        self.grads_ready = false;
    }
}
