use super::stages::linear_modulation;
use super::{
    attend_relation, cross_stream_gate, integrate_privileged, pool_bank, AblationVariant, BoundBranch,
    BoundParams, Branch, BranchFeature, BranchInput, GateSource, ObjectBank, PoolMode, SapConfig,
    SapError,
};
use crate::tensor::{Graph, Tensor, Var};

/// Inputs of one clip.
#[derive(Debug, Clone, Copy)]
pub struct SapInputs<'a> {
    pub verb: &'a BranchFeature,
    pub noun: &'a BranchFeature,
    pub bank: &'a ObjectBank,
}

/// Graph handles of one branch's intermediates. Stages a variant skips are `None`.
#[derive(Debug, Clone, Copy)]
pub struct BranchTrace {
    pub fused: Option<Var>,
    pub gate: Option<Var>,
    pub gated: Option<Var>,
    pub weights: Option<Var>,
    /// Feature handed to the classifier head.
    pub output: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub verb_logits: Var,
    pub noun_logits: Var,
    pub verb: BranchTrace,
    pub noun: BranchTrace,
    /// The bank was empty and the variant fell back to the baseline path.
    pub fallback: bool,
}

/// Plain values of a [`BranchTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct SapActivations {
    pub fused: Option<Tensor>,
    pub gate: Option<Vec<f64>>,
    pub gated: Option<Tensor>,
    pub attention_weights: Option<Vec<f64>>,
    pub attended: Vec<f64>,
}

impl BranchTrace {
    pub fn activations(&self, g: &Graph) -> SapActivations {
        SapActivations {
            fused: self.fused.map(|v| g.tensor(v)),
            gate: self.gate.map(|v| g.value(v).to_vec()),
            gated: self.gated.map(|v| g.tensor(v)),
            attention_weights: self.weights.map(|v| g.value(v).to_vec()),
            attended: g.value(self.output).to_vec(),
        }
    }
}

fn check_feature(f: &BranchFeature, branch: Branch, c: usize) -> Result<(), SapError> {
    if f.branch != branch {
        return Err(SapError::WrongGateSource {
            expected: branch,
            found: f.branch,
        });
    }
    if f.len() != c {
        return Err(SapError::Dimension {
            what: "global feature",
            expected: c,
            found: f.len(),
        });
    }
    Ok(())
}

/// One branch of the ladder. `own` is this branch's global feature, `other`
/// the opposite branch's.
fn branch_forward(
    g: &mut Graph,
    own: BranchInput,
    other: BranchInput,
    bank: Var,
    p: &BoundBranch,
    variant: AblationVariant,
    cfg: &SapConfig,
) -> Result<BranchTrace, SapError> {
    use AblationVariant::*;
    let target = own.branch;
    let mut t = BranchTrace {
        fused: None,
        gate: None,
        gated: None,
        weights: None,
        output: own.var,
    };
    match variant {
        Baseline => {}
        NounPlusVerb => {
            let (gated, gate) = cross_stream_gate(g, own.var, target, other, GateSource::CrossStream, p)?;
            t.gate = Some(gate);
            t.output = gated;
        }
        AvgPool => t.output = pool_bank(g, bank, PoolMode::Avg)?,
        MaxPool => t.output = pool_bank(g, bank, PoolMode::Max)?,
        NoCsgNoArm | NoGating | NoCrossStream | NoCsg | NoArm | Full => {
            let fused = integrate_privileged(g, own.var, bank, p)?;
            t.fused = Some(fused);
            let (rows, query) = match variant {
                NoCsgNoArm | NoCsg => (fused, other.var),
                NoGating => {
                    let (m, mv) = linear_modulation(g, fused, other.var, p)?;
                    t.gate = Some(mv);
                    (m, other.var)
                }
                NoCrossStream => {
                    let (gated, gate) = cross_stream_gate(g, fused, target, own, GateSource::SameStream, p)?;
                    t.gate = Some(gate);
                    (gated, own.var)
                }
                _ => {
                    let (gated, gate) =
                        cross_stream_gate(g, fused, target, other, GateSource::CrossStream, p)?;
                    t.gate = Some(gate);
                    (gated, other.var)
                }
            };
            if t.gate.is_some() {
                t.gated = Some(rows);
            }
            t.output = match variant {
                NoCsgNoArm | NoArm => g.mean_rows(rows)?,
                _ => {
                    let (att, w) = attend_relation(g, rows, query, cfg.attention_scale)?;
                    t.weights = Some(w);
                    att
                }
            };
        }
    }
    Ok(t)
}

/// Runs both branches through `variant` and the linear heads.
///
/// An empty bank sends bank-reading variants down the baseline path.
pub fn sap_forward(
    g: &mut Graph,
    params: &BoundParams,
    inputs: SapInputs<'_>,
    variant: AblationVariant,
    cfg: &SapConfig,
) -> Result<ForwardVars, SapError> {
    let c = params.dims.channels;
    check_feature(inputs.verb, Branch::Verb, c)?;
    check_feature(inputs.noun, Branch::Noun, c)?;
    if inputs.bank.channels() != c {
        return Err(SapError::Dimension {
            what: "object bank",
            expected: c,
            found: inputs.bank.channels(),
        });
    }
    let fallback = inputs.bank.is_empty() && variant.uses_bank();
    let variant = if fallback { AblationVariant::Baseline } else { variant };

    let verb = BranchInput {
        var: g.constant(&Tensor::vector(inputs.verb.values.clone()))?,
        branch: Branch::Verb,
    };
    let noun = BranchInput {
        var: g.constant(&Tensor::vector(inputs.noun.values.clone()))?,
        branch: Branch::Noun,
    };
    let bank = g.constant(&inputs.bank.to_tensor())?;

    let noun_trace = branch_forward(g, noun, verb, bank, &params.noun, variant, cfg)?;
    let verb_trace = branch_forward(g, verb, noun, bank, &params.verb, variant, cfg)?;

    let vl = g.matmul(verb_trace.output, params.verb_head)?;
    let verb_logits = g.add(vl, params.verb_head_bias)?;
    let nl = g.matmul(noun_trace.output, params.noun_head)?;
    let noun_logits = g.add(nl, params.noun_head_bias)?;

    Ok(ForwardVars {
        verb_logits,
        noun_logits,
        verb: verb_trace,
        noun: noun_trace,
        fallback,
    })
}

/// Forward values of one clip, computed on a throwaway graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub verb_logits: Vec<f64>,
    pub noun_logits: Vec<f64>,
    pub verb: SapActivations,
    pub noun: SapActivations,
    pub fallback: bool,
}

pub fn infer(
    params: &super::SapParams,
    inputs: SapInputs<'_>,
    variant: AblationVariant,
    cfg: &SapConfig,
) -> Result<Inference, SapError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let out = sap_forward(&mut g, &bound, inputs, variant, cfg)?;
    Ok(Inference {
        verb_logits: g.value(out.verb_logits).to_vec(),
        noun_logits: g.value(out.noun_logits).to_vec(),
        verb: out.verb.activations(&g),
        noun: out.noun.activations(&g),
        fallback: out.fallback,
    })
}
