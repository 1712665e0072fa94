use super::{BoundBranch, Branch, SapError};
use crate::tensor::{Graph, Var};

/// A recorded global feature tagged with the branch it came from.
#[derive(Debug, Clone, Copy)]
pub struct BranchInput {
    pub var: Var,
    pub branch: Branch,
}

/// Where the gating feature is allowed to come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateSource {
    /// The opposite branch gates this one.
    CrossStream,
    /// The branch gates itself (ablation only).
    SameStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

fn expect_len(g: &Graph, v: Var, what: &'static str, c: usize) -> Result<(), SapError> {
    let found = *g.shape(v).last().unwrap_or(&0);
    if found != c || g.shape(v).is_empty() {
        return Err(SapError::Dimension {
            what,
            expected: c,
            found,
        });
    }
    Ok(())
}

/// `ReLU(W_f . global + W_o . row_i + b_f)` for every bank row.
///
/// The global term is computed once and broadcast over the `N` rows.
pub fn integrate_privileged(
    g: &mut Graph,
    global: Var,
    bank: Var,
    p: &BoundBranch,
) -> Result<Var, SapError> {
    let c = g.shape(p.fusion_bias)[0];
    expect_len(g, global, "global feature", c)?;
    expect_len(g, bank, "object bank", c)?;
    let wo_t = g.transpose(p.fusion_object)?;
    let local = g.matmul(bank, wo_t)?;
    let glob = g.matmul(p.fusion_global, global)?;
    let glob = g.add(glob, p.fusion_bias)?;
    let pre = g.add(local, glob)?;
    Ok(g.relu(pre))
}

/// Channel gate `sigmoid(W_g . source + b_g)` applied to `fused`.
///
/// `fused` is either the `N x C` object-centric matrix or a single `C`
/// vector. Returns `(gated, gate)`.
pub fn cross_stream_gate(
    g: &mut Graph,
    fused: Var,
    target: Branch,
    source: BranchInput,
    mode: GateSource,
    p: &BoundBranch,
) -> Result<(Var, Var), SapError> {
    match mode {
        GateSource::CrossStream if source.branch == target => {
            return Err(SapError::SameBranchGate(target))
        }
        GateSource::SameStream if source.branch != target => {
            return Err(SapError::WrongGateSource {
                expected: target,
                found: source.branch,
            })
        }
        _ => {}
    }
    let c = g.shape(p.gate_bias)[0];
    expect_len(g, source.var, "gating feature", c)?;
    expect_len(g, fused, "fused features", c)?;
    let pre = g.matmul(p.gate_weight, source.var)?;
    let pre = g.add(pre, p.gate_bias)?;
    let gate = g.sigmoid(pre);
    let gated = g.mul(fused, gate)?;
    Ok((gated, gate))
}

/// Linear cross-stream modulation `(W_g . source + b_g) * fused`, i.e. the
/// gate without its sigmoid.
pub(crate) fn linear_modulation(
    g: &mut Graph,
    fused: Var,
    source: Var,
    p: &BoundBranch,
) -> Result<(Var, Var), SapError> {
    let pre = g.matmul(p.gate_weight, source)?;
    let m = g.add(pre, p.gate_bias)?;
    let out = g.mul(fused, m)?;
    Ok((out, m))
}

/// `softmax(rows . query) . rows`: attention over the `N` rows.
///
/// Returns `(attended, weights)`. Logits are raw dot products unless `scale`
/// is given.
pub fn attend_relation(
    g: &mut Graph,
    rows: Var,
    query: Var,
    scale: Option<f64>,
) -> Result<(Var, Var), SapError> {
    match g.shape(rows) {
        [0, _] => return Err(SapError::EmptyBank),
        [_, c] => {
            let c = *c;
            expect_len(g, query, "attention query", c)?;
        }
        s => {
            return Err(SapError::Dimension {
                what: "attention rows (rank)",
                expected: 2,
                found: s.len(),
            })
        }
    }
    let mut logits = g.matmul(rows, query)?;
    if let Some(s) = scale {
        logits = g.scale(logits, s);
    }
    let weights = g.softmax_rows(logits)?;
    let attended = g.matmul(weights, rows)?;
    Ok((attended, weights))
}

/// Coordinate-wise mean or max over the bank rows.
pub fn pool_bank(g: &mut Graph, bank: Var, mode: PoolMode) -> Result<Var, SapError> {
    if g.shape(bank).first() == Some(&0) {
        return Err(SapError::EmptyBank);
    }
    Ok(match mode {
        PoolMode::Avg => g.mean_rows(bank)?,
        PoolMode::Max => g.max_rows(bank)?,
    })
}
