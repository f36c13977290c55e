//! Instance-wise contrastive, clustering and anchor losses, and their weighted sum.
//!
//! Every loss is built from tape primitives, so gradients come from the
//! reverse-mode engine rather than hand derivations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, GatherMap, Tape, Var};

/// Weights `(α, β, γ)` of the instance, cluster and anchor losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    instance: f64,
    cluster: f64,
    anchor: f64,
}

impl LossWeights {
    pub fn new(instance: f64, cluster: f64, anchor: f64) -> Result<Self> {
        let all = [instance, cluster, anchor];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::argument(format!("loss weights must be finite and non-negative, got {all:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::argument("at least one loss weight must be positive"));
        }
        Ok(Self {
            instance,
            cluster,
            anchor,
        })
    }

    pub fn instance(&self) -> f64 {
        self.instance
    }

    pub fn cluster(&self) -> f64 {
        self.cluster
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }
}

impl Default for LossWeights {
    /// `(20, 0.1, 0.1)`.
    fn default() -> Self {
        Self {
            instance: 20.0,
            cluster: 0.1,
            anchor: 0.1,
        }
    }
}

/// Which objective ties the assignments of the raw sample and its views together.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum AnchorVariant {
    /// `KL[q⁰‖q¹] + KL[q⁰‖q²]`
    #[default]
    KlAnchor,
    /// `JSD[q¹‖q²]`
    Jsd,
    /// `KL[p⁰‖q¹] + KL[p⁰‖q²]`
    KlTarget,
    /// `KL[p¹‖q²] + KL[p²‖q¹]`
    CrossKl,
}

impl AnchorVariant {
    pub const ALL: [AnchorVariant; 4] = [
        AnchorVariant::Jsd,
        AnchorVariant::KlTarget,
        AnchorVariant::CrossKl,
        AnchorVariant::KlAnchor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnchorVariant::KlAnchor => "kl-anchor",
            AnchorVariant::Jsd => "jsd",
            AnchorVariant::KlTarget => "kl-target",
            AnchorVariant::CrossKl => "cross-kl",
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            AnchorVariant::KlAnchor => "KL[q0||q1] + KL[q0||q2]",
            AnchorVariant::Jsd => "JSD[q1||q2]",
            AnchorVariant::KlTarget => "KL[p0||q1] + KL[p0||q2]",
            AnchorVariant::CrossKl => "KL[p1||q2] + KL[p2||q1]",
        }
    }

    /// Whether the variant reads the sharpened targets of the views.
    pub fn needs_view_targets(self) -> bool {
        matches!(self, AnchorVariant::CrossKl)
    }
}

impl fmt::Display for AnchorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnchorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown anchor variant {s:?} (expected kl-anchor, jsd, kl-target or cross-kl)")))
    }
}

/// Soft assignments and targets available to the anchor loss. Targets must be
/// tape constants.
#[derive(Clone, Copy, Debug, Default)]
pub struct AnchorInputs {
    pub q0: Option<Var>,
    pub q1: Option<Var>,
    pub q2: Option<Var>,
    pub p0: Option<Var>,
    pub p1: Option<Var>,
    pub p2: Option<Var>,
}

fn positive_pair_map(n: usize) -> GatherMap {
    let rows = 2 * n;
    GatherMap {
        rows,
        cols: 1,
        src: (0..rows).map(|i| Some(i * rows + (i + n) % rows)).collect(),
    }
}

/// Temperature-scaled contrastive loss over the 2N projected views.
///
/// For each view `i` with partner `i'`: `−ln( exp(ψ(zᵢ, zᵢ')/τ) / Σ_{j≠i} exp(ψ(zᵢ, zⱼ)/τ) )`,
/// averaged over all 2N views. Self-similarity is excluded from the denominator.
pub fn instance_loss(tape: &mut Tape, z1: Var, z2: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::argument(format!("temperature must be positive, got {temperature}")));
    }
    let (a, b) = (tape.value(z1), tape.value(z2));
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "views have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.rows();
    if n == 0 {
        return Err(Error::shape("instance loss of an empty batch"));
    }
    let views = tape.concat_rows(z1, z2)?;
    let unit = tape.normalize_rows(views)?;
    let sim = cosine_gram(tape, unit)?;
    let scaled = tape.scale(sim, 1.0 / temperature);
    // per-row shift by the largest off-diagonal logit; the ratio is unchanged
    // and the denominator stays >= 1, so the unguarded log is safe
    let m = 2 * n;
    let logits = tape.value(scaled);
    let shift: Vec<f64> = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j != i)
                .map(|j| logits.get(i, j))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    // the diagonal is masked out below; shifting it to zero avoids overflow
    let shift = tape.constant(DenseMatrix::from_fn(m, m, |i, j| if i == j { logits.get(i, i) } else { shift[i] }));
    let shifted = tape.sub(scaled, shift)?;
    let expd = tape.exp(shifted);
    let mask = tape.constant(DenseMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { 1.0 }));
    let masked = tape.mul(expd, mask)?;
    let denom = tape.row_sum(masked);
    let log_den = tape.ln(denom);
    let positive = tape.gather(shifted, Arc::new(positive_pair_map(n)))?;
    let per_view = tape.sub(log_den, positive)?;
    Ok(tape.mean(per_view))
}

/// `U Uᵀ` for row-normalized `U`, recorded as a product with an explicit transpose.
fn cosine_gram(tape: &mut Tape, unit: Var) -> Result<Var> {
    let m = tape.value(unit);
    let (r, c) = m.shape();
    let transpose = GatherMap {
        rows: c,
        cols: r,
        src: (0..c * r).map(|k| Some((k % r) * c + k / r)).collect(),
    };
    let ut = tape.gather(unit, Arc::new(transpose))?;
    tape.matmul(unit, ut)
}

/// Mean over rows of `KL[pᵢ‖qᵢ] = Σⱼ p_ij (ln(p_ij + ε) − ln(q_ij + ε))`.
/// Gradients flow into whichever arguments are tracked.
pub fn kl_rows(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let (pm, qm) = (tape.value(p), tape.value(q));
    if pm.shape() != qm.shape() {
        return Err(Error::shape(format!(
            "KL between {:?} and {:?}",
            pm.shape(),
            qm.shape()
        )));
    }
    let rows = pm.rows().max(1) as f64;
    let lp = tape.log(p);
    let lq = tape.log(q);
    let diff = tape.sub(lp, lq)?;
    let weighted = tape.mul(p, diff)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / rows))
}

/// Mean over rows of `½ KL[aᵢ‖mᵢ] + ½ KL[bᵢ‖mᵢ]` with `m = (a + b)/2`.
pub fn jsd_rows(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let sum = tape.add(a, b)?;
    let mid = tape.scale(sum, 0.5);
    let ka = kl_rows(tape, a, mid)?;
    let kb = kl_rows(tape, b, mid)?;
    let both = tape.add(ka, kb)?;
    Ok(tape.scale(both, 0.5))
}

/// `KL[p‖q]` averaged over rows, with `p` a fixed target.
pub fn cluster_loss(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    kl_rows(tape, p, q)
}

pub fn anchor_loss(tape: &mut Tape, variant: AnchorVariant, inputs: &AnchorInputs) -> Result<Var> {
    let need = |v: Option<Var>, name: &str| {
        v.ok_or_else(|| Error::argument(format!("anchor variant {variant} requires {name}")))
    };
    match variant {
        AnchorVariant::KlAnchor => {
            let (q0, q1, q2) = (need(inputs.q0, "q0")?, need(inputs.q1, "q1")?, need(inputs.q2, "q2")?);
            let a = kl_rows(tape, q0, q1)?;
            let b = kl_rows(tape, q0, q2)?;
            tape.add(a, b)
        }
        AnchorVariant::Jsd => {
            let (q1, q2) = (need(inputs.q1, "q1")?, need(inputs.q2, "q2")?);
            jsd_rows(tape, q1, q2)
        }
        AnchorVariant::KlTarget => {
            let (p0, q1, q2) = (need(inputs.p0, "p0")?, need(inputs.q1, "q1")?, need(inputs.q2, "q2")?);
            let a = kl_rows(tape, p0, q1)?;
            let b = kl_rows(tape, p0, q2)?;
            tape.add(a, b)
        }
        AnchorVariant::CrossKl => {
            let (p1, p2) = (need(inputs.p1, "p1")?, need(inputs.p2, "p2")?);
            let (q1, q2) = (need(inputs.q1, "q1")?, need(inputs.q2, "q2")?);
            let a = kl_rows(tape, p1, q2)?;
            let b = kl_rows(tape, p2, q1)?;
            tape.add(a, b)
        }
    }
}

/// Loss components that were actually computed; absent terms contribute nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub instance: Option<Var>,
    pub cluster: Option<Var>,
    pub anchor: Option<Var>,
}

/// `α·L_instance + β·L_cluster + γ·L_anchor`.
pub fn total_loss(tape: &mut Tape, weights: &LossWeights, terms: &LossTerms) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (term, w) in [
        (terms.instance, weights.instance),
        (terms.cluster, weights.cluster),
        (terms.anchor, weights.anchor),
    ] {
        let Some(v) = term else { continue };
        let scaled = tape.scale(v, w);
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    total.ok_or_else(|| Error::argument("total loss needs at least one component"))
}

/// Plain-value helper: weighted sum of already computed components.
pub fn weighted_sum(weights: &LossWeights, instance: f64, cluster: f64, anchor: f64) -> f64 {
    weights.instance * instance + weights.cluster * cluster + weights.anchor * anchor
}
