use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HeError;
use crate::netgraph::{ActivationSpec, NodeKind};

/// What to do when the skip operand of an Add sits at a higher chain index
/// than the main branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MismatchPolicy {
    /// Refresh the skip operand with a bootstrap.
    #[default]
    BootstrapOnMismatch,
    /// Spend levels on the main branch instead, raising it to match.
    RescaleDown,
}

/// Unit latencies per ciphertext operation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    pub bootstrap: f64,
    pub ct_ct_mult: f64,
    pub ct_pt_mult: f64,
    pub rescale: f64,
    pub add: f64,
    pub rotate: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            bootstrap: 25.0,
            ct_ct_mult: 1.0,
            ct_pt_mult: 0.5,
            rescale: 0.25,
            add: 0.05,
            rotate: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeProfile {
    pub max_depth: usize,
    pub usable_mults: usize,
    pub slots: usize,
    pub frac_bits: u32,
    pub int_bits: u32,
    /// Chain index a bootstrap leaves behind.
    pub bootstrap_out: usize,
    /// Levels an Add operand must keep free; operands above `usable_mults -
    /// reserve` are bootstrapped first.
    pub reserve: usize,
    pub fold_batchnorm: bool,
    pub mismatch_policy: MismatchPolicy,
    pub costs: CostTable,
}

impl Default for HeProfile {
    fn default() -> Self {
        HeProfile {
            max_depth: 12,
            usable_mults: 9,
            slots: 16384,
            frac_bits: 42,
            int_bits: 18,
            bootstrap_out: 0,
            reserve: 1,
            fold_batchnorm: true,
            mismatch_policy: MismatchPolicy::BootstrapOnMismatch,
            costs: CostTable::default(),
        }
    }
}

impl HeProfile {
    pub fn check(&self) -> Result<(), HeError> {
        let bad = |m: String| Err(HeError::Profile(m));
        if self.usable_mults > self.max_depth {
            return bad(format!("usable_mults {} exceeds max_depth {}", self.usable_mults, self.max_depth));
        }
        if self.usable_mults == 0 || self.slots == 0 {
            return bad("usable_mults and slots must be positive".into());
        }
        if self.bootstrap_out >= self.usable_mults {
            return bad(format!(
                "bootstrap_out {} leaves no usable level below {}",
                self.bootstrap_out, self.usable_mults
            ));
        }
        if self.bootstrap_out + self.reserve > self.usable_mults {
            return bad(format!("reserve {} cannot be met after a bootstrap", self.reserve));
        }
        if self.frac_bits == 0 || self.frac_bits > 60 || self.int_bits == 0 || self.int_bits > 60 {
            return bad("frac_bits and int_bits must lie in 1..=60".into());
        }
        let c = &self.costs;
        let all = [c.bootstrap, c.ct_ct_mult, c.ct_pt_mult, c.rescale, c.add, c.rotate];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("unit costs must be finite and non-negative".into());
        }
        if all[1..].iter().any(|&v| v >= c.bootstrap) {
            return bad("bootstrap must be the most expensive operation".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HeError> {
        let p: HeProfile = serde_json::from_str(text).map_err(|e| HeError::Profile(e.to_string()))?;
        p.check()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, HeError> {
        let text = std::fs::read_to_string(path).map_err(|e| HeError::Profile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Ciphertexts needed to pack `numel` values.
    pub fn ciphertexts(&self, numel: usize) -> usize {
        numel.div_ceil(self.slots)
    }
}

/// Multiplicative depth of evaluating a degree-`d` polynomial with a
/// balanced power tree: `ceil(log2(d + 1))`, and 0 for constants.
pub fn depth_of_poly(degree: usize) -> usize {
    (usize::BITS - degree.leading_zeros()) as usize
}

/// Levels consumed per node kind. Activations are derived from the
/// polynomial degree and Scale consumes only for factors other than 0 and 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumeTable(pub BTreeMap<String, usize>);

impl ConsumeTable {
    pub fn for_profile(profile: &HeProfile) -> Self {
        let bn = if profile.fold_batchnorm { 0 } else { 1 };
        ConsumeTable(
            [
                ("Conv", 1),
                ("FullyConnected", 1),
                ("BatchNorm", bn),
                ("MeanPool", 0),
                ("Add", 0),
                ("Scale", 1),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        )
    }

    pub fn levels(&self, id: usize, kind: &NodeKind) -> Result<usize, HeError> {
        let lookup = |name: &str| self.0.get(name).copied().ok_or_else(|| HeError::MissingKind(name.into()));
        match kind {
            NodeKind::Input | NodeKind::Output | NodeKind::Bootstrap | NodeKind::Rescale { .. } => Ok(0),
            NodeKind::Activation(ActivationSpec::Poly(p)) => Ok(depth_of_poly(p.degree())),
            NodeKind::Activation(_) | NodeKind::MaxPool { .. } | NodeKind::LayerNorm => {
                Err(HeError::NotHeFriendly { node: id, kind: kind_label(kind) })
            }
            NodeKind::Scale(a) if *a == 0.0 || *a == 1.0 => Ok(0),
            k => lookup(k.name()),
        }
    }
}

pub(crate) fn kind_label(kind: &NodeKind) -> String {
    match kind {
        NodeKind::Activation(ActivationSpec::Relu) => "Activation(ReLU)".into(),
        NodeKind::Activation(ActivationSpec::Gelu) => "Activation(GELU)".into(),
        NodeKind::Activation(ActivationSpec::Poly(p)) => format!("Activation(Poly{})", p.degree()),
        NodeKind::Scale(a) => format!("Scale({a})"),
        NodeKind::Rescale { levels } => format!("Rescale({levels})"),
        k => k.name().into(),
    }
}
