//! The nine maintenance methods and the design choices each one makes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    KeepAll,
    FixM0,
    FinetuneM0,
    NonBC,
    PostLinSLoss,
    PostLinMLoss,
    JointNoTrans,
    JointLinSLoss,
    BCAligner,
}

/// What is kept around at serving time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Maintenance {
    KeepAll,
    KeepM0,
    KeepLatest,
}

/// How `M_k` (and `B_k`) are fitted at version `k > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Fresh `M_k` on the intended loss only.
    IntendedOnly,
    /// Reuse `M_0` unchanged.
    Frozen,
    /// Continue training `M_{k-1}` on the intended loss, same architecture.
    Finetune,
    /// `M_k` and `B_k` minimise `L_k + λ L_align` together.
    Joint,
    /// Fit `M_k` on `L_k`, then fit `B_k` on `L_align` with `M_k` frozen.
    Posthoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformChoice {
    None,
    Linear,
    NoTrans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignLoss {
    SingleStep,
    MultiStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub maintenance: Maintenance,
    pub strategy: Strategy,
    pub transform: TransformChoice,
    pub loss: AlignLoss,
}

impl MethodSpec {
    /// Whether an alignment loss is minimised at `k > 0`.
    pub fn learns_alignment(&self) -> bool {
        matches!(self.strategy, Strategy::Joint)
            || (self.strategy == Strategy::Posthoc && self.transform == TransformChoice::Linear)
    }

    /// Whether the architecture follows the growth schedule.
    pub fn grows_architecture(&self) -> bool {
        !matches!(self.strategy, Strategy::Frozen | Strategy::Finetune)
    }
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::KeepAll,
        Method::FixM0,
        Method::FinetuneM0,
        Method::NonBC,
        Method::PostLinSLoss,
        Method::PostLinMLoss,
        Method::JointNoTrans,
        Method::JointLinSLoss,
        Method::BCAligner,
    ];

    /// The six methods that keep only the latest model plus transforms.
    pub const KEEP_LATEST: [Method; 6] = [
        Method::NonBC,
        Method::PostLinSLoss,
        Method::PostLinMLoss,
        Method::JointNoTrans,
        Method::JointLinSLoss,
        Method::BCAligner,
    ];

    pub fn spec(self) -> MethodSpec {
        use AlignLoss::*;
        use Strategy::*;
        use TransformChoice as T;
        let (maintenance, strategy, transform, loss) = match self {
            Method::KeepAll => (Maintenance::KeepAll, IntendedOnly, T::None, SingleStep),
            Method::FixM0 => (Maintenance::KeepM0, Frozen, T::None, SingleStep),
            Method::FinetuneM0 => (Maintenance::KeepM0, Finetune, T::None, SingleStep),
            Method::NonBC => (Maintenance::KeepLatest, Posthoc, T::NoTrans, SingleStep),
            Method::PostLinSLoss => (Maintenance::KeepLatest, Posthoc, T::Linear, SingleStep),
            Method::PostLinMLoss => (Maintenance::KeepLatest, Posthoc, T::Linear, MultiStep),
            Method::JointNoTrans => (Maintenance::KeepLatest, Joint, T::NoTrans, SingleStep),
            Method::JointLinSLoss => (Maintenance::KeepLatest, Joint, T::Linear, SingleStep),
            Method::BCAligner => (Maintenance::KeepLatest, Joint, T::Linear, MultiStep),
        };
        MethodSpec {
            method: self,
            maintenance,
            strategy,
            transform,
            loss,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::KeepAll => "Keep-All",
            Method::FixM0 => "Fix-M0",
            Method::FinetuneM0 => "Finetune-M0",
            Method::NonBC => "Non-BC",
            Method::PostLinSLoss => "Post-Lin-SLoss",
            Method::PostLinMLoss => "Post-Lin-MLoss",
            Method::JointNoTrans => "Joint-NoTrans",
            Method::JointLinSLoss => "Joint-Lin-SLoss",
            Method::BCAligner => "BC-Aligner",
        }
    }

    /// Identifier used in configs and directory names.
    pub fn key(self) -> &'static str {
        match self {
            Method::KeepAll => "keep_all",
            Method::FixM0 => "fix_m0",
            Method::FinetuneM0 => "finetune_m0",
            Method::NonBC => "non_bc",
            Method::PostLinSLoss => "post_lin_sloss",
            Method::PostLinMLoss => "post_lin_mloss",
            Method::JointNoTrans => "joint_notrans",
            Method::JointLinSLoss => "joint_lin_sloss",
            Method::BCAligner => "bc_aligner",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Method::ALL
            .into_iter()
            .find(|m| {
                let name: String = m.name().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
                let key: String = m.key().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
                name.eq_ignore_ascii_case(&norm) || key == norm || format!("{m:?}").eq_ignore_ascii_case(&norm)
            })
            .or_else(|| (norm == "jointlinmloss").then_some(Method::BCAligner))
            .ok_or_else(|| Error::Validation(format!("unknown method {s:?}")))
    }
}
