use std::fmt;

use crate::augment::{AugKind, AugPipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Principle {
    /// No global MixUp alongside other hard ops.
    P1,
    /// No stacking of ops with the same perturbation type or difficulty.
    P2,
    /// No more than two non-affine ops in one pipeline.
    P3,
}

impl fmt::Display for Principle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Principle::P1 => "P1",
            Principle::P2 => "P2",
            Principle::P3 => "P3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Recommended,
    Warned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub principle: Principle,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComboReport {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
}

impl ComboReport {
    pub fn principles(&self) -> Vec<Principle> {
        let mut p: Vec<_> = self.violations.iter().map(|v| v.principle).collect();
        p.sort();
        p.dedup();
        p
    }
}

/// Pairs that add little when stacked: same perturbation type (JO~CM, JC~CO)
/// or same difficulty level (JO~JC, CM~CO).
const REDUNDANT_PAIRS: [(AugKind, AugKind, &str); 4] = [
    (AugKind::JointCutout, AugKind::JointCutOcclude, "same difficulty level"),
    (AugKind::Cutout, AugKind::JointCutout, "same perturbation type (zero patches)"),
    (AugKind::CutMix, AugKind::JointCutOcclude, "same perturbation type (pasted patches)"),
    (AugKind::CutMix, AugKind::Cutout, "same difficulty level"),
];

pub fn validate_combination(pipelines: &[AugPipeline]) -> ComboReport {
    let mut violations = Vec::new();
    for p in pipelines {
        let kinds: Vec<AugKind> = p.non_affine().map(|o| o.kind).collect();
        if kinds.contains(&AugKind::MixUp) && kinds.len() > 1 {
            violations.push(Violation {
                principle: Principle::P1,
                message: format!("{}: global MixUp combined with other hard augmentations", p.name),
            });
        }
        for (a, b, why) in REDUNDANT_PAIRS {
            if kinds.contains(&a) && kinds.contains(&b) {
                violations.push(Violation {
                    principle: Principle::P2,
                    message: format!("{}: {a} and {b} stack the {why}", p.name),
                });
            }
        }
        if kinds.len() >= 3 {
            violations.push(Violation {
                principle: Principle::P3,
                message: format!(
                    "{}: {} non-affine augmentations stacked (at most 2 recommended)",
                    p.name,
                    kinds.len()
                ),
            });
        }
    }
    let verdict = if violations.is_empty() {
        Verdict::Recommended
    } else {
        Verdict::Warned
    };
    ComboReport { verdict, violations }
}
