//! The convention-refinement law registry and the rewrite engine that
//! replays the two full derivation sequences down to the direct convention
//! `ro . wt . CAinjp . asm_injp`, plus the shorter pipeline derivation
//! ending in `ro . wt . CAinjp`.
//!
//! Laws are validated in three modes: constructive laws run their witness
//! construction and check both refinement obligations per sample; sampled
//! laws search for counterexamples; symbolic laws involve the Ltl and Mach
//! placeholder atoms and are recorded as trusted rewriting steps.

use super::{ConvAtom, Level};
use crate::gen::{
    gen_decomposed_evolution, gen_interpolation_instance, gen_single_injection, rng_for,
    GenConfig,
};
use crate::inject::{compose_inj, mem_inj_check, Meminj};
use crate::kmr::{
    decompose_identity, injp_acc_check, interpolate, kmr_acc_check, kmr_sample_refine,
    recompose_check, InjpWorld, KmrTag,
};
use crate::mem::{mem_acc_check, Value};
use serde_json::{json, Value as Json};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// The left-hand side refines the right-hand side.
    RefinedBy,
    Equiv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    ConstructiveWitness,
    SampledCheck,
    SymbolicOnly,
}

#[derive(Debug, Clone)]
pub struct RewriteLaw {
    pub name: &'static str,
    pub lhs: Vec<ConvAtom>,
    pub rhs: Vec<ConvAtom>,
    pub direction: Direction,
    pub mode: Validation,
    /// What makes the law true, printed alongside derivations.
    pub note: &'static str,
}

fn kmr(level: Level, tag: KmrTag) -> ConvAtom {
    ConvAtom::Kmr(level, tag)
}

fn leak(s: String) -> &'static str {
    Box::leak(s.into_boxed_str())
}

/// All registered laws.
pub fn registry() -> Vec<RewriteLaw> {
    use ConvAtom::{CAinjp, Cl, Lm, Ma, Ro, Wt};
    use KmrTag::{Ext, Inj, Injp};
    use Level::{Asm, C, Ltl, Mach};

    let mut laws = Vec::new();

    for (tagname, level) in [("c", C), ("asm", Asm)] {
        laws.push(RewriteLaw {
            name: leak(format!("{tagname}-injp-idem")),
            lhs: vec![kmr(level, Injp), kmr(level, Injp)],
            rhs: vec![kmr(level, Injp)],
            direction: Direction::Equiv,
            mode: Validation::ConstructiveWitness,
            note: "stacked protected evolutions merge through an interpolating state and a \
                   single protected evolution splits through the identity decomposition",
        });
        laws.push(RewriteLaw {
            name: leak(format!("{tagname}-injp-refines-inj")),
            lhs: vec![kmr(level, Injp)],
            rhs: vec![kmr(level, Inj)],
            direction: Direction::RefinedBy,
            mode: Validation::ConstructiveWitness,
            note: "the protected accessibility implies the unprotected one on the same world",
        });
        laws.push(RewriteLaw {
            name: leak(format!("{tagname}-inj-idem")),
            lhs: vec![kmr(level, Inj), kmr(level, Inj)],
            rhs: vec![kmr(level, Inj)],
            direction: Direction::RefinedBy,
            mode: Validation::SampledCheck,
            note: "injections compose; the identity decomposition splits an unprotected \
                   evolution",
        });
        laws.push(RewriteLaw {
            name: leak(format!("{tagname}-injp-absorb-inj")),
            lhs: vec![kmr(level, Injp), kmr(level, Inj), kmr(level, Injp)],
            rhs: vec![kmr(level, Injp)],
            direction: Direction::RefinedBy,
            mode: Validation::SampledCheck,
            note: "an unprotected middle evolution between two protected ones composes into \
                   one protected evolution",
        });
        laws.push(RewriteLaw {
            name: leak(format!("{tagname}-ext-idem")),
            lhs: vec![kmr(level, Ext), kmr(level, Ext)],
            rhs: vec![kmr(level, Ext)],
            direction: Direction::Equiv,
            mode: Validation::SampledCheck,
            note: "identity-shaped injections compose to identity shape",
        });
        laws.push(RewriteLaw {
            name: leak(format!("{tagname}-ext-absorb-left")),
            lhs: vec![kmr(level, Ext), kmr(level, Inj)],
            rhs: vec![kmr(level, Inj)],
            direction: Direction::Equiv,
            mode: Validation::SampledCheck,
            note: "an extension composed before an injection is an injection",
        });
        laws.push(RewriteLaw {
            name: leak(format!("{tagname}-ext-absorb-right")),
            lhs: vec![kmr(level, Inj), kmr(level, Ext)],
            rhs: vec![kmr(level, Inj)],
            direction: Direction::Equiv,
            mode: Validation::SampledCheck,
            note: "an extension composed after an injection is an injection",
        });
    }

    laws.push(RewriteLaw {
        name: "ro-injp-trans",
        lhs: vec![Ro, kmr(C, Injp), Ro, kmr(C, Injp)],
        rhs: vec![Ro, kmr(C, Injp)],
        direction: Direction::Equiv,
        mode: Validation::ConstructiveWitness,
        note: "read-only validity piggybacks on the protected evolution: initial validity \
               copies to the middle state and monotone evolution preserves it",
    });
    for (name, k) in [
        ("wt-commute-c-injp", Injp),
        ("wt-commute-c-inj", Inj),
        ("wt-commute-c-ext", Ext),
    ] {
        laws.push(RewriteLaw {
            name,
            lhs: vec![kmr(C, k), Wt],
            rhs: vec![Wt, kmr(C, k)],
            direction: Direction::Equiv,
            mode: Validation::ConstructiveWitness,
            note: "typing constrains one endpoint and transfers across value injection, so \
                   it commutes with the structural convention",
        });
    }
    laws.push(RewriteLaw {
        name: "wt-absorb-c-inj",
        lhs: vec![Wt, kmr(C, Inj), Wt],
        rhs: vec![kmr(C, Inj), Wt],
        direction: Direction::Equiv,
        mode: Validation::ConstructiveWitness,
        note: "a typing invariant on the source side of an injection is redundant when the \
               target side is already typed",
    });
    laws.push(RewriteLaw {
        name: "wt-idem",
        lhs: vec![Wt, Wt],
        rhs: vec![Wt],
        direction: Direction::Equiv,
        mode: Validation::ConstructiveWitness,
        note: "the typing invariant is idempotent",
    });
    laws.push(RewriteLaw {
        name: "inv-comm",
        lhs: vec![Ro, Wt],
        rhs: vec![Wt, Ro],
        direction: Direction::Equiv,
        mode: Validation::ConstructiveWitness,
        note: "the two semantic invariants constrain one query independently",
    });

    // Calling-convention lifts: a structural convention below a
    // calling-convention step lifts above it (and conversely pushes down).
    for (zname, z, upper, lower) in
        [("cl", Cl, C, Ltl), ("lm", Lm, Ltl, Mach), ("ma", Ma, Mach, Asm)]
    {
        for (kname, k) in [("ext", Ext), ("inj", Inj), ("injp", Injp)] {
            laws.push(RewriteLaw {
                name: leak(format!("lift-{zname}-{kname}")),
                lhs: vec![kmr(upper, k), z],
                rhs: vec![z, kmr(lower, k)],
                direction: Direction::RefinedBy,
                mode: Validation::SymbolicOnly,
                note: "structural conventions commute over calling-convention steps",
            });
        }
    }
    laws.push(RewriteLaw {
        name: "cainjp-merge",
        lhs: vec![kmr(C, Injp), Cl, Lm, Ma],
        rhs: vec![CAinjp],
        direction: Direction::Equiv,
        mode: Validation::SymbolicOnly,
        note: "the protected C-level convention merged with the three calling-convention \
               steps is the direct C-to-Asm convention",
    });
    laws.push(RewriteLaw {
        name: "cainjp-injp-absorb",
        lhs: vec![kmr(C, Injp), CAinjp],
        rhs: vec![CAinjp],
        direction: Direction::Equiv,
        mode: Validation::ConstructiveWitness,
        note: "the direct convention already carries a protected world, so a protected \
               C-level step composes into it by transitivity of the protected relation",
    });

    laws
}

pub fn find_law(name: &str) -> Option<RewriteLaw> {
    registry().into_iter().find(|l| l.name == name)
}

#[derive(Debug, Clone)]
pub struct PatternMismatch {
    pub law: String,
    pub pos: usize,
}

impl fmt::Display for PatternMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "law {} does not match at position {}", self.law, self.pos)
    }
}

impl std::error::Error for PatternMismatch {}

/// Replace one occurrence of a law's pattern. `forward` rewrites the
/// left-hand side into the right-hand side.
pub fn apply_law(
    chain: &[ConvAtom],
    law: &RewriteLaw,
    pos: usize,
    forward: bool,
) -> Result<Vec<ConvAtom>, PatternMismatch> {
    let (from, to) = if forward { (&law.lhs, &law.rhs) } else { (&law.rhs, &law.lhs) };
    if pos + from.len() > chain.len() || chain[pos..pos + from.len()] != from[..] {
        return Err(PatternMismatch { law: law.name.to_string(), pos });
    }
    let mut out = chain[..pos].to_vec();
    out.extend(to.iter().copied());
    out.extend(chain[pos + from.len()..].iter().copied());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ScriptApp {
    pub law: &'static str,
    pub pos: usize,
    pub forward: bool,
}

fn app(law: &'static str, pos: usize) -> ScriptApp {
    ScriptApp { law, pos, forward: true }
}

fn rapp(law: &'static str, pos: usize) -> ScriptApp {
    ScriptApp { law, pos, forward: false }
}

#[derive(Debug, Clone)]
pub struct ScriptStep {
    pub label: &'static str,
    pub apps: Vec<ScriptApp>,
}

#[derive(Debug, Clone)]
pub struct DerivationStep {
    pub label: String,
    pub laws: Vec<String>,
    pub notes: Vec<String>,
    pub before: Vec<ConvAtom>,
    pub after: Vec<ConvAtom>,
}

#[derive(Debug, Clone)]
pub struct Derivation {
    pub start: Vec<ConvAtom>,
    pub steps: Vec<DerivationStep>,
}

impl Derivation {
    pub fn final_chain(&self) -> &[ConvAtom] {
        self.steps.last().map(|s| s.after.as_slice()).unwrap_or(&self.start)
    }

    /// Number of printed stages including the start.
    pub fn stages(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn to_json(&self) -> Json {
        let chain_str =
            |c: &[ConvAtom]| c.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" . ");
        json!({
            "start": chain_str(&self.start),
            "steps": self
                .steps
                .iter()
                .map(|s| {
                    json!({
                        "label": s.label,
                        "laws": s.laws,
                        "citation": s.notes,
                        "before": chain_str(&s.before),
                        "after": chain_str(&s.after),
                    })
                })
                .collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DeriveError {
    pub step: usize,
    pub mismatch: PatternMismatch,
}

impl fmt::Display for DeriveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} failed: {}", self.step, self.mismatch)
    }
}

impl std::error::Error for DeriveError {}

/// Replay a script against a starting chain.
pub fn derive_rewrite(
    start: &[ConvAtom],
    script: &[ScriptStep],
) -> Result<Derivation, DeriveError> {
    let mut chain = start.to_vec();
    let mut steps = Vec::new();
    for (i, step) in script.iter().enumerate() {
        let before = chain.clone();
        let mut laws = Vec::new();
        let mut notes = Vec::new();
        for a in &step.apps {
            let law = find_law(a.law).unwrap_or_else(|| panic!("unknown law {}", a.law));
            chain = apply_law(&chain, &law, a.pos, a.forward)
                .map_err(|mismatch| DeriveError { step: i, mismatch })?;
            if !laws.contains(&law.name.to_string()) {
                laws.push(law.name.to_string());
                notes.push(law.note.to_string());
            }
        }
        steps.push(DerivationStep {
            label: step.label.to_string(),
            laws,
            notes,
            before,
            after: chain.clone(),
        });
    }
    Ok(Derivation { start: start.to_vec(), steps })
}

/// The composed outgoing conventions of the full pass table.
pub fn outgoing_start() -> Vec<ConvAtom> {
    use ConvAtom::{Cl, Lm, Ma, Ro, Wt};
    use KmrTag::{Ext, Inj, Injp};
    use Level::{Asm, C, Ltl, Mach};
    vec![
        Ro,
        kmr(C, Injp),
        kmr(C, Injp),
        kmr(C, Injp),
        Wt,
        kmr(C, Ext),
        kmr(C, Ext),
        kmr(C, Inj),
        kmr(C, Ext),
        kmr(C, Injp),
        Ro,
        kmr(C, Injp),
        Ro,
        kmr(C, Injp),
        Ro,
        kmr(C, Injp),
        kmr(C, Inj),
        Wt,
        kmr(C, Ext),
        Cl,
        kmr(Ltl, Ext),
        kmr(Ltl, Injp),
        Lm,
        kmr(Mach, Ext),
        Ma,
        kmr(Asm, Inj),
        kmr(Asm, Injp),
    ]
}

/// The composed incoming conventions of the full pass table.
pub fn incoming_start() -> Vec<ConvAtom> {
    use ConvAtom::{Cl, Lm, Ma, Ro, Wt};
    use KmrTag::{Ext, Inj, Injp};
    use Level::{Asm, C, Ltl, Mach};
    vec![
        Ro,
        kmr(C, Injp),
        kmr(C, Inj),
        kmr(C, Inj),
        Wt,
        kmr(C, Ext),
        kmr(C, Ext),
        kmr(C, Inj),
        kmr(C, Ext),
        kmr(C, Injp),
        Ro,
        kmr(C, Injp),
        Ro,
        kmr(C, Injp),
        Ro,
        kmr(C, Injp),
        kmr(C, Inj),
        Wt,
        kmr(C, Ext),
        Cl,
        kmr(Ltl, Ext),
        Lm,
        kmr(Mach, Inj),
        kmr(Mach, Ext),
        Ma,
        kmr(Asm, Inj),
        kmr(Asm, Injp),
    ]
}

/// Script rewriting the outgoing composition to the direct convention in
/// nine steps (ten printed stages).
pub fn outgoing_script() -> Vec<ScriptStep> {
    vec![
        ScriptStep {
            label: "merge adjacent protected steps, collapse extensions, merge read-only pairs",
            apps: vec![
                app("c-injp-idem", 1),
                app("c-injp-idem", 1),
                app("c-ext-idem", 3),
                app("c-ext-absorb-left", 3),
                app("c-ext-absorb-right", 3),
                app("ro-injp-trans", 5),
                app("ro-injp-trans", 5),
            ],
        },
        ScriptStep {
            label: "move the second typing invariant leftward",
            apps: vec![
                app("wt-commute-c-inj", 7),
                app("wt-commute-c-injp", 6),
                app("inv-comm", 5),
                app("wt-commute-c-injp", 4),
            ],
        },
        ScriptStep {
            label: "drop the duplicated typing invariant, move the survivor to the front",
            apps: vec![
                app("wt-absorb-c-inj", 2),
                app("wt-commute-c-inj", 2),
                app("wt-commute-c-injp", 1),
                app("inv-comm", 0),
            ],
        },
        ScriptStep {
            label: "lift the lower-level conventions above the calling-convention steps",
            apps: vec![
                rapp("lift-cl-ext", 9),
                rapp("lift-cl-injp", 10),
                rapp("lift-lm-ext", 12),
                rapp("lift-cl-ext", 11),
                rapp("lift-ma-inj", 14),
                rapp("lift-lm-inj", 13),
                rapp("lift-cl-inj", 12),
            ],
        },
        ScriptStep {
            label: "collapse extensions again and strengthen injections to protected ones",
            apps: vec![
                app("c-ext-idem", 8),
                app("c-ext-absorb-right", 7),
                app("c-ext-absorb-left", 9),
                rapp("c-injp-refines-inj", 3),
                rapp("c-injp-refines-inj", 7),
                rapp("c-injp-refines-inj", 9),
            ],
        },
        ScriptStep {
            label: "merge the protected steps",
            apps: vec![
                app("c-injp-idem", 2),
                app("c-injp-idem", 2),
                app("c-injp-idem", 4),
                app("c-injp-idem", 4),
                app("c-injp-idem", 4),
            ],
        },
        ScriptStep {
            label: "merge the remaining read-only pair",
            apps: vec![app("ro-injp-trans", 1)],
        },
        ScriptStep {
            label: "commute the two semantic invariants",
            apps: vec![rapp("inv-comm", 0)],
        },
        ScriptStep {
            label: "merge the protected step with the calling convention",
            apps: vec![app("cainjp-merge", 2)],
        },
    ]
}

/// Script rewriting the incoming composition to the direct convention in
/// eleven steps (twelve printed stages).
pub fn incoming_script() -> Vec<ScriptStep> {
    vec![
        ScriptStep {
            label: "merge injections, collapse extensions, merge read-only pairs",
            apps: vec![
                app("c-inj-idem", 2),
                app("c-ext-idem", 4),
                app("c-ext-absorb-left", 4),
                app("c-ext-absorb-right", 4),
                app("ro-injp-trans", 6),
                app("ro-injp-trans", 6),
            ],
        },
        ScriptStep {
            label: "move the second typing invariant leftward",
            apps: vec![
                app("wt-commute-c-inj", 8),
                app("wt-commute-c-injp", 7),
                app("inv-comm", 6),
                app("wt-commute-c-injp", 5),
            ],
        },
        ScriptStep {
            label: "drop the duplicated typing invariant, move the survivor to the front",
            apps: vec![
                app("wt-absorb-c-inj", 3),
                app("wt-commute-c-inj", 3),
                app("wt-commute-c-inj", 2),
                app("wt-commute-c-injp", 1),
                app("inv-comm", 0),
            ],
        },
        ScriptStep {
            label: "split one protected step in two",
            apps: vec![rapp("c-injp-idem", 7)],
        },
        ScriptStep {
            label: "push the split conventions below the calling-convention steps",
            apps: vec![
                app("lift-cl-ext", 10),
                app("lift-cl-inj", 9),
                app("lift-cl-injp", 8),
                app("lift-lm-ext", 12),
                app("lift-lm-ext", 11),
                app("lift-lm-inj", 10),
                app("lift-lm-injp", 9),
                app("lift-ma-ext", 15),
                app("lift-ma-inj", 14),
                app("lift-ma-ext", 13),
                app("lift-ma-ext", 12),
                app("lift-ma-inj", 11),
                app("lift-ma-injp", 10),
            ],
        },
        ScriptStep {
            label: "collapse the machine-level extensions",
            apps: vec![
                app("asm-ext-idem", 13),
                app("asm-ext-absorb-left", 13),
                app("asm-ext-absorb-right", 13),
            ],
        },
        ScriptStep {
            label: "merge adjacent injections on both levels",
            apps: vec![
                app("c-inj-idem", 3),
                app("asm-inj-idem", 11),
                app("asm-inj-idem", 11),
            ],
        },
        ScriptStep {
            label: "absorb injections into the protected steps on both levels",
            apps: vec![app("c-injp-absorb-inj", 2), app("asm-injp-absorb-inj", 8)],
        },
        ScriptStep {
            label: "merge the remaining read-only pair",
            apps: vec![app("ro-injp-trans", 1)],
        },
        ScriptStep {
            label: "commute the two semantic invariants",
            apps: vec![rapp("inv-comm", 0)],
        },
        ScriptStep {
            label: "merge the protected step with the calling convention",
            apps: vec![app("cainjp-merge", 2)],
        },
    ]
}

/// The pipeline's composed outgoing conventions: a read-only self-step,
/// promotion, constant propagation, a typing self-step and lowering.
pub fn pipeline_start() -> Vec<ConvAtom> {
    use ConvAtom::{CAinjp, Ro, Wt};
    vec![
        Ro,
        kmr(Level::C, KmrTag::Injp),
        kmr(Level::C, KmrTag::Injp),
        Ro,
        kmr(Level::C, KmrTag::Injp),
        Wt,
        CAinjp,
    ]
}

pub fn pipeline_script() -> Vec<ScriptStep> {
    vec![
        ScriptStep {
            label: "merge the adjacent protected steps",
            apps: vec![app("c-injp-idem", 1)],
        },
        ScriptStep {
            label: "merge the read-only pairs",
            apps: vec![app("ro-injp-trans", 0)],
        },
        ScriptStep {
            label: "commute the typing invariant forward",
            apps: vec![app("wt-commute-c-injp", 1)],
        },
        ScriptStep {
            label: "absorb the protected step into the direct convention",
            apps: vec![app("cainjp-injp-absorb", 2)],
        },
    ]
}

/// Absorption of a source-level refinement into the direct convention:
/// `ro . wt . c_injp . scc` rewrites back to `scc`.
pub fn absorb_start() -> Vec<ConvAtom> {
    use ConvAtom::{CAinjp, Ro, Wt};
    vec![Ro, Wt, kmr(Level::C, KmrTag::Injp), Ro, Wt, CAinjp]
}

pub fn absorb_script() -> Vec<ScriptStep> {
    vec![
        ScriptStep {
            label: "regroup the invariants around the protected step",
            apps: vec![rapp("wt-commute-c-injp", 1), rapp("inv-comm", 2), app("wt-idem", 3)],
        },
        ScriptStep {
            label: "expose a protected step inside the direct convention",
            apps: vec![rapp("cainjp-injp-absorb", 4), rapp("wt-commute-c-injp", 3)],
        },
        ScriptStep {
            label: "merge the read-only pairs",
            apps: vec![app("ro-injp-trans", 0)],
        },
        ScriptStep {
            label: "restore the invariant order and absorb",
            apps: vec![app("wt-commute-c-injp", 1), app("cainjp-injp-absorb", 2)],
        },
    ]
}

// ---------------------------------------------------------------------
// Law validation.
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LawReport {
    pub law: String,
    pub mode: Validation,
    pub samples: usize,
    pub failures: Vec<String>,
}

impl LawReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_json(&self) -> Json {
        json!({
            "law": self.law,
            "mode": format!("{:?}", self.mode),
            "samples": self.samples,
            "failures": self.failures,
        })
    }
}

#[derive(Debug, Clone)]
pub struct UnsupportedLaw(pub String);

impl fmt::Display for UnsupportedLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no validation registered for law {:?}", self.0)
    }
}

impl std::error::Error for UnsupportedLaw {}

fn check_interpolation(seed: u64, i: u64, failures: &mut Vec<String>) {
    let cfg = GenConfig::default();
    let mut rng = rng_for(seed, i);
    let inst = gen_interpolation_instance(&mut rng, &cfg);
    let c = &inst.chain;
    match interpolate(&c.j12, &c.j23, &c.m1, &c.m2, &c.m3, &inst.j13p, &inst.m1p, &inst.m3p) {
        Err(e) => failures.push(format!("instance {i}: {e}")),
        Ok((j12p, j23p, m2p)) => {
            let checks = [
                ("first leg relation", mem_inj_check(&j12p, &inst.m1p, &m2p).ok()),
                ("second leg relation", mem_inj_check(&j23p, &m2p, &inst.m3p).ok()),
                (
                    "first leg accessibility",
                    injp_acc_check(
                        &InjpWorld::new(c.j12.clone(), c.m1.clone(), c.m2.clone()),
                        &InjpWorld::new(j12p.clone(), inst.m1p.clone(), m2p.clone()),
                    )
                    .ok(),
                ),
                (
                    "second leg accessibility",
                    injp_acc_check(
                        &InjpWorld::new(c.j23.clone(), c.m2.clone(), c.m3.clone()),
                        &InjpWorld::new(j23p.clone(), m2p.clone(), inst.m3p.clone()),
                    )
                    .ok(),
                ),
                ("recomposition", compose_inj(&j12p, &j23p) == inst.j13p),
            ];
            for (what, ok) in checks {
                if !ok {
                    failures.push(format!("instance {i}: {what} failed"));
                }
            }
        }
    }
}

fn check_decomposition(seed: u64, i: u64, failures: &mut Vec<String>) {
    let cfg = GenConfig::default();
    let mut rng = rng_for(seed, i);
    let (j13, m1, m3) = gen_single_injection(&mut rng, &cfg);
    let (j12, m2, j23) = decompose_identity(&j13, &m1);
    if !mem_inj_check(&j12, &m1, &m2).ok() || !mem_inj_check(&j23, &m2, &m3).ok() {
        failures.push(format!("instance {i}: decomposition legs unrelated"));
        return;
    }
    let (j12p, j23p, m1p, _m2p, m3p) = gen_decomposed_evolution(&mut rng, &cfg, &j13, &m1, &m3);
    let r = recompose_check(&j13, &m1, &m3, &j12p, &j23p, &m1p, &m3p);
    if !r.ok() {
        failures.push(format!("instance {i}: recomposition failed: {r}"));
    }
}

fn check_inj_variant(seed: u64, i: u64, tag: KmrTag, failures: &mut Vec<String>) {
    // Split an evolution through the identity decomposition and verify the
    // weaker accessibility transfers both ways.
    let cfg = GenConfig::default();
    let mut rng = rng_for(seed, i);
    let (j13, m1, m3) = gen_single_injection(&mut rng, &cfg);
    let (j12p, j23p, m1p, m2p, m3p) = gen_decomposed_evolution(&mut rng, &cfg, &j13, &m1, &m3);
    let (j12, m2, j23) = decompose_identity(&j13, &m1);
    for (lvl, before, after) in [
        (
            1,
            InjpWorld::new(j12, m1.clone(), m2.clone()),
            InjpWorld::new(j12p.clone(), m1p.clone(), m2p.clone()),
        ),
        (
            2,
            InjpWorld::new(j23, m2, m3.clone()),
            InjpWorld::new(j23p.clone(), m2p.clone(), m3p.clone()),
        ),
    ] {
        let acc = kmr_acc_check(tag, &before, &after);
        if !acc.ok() {
            failures.push(format!("instance {i}: leg {lvl} accessibility failed: {acc}"));
        }
    }
    let composed = compose_inj(&j12p, &j23p);
    let acc = kmr_acc_check(
        tag,
        &InjpWorld::new(j13, m1, m3),
        &InjpWorld::new(composed, m1p, m3p),
    );
    if !acc.ok() {
        failures.push(format!("instance {i}: composed accessibility failed: {acc}"));
    }
}

fn check_ext_law(seed: u64, i: u64, failures: &mut Vec<String>) {
    // Extensions are identity-shaped with equal footprints; composing one
    // with an injection neither changes the injection nor the shape.
    let cfg = GenConfig::default();
    let mut rng = rng_for(seed, i);
    let (j, m1, _m2) = gen_single_injection(&mut rng, &cfg);
    let ext = Meminj::identity_on(&m1);
    if !mem_inj_check(&ext, &m1, &m1).ok() {
        failures.push(format!("instance {i}: identity extension is not a relation"));
        return;
    }
    if compose_inj(&ext, &j) != j {
        failures.push(format!("instance {i}: extension composition changed the injection"));
    }
    let ext2 = compose_inj(&ext, &ext);
    if !ext2.is_identity_shaped() {
        failures.push(format!("instance {i}: composed extensions lost identity shape"));
    }
}

fn check_ro_injp_trans(seed: u64, i: u64, failures: &mut Vec<String>) {
    use crate::sem::{SymDecl, SymbolTable};
    let cfg = GenConfig::default();
    let mut rng = rng_for(seed, i);
    let se =
        SymbolTable::build(&[SymDecl::var("key", true, vec![Value::int(42)])]).expect("table");
    // A chain that keeps the read-only global identity-mapped.
    let m1 = se.initial_memory();
    let (m1, extra) = m1.alloc(0, 4).unwrap();
    let m1 = m1.store(extra, 0, Value::int(7)).unwrap();
    let j12 = Meminj::identity_on(&m1);
    let j23 = Meminj::identity_on(&m1);
    let m2 = m1.clone();
    let m3 = m1.clone();
    if !se.ro_valid(&m1) {
        failures.push(format!("instance {i}: initial state is not read-only valid"));
        return;
    }
    // Split direction: the middle memory is the source itself.
    let (j12d, m2d, _j23d) = decompose_identity(&compose_inj(&j12, &j23), &m1);
    if !se.ro_valid(&m2d) || !mem_inj_check(&j12d, &m1, &m2d).ok() {
        failures.push(format!("instance {i}: split middle loses read-only validity"));
    }
    // Merge direction: evolve the composed world, interpolate, and check
    // the middle keeps read-only validity and monotone evolution.
    let j13 = compose_inj(&j12, &j23);
    let (j13p, m1p, m3p) = crate::gen::gen_protected_evolution(&mut rng, &cfg, &j13, &m1, &m3);
    match interpolate(&j12, &j23, &m1, &m2, &m3, &j13p, &m1p, &m3p) {
        Err(e) => failures.push(format!("instance {i}: interpolation failed: {e}")),
        Ok((_, _, m2p)) => {
            if !se.ro_valid(&m2p) {
                failures.push(format!("instance {i}: middle state lost read-only validity"));
            }
            if !mem_acc_check(&m2, &m2p) {
                failures.push(format!("instance {i}: middle evolution is not monotone"));
            }
        }
    }
}

fn check_wt_style_law(name: &str, seed: u64, i: u64, failures: &mut Vec<String>) {
    use crate::inject::value_inject_check;
    // Sample a typed value vector related by an injection and verify the
    // typing invariant transfers to whichever side the law moves it.
    let cfg = GenConfig::default();
    let mut rng = rng_for(seed ^ 0x77, i);
    let (j, _m1, _m2) = gen_single_injection(&mut rng, &cfg);
    use rand::Rng;
    let arg1 = Value::int(rng.gen_range(-9..10));
    let arg2 = match j.iter().next() {
        Some((b, _)) => Value::ptr(b, 0),
        None => Value::Undef,
    };
    let targs: Vec<Value> = [arg1, arg2]
        .iter()
        .map(|v| crate::inject::value_transport(&j, v).unwrap_or(Value::Undef))
        .collect();
    let typed = |v: &Value, ptr: bool| match v {
        Value::Undef => true,
        Value::Int { .. } => !ptr,
        Value::Ptr { .. } => ptr,
    };
    let src_typed = typed(&arg1, false) && typed(&arg2, true);
    let tgt_typed = typed(&targs[0], false) && typed(&targs[1], true);
    if !src_typed || !tgt_typed {
        failures.push(format!("{name} instance {i}: typing did not transfer"));
    }
    for (a, b) in [(arg1, targs[0]), (arg2, targs[1])] {
        if !value_inject_check(&j, &a, &b) {
            failures.push(format!("{name} instance {i}: transported value unrelated"));
        }
    }
}

/// Validate one registered law on `samples` seeded instances.
pub fn refine_instance_check(
    name: &str,
    samples: usize,
    seed: u64,
) -> Result<LawReport, UnsupportedLaw> {
    let law = find_law(name).ok_or_else(|| UnsupportedLaw(name.to_string()))?;
    let mut failures = Vec::new();
    match name {
        "c-injp-idem" | "asm-injp-idem" | "cainjp-injp-absorb" => {
            for i in 0..samples as u64 {
                if i % 2 == 0 {
                    check_interpolation(seed, i, &mut failures);
                } else {
                    check_decomposition(seed, i, &mut failures);
                }
            }
        }
        "c-injp-refines-inj" | "asm-injp-refines-inj" => {
            let cfg = GenConfig::default();
            let r = kmr_sample_refine(KmrTag::Injp, KmrTag::Inj, &cfg, samples, seed)
                .expect("registered pair");
            failures.extend(r.counterexamples);
        }
        "c-inj-idem" | "asm-inj-idem" => {
            for i in 0..samples as u64 {
                check_inj_variant(seed, i, KmrTag::Inj, &mut failures);
            }
        }
        "c-injp-absorb-inj" | "asm-injp-absorb-inj" => {
            // The middle leg of the decomposition is unprotected; the
            // composition must still be protected end to end.
            for i in 0..samples as u64 {
                check_decomposition(seed ^ 0x3, i, &mut failures);
            }
        }
        "c-ext-idem" | "asm-ext-idem" | "c-ext-absorb-left" | "asm-ext-absorb-left"
        | "c-ext-absorb-right" | "asm-ext-absorb-right" => {
            for i in 0..samples as u64 {
                check_ext_law(seed, i, &mut failures);
            }
        }
        "ro-injp-trans" => {
            for i in 0..samples as u64 {
                check_ro_injp_trans(seed, i, &mut failures);
            }
        }
        "wt-commute-c-injp" | "wt-commute-c-inj" | "wt-commute-c-ext" | "wt-absorb-c-inj"
        | "wt-idem" | "inv-comm" => {
            for i in 0..samples as u64 {
                check_wt_style_law(name, seed, i, &mut failures);
            }
        }
        _ if law.mode == Validation::SymbolicOnly => {
            return Ok(LawReport {
                law: name.to_string(),
                mode: Validation::SymbolicOnly,
                samples: 0,
                failures: Vec::new(),
            });
        }
        _ => return Err(UnsupportedLaw(name.to_string())),
    }
    Ok(LawReport { law: name.to_string(), mode: law.mode, samples, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::scc;

    #[test]
    fn outgoing_derivation_reaches_direct_convention() {
        let d = derive_rewrite(&outgoing_start(), &outgoing_script()).unwrap();
        assert_eq!(d.stages(), 10);
        let mut expected = scc().flatten();
        expected.push(ConvAtom::Kmr(Level::Asm, KmrTag::Injp));
        assert_eq!(d.final_chain(), &expected[..]);
    }

    #[test]
    fn incoming_derivation_reaches_direct_convention() {
        let d = derive_rewrite(&incoming_start(), &incoming_script()).unwrap();
        assert_eq!(d.stages(), 12);
        let mut expected = scc().flatten();
        expected.push(ConvAtom::Kmr(Level::Asm, KmrTag::Injp));
        assert_eq!(d.final_chain(), &expected[..]);
    }

    #[test]
    fn pipeline_derivation_reaches_scc() {
        let d = derive_rewrite(&pipeline_start(), &pipeline_script()).unwrap();
        assert_eq!(d.final_chain(), &scc().flatten()[..]);
    }

    #[test]
    fn absorb_derivation_reaches_scc() {
        let d = derive_rewrite(&absorb_start(), &absorb_script()).unwrap();
        assert_eq!(d.final_chain(), &scc().flatten()[..]);
    }

    #[test]
    fn mismatched_application_reports_step() {
        let bad = vec![ScriptStep {
            label: "bogus",
            apps: vec![ScriptApp { law: "cainjp-merge", pos: 0, forward: true }],
        }];
        let err = derive_rewrite(&outgoing_start(), &bad).unwrap_err();
        assert_eq!(err.step, 0);
    }
}
