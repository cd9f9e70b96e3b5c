//! The co-execution simulation checker.
//!
//! Semantics in this crate are deterministic, so every existential in the
//! simulation clauses becomes a computed witness: the driver runs source
//! and target in lockstep (the target may stutter a bounded number of
//! steps), checks outgoing queries against the outgoing convention,
//! consults an environment that answers both sides at once, and checks the
//! final replies against the incoming convention.
//!
//! A run where the environment itself breaks the outgoing reply relation is
//! classified vacuous: the rely failed, so the run proves nothing, but it
//! is never reported as a pass.

use super::{
    match_query_chain, match_reply_chain, ChainInstance, ConvAtom,
    ConvWorld, ReplyWitness,
};
use crate::gen::{gen_chain_evolution, rng_for, GenConfig};
use crate::inject::{value_transport, Meminj};
use crate::kmr::InjpWorld;
use crate::mem::{MemoryState, Value};
use crate::sem::{
    AReply, CReply, LtsState, Mode, OpenLts, Query, Reg, Reply, RetKind, Signature,
};
use rand::Rng;
use serde_json::{json, Value as Json};

/// Relates source and target states under the incoming worlds, and
/// produces worlds and witnesses at the boundaries. Implementations are
/// per-pass; all convention checks still run through the generic matchers,
/// keeping the oracle independent of the matcher's internals.
pub trait PassMatcher {
    fn init(&mut self, inst: &ChainInstance, s1: &LtsState, s2: &LtsState) -> Result<(), String>;
    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String>;
    /// The instantiated outgoing convention at an external call, middles
    /// included.
    fn outgoing(
        &mut self,
        s1: &LtsState,
        s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String>;
    /// Incorporate the evolved worlds and per-position replies of an
    /// answered external call.
    fn after_external(
        &mut self,
        evolved: &[InjpWorld],
        replies: &[Reply],
        s1: &LtsState,
        s2: &LtsState,
    ) -> Result<(), String>;
    /// Witnesses and the full reply chain for the incoming convention's
    /// reply side.
    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String>;
}

/// Outcome of answering one external call on both sides.
pub struct CoReplyOutcome {
    /// One reply per chain position (endpoints and middles).
    pub replies: Vec<Reply>,
    pub witnesses: Vec<ReplyWitness>,
    /// Evolved worlds of the bridging atoms, in chain order.
    pub evolved: Vec<InjpWorld>,
}

/// Answers both sides of an external call at once, respecting (or
/// deliberately violating) the outgoing convention.
pub trait CoEnv {
    fn co_reply(&mut self, inst: &ChainInstance) -> Result<CoReplyOutcome, String>;
}

/// How a plan item ended.
#[derive(Debug, Clone)]
pub enum ItemClass {
    Pass,
    Fail { clause: u8, detail: String },
    /// The run proves nothing: the rely was broken, the source got stuck,
    /// or the item was malformed.
    Vacuous { detail: String },
    /// Neither side accepts the query.
    Inapplicable,
}

impl ItemClass {
    pub fn is_pass(&self) -> bool {
        matches!(self, ItemClass::Pass)
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, ItemClass::Fail { .. })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOutcome {
    pub items: Vec<ItemClass>,
}

impl SimOutcome {
    pub fn passes(&self) -> usize {
        self.items.iter().filter(|i| i.is_pass()).count()
    }

    pub fn failures(&self) -> Vec<&ItemClass> {
        self.items.iter().filter(|i| i.is_fail()).collect()
    }

    /// No failures and at least one pass.
    pub fn ok(&self) -> bool {
        self.failures().is_empty() && self.passes() > 0
    }

    pub fn first_failure(&self) -> Option<(u8, &str)> {
        self.items.iter().find_map(|i| match i {
            ItemClass::Fail { clause, detail } => Some((*clause, detail.as_str())),
            _ => None,
        })
    }

    pub fn to_json(&self) -> Json {
        let items: Vec<Json> = self
            .items
            .iter()
            .map(|i| match i {
                ItemClass::Pass => json!({ "class": "pass" }),
                ItemClass::Fail { clause, detail } => {
                    json!({ "class": "fail", "clause": clause, "detail": detail })
                }
                ItemClass::Vacuous { detail } => {
                    json!({ "class": "vacuous", "detail": detail })
                }
                ItemClass::Inapplicable => json!({ "class": "inapplicable" }),
            })
            .collect();
        json!({
            "items": items,
            "passes": self.passes(),
            "failures": self.failures().len(),
        })
    }
}

pub struct SimPlan {
    pub items: Vec<ChainInstance>,
    /// Bound on target steps per source step.
    pub stutter: usize,
    pub fuel: usize,
}

fn advance_until_related(
    tgt: &dyn OpenLts,
    matcher: &mut dyn PassMatcher,
    s1: &LtsState,
    s2: &mut LtsState,
    stutter: usize,
) -> Result<(), String> {
    let mut last = String::new();
    for _ in 0..=stutter {
        match matcher.related(s1, s2) {
            Ok(()) => return Ok(()),
            Err(e) => last = e,
        }
        match tgt.mode(s2) {
            Mode::Step => {
                *s2 = tgt.step(s2).map_err(|e| format!("target stuck: {e}"))?;
            }
            _ => break,
        }
    }
    Err(format!("states never re-relate: {last}"))
}

fn advance_to_boundary(
    tgt: &dyn OpenLts,
    s2: &mut LtsState,
    stutter: usize,
) -> Result<Mode, String> {
    for _ in 0..=stutter {
        match tgt.mode(s2) {
            Mode::Step => {
                *s2 = tgt.step(s2).map_err(|e| format!("target stuck: {e}"))?;
            }
            other => return Ok(other),
        }
    }
    Err("target never reaches a boundary".to_string())
}

/// Run one plan item through the five simulation clauses.
#[allow(clippy::too_many_arguments)]
fn run_item(
    src: &dyn OpenLts,
    tgt: &dyn OpenLts,
    inst: &ChainInstance,
    matcher: &mut dyn PassMatcher,
    env: &mut dyn CoEnv,
    stutter: usize,
    fuel: usize,
) -> ItemClass {
    let q1 = inst.source_query().clone();
    let q2 = inst.target_query().clone();

    // Clause 1: initial-query agreement.
    let a1 = src.accepts(&q1);
    let a2 = tgt.accepts(&q2);
    if a1 != a2 {
        return ItemClass::Fail {
            clause: 1,
            detail: format!("source accepts: {a1}, target accepts: {a2}"),
        };
    }
    if !a1 {
        return ItemClass::Inapplicable;
    }
    let plan_check = match_query_chain(inst);
    if !plan_check.ok() {
        return ItemClass::Vacuous {
            detail: format!("plan item does not satisfy the incoming convention: {plan_check}"),
        };
    }

    // Clause 2: initial states related.
    let mut s1 = match src.init(&q1) {
        Ok(s) => s,
        Err(e) => return ItemClass::Fail { clause: 2, detail: format!("source init: {e}") },
    };
    let mut s2 = match tgt.init(&q2) {
        Ok(s) => s,
        Err(e) => return ItemClass::Fail { clause: 2, detail: format!("target init: {e}") },
    };
    if let Err(e) = matcher.init(inst, &s1, &s2) {
        return ItemClass::Fail { clause: 2, detail: e };
    }
    if let Err(e) = advance_until_related(tgt, matcher, &s1, &mut s2, stutter) {
        return ItemClass::Fail { clause: 2, detail: e };
    }

    let mut fuel = fuel;
    loop {
        if fuel == 0 {
            return ItemClass::Fail { clause: 3, detail: "fuel exhausted".to_string() };
        }
        fuel -= 1;
        match src.mode(&s1) {
            // Clause 3: internal steps preserve the relation.
            Mode::Step => {
                s1 = match src.step(&s1) {
                    Ok(s) => s,
                    Err(e) => {
                        return ItemClass::Vacuous { detail: format!("source stuck: {e}") }
                    }
                };
                if let Err(e) = advance_until_related(tgt, matcher, &s1, &mut s2, stutter) {
                    return ItemClass::Fail { clause: 3, detail: e };
                }
            }
            // Clause 4: external calls.
            Mode::External(q1p) => {
                let q2p = match advance_to_boundary(tgt, &mut s2, stutter) {
                    Ok(Mode::External(q)) => q,
                    Ok(other) => {
                        return ItemClass::Fail {
                            clause: 4,
                            detail: format!(
                                "source at an external call, target at {other:?}"
                            ),
                        }
                    }
                    Err(e) => return ItemClass::Fail { clause: 4, detail: e },
                };
                let out = match matcher.outgoing(&s1, &s2, &q1p, &q2p) {
                    Ok(o) => o,
                    Err(e) => return ItemClass::Fail { clause: 4, detail: e },
                };
                let out_check = match_query_chain(&out);
                if !out_check.ok() {
                    return ItemClass::Fail {
                        clause: 4,
                        detail: format!("outgoing queries unrelated: {out_check}"),
                    };
                }
                let outcome = match env.co_reply(&out) {
                    Ok(o) => o,
                    Err(e) => {
                        return ItemClass::Vacuous { detail: format!("environment: {e}") }
                    }
                };
                let reply_check = match_reply_chain(&out, &outcome.witnesses, &outcome.replies);
                if !reply_check.ok() {
                    return ItemClass::Vacuous {
                        detail: format!(
                            "rely broken: environment reply violates the outgoing convention \
                             (clause 4): {reply_check}"
                        ),
                    };
                }
                let r1 = outcome.replies.first().unwrap().clone();
                let r2 = outcome.replies.last().unwrap().clone();
                s1 = match src.resume(&s1, &r1) {
                    Ok(s) => s,
                    Err(e) => {
                        return ItemClass::Fail { clause: 4, detail: format!("source resume: {e}") }
                    }
                };
                s2 = match tgt.resume(&s2, &r2) {
                    Ok(s) => s,
                    Err(e) => {
                        return ItemClass::Fail { clause: 4, detail: format!("target resume: {e}") }
                    }
                };
                if let Err(e) =
                    matcher.after_external(&outcome.evolved, &outcome.replies, &s1, &s2)
                {
                    return ItemClass::Fail { clause: 4, detail: e };
                }
                if let Err(e) = advance_until_related(tgt, matcher, &s1, &mut s2, stutter) {
                    return ItemClass::Fail { clause: 4, detail: e };
                }
            }
            // Clause 5: final replies related.
            Mode::Final(r1) => {
                let r2 = match advance_to_boundary(tgt, &mut s2, stutter) {
                    Ok(Mode::Final(r)) => r,
                    Ok(other) => {
                        return ItemClass::Fail {
                            clause: 5,
                            detail: format!("source finished, target at {other:?}"),
                        }
                    }
                    Err(e) => return ItemClass::Fail { clause: 5, detail: e },
                };
                let (witnesses, replies) = match matcher.final_witness(&r1, &r2) {
                    Ok(w) => w,
                    Err(e) => return ItemClass::Fail { clause: 5, detail: e },
                };
                if replies.first() != Some(&r1) || replies.last() != Some(&r2) {
                    return ItemClass::Fail {
                        clause: 5,
                        detail: "witness reply chain does not end in the actual replies"
                            .to_string(),
                    };
                }
                let final_check = match_reply_chain(inst, &witnesses, &replies);
                if !final_check.ok() {
                    return ItemClass::Fail {
                        clause: 5,
                        detail: format!("final replies unrelated: {final_check}"),
                    };
                }
                return ItemClass::Pass;
            }
            Mode::Stuck(m) => {
                return ItemClass::Vacuous { detail: format!("source stuck: {m}") }
            }
        }
    }
}

/// Check all plan items. Fresh matcher and environment per item.
pub fn sim_check<'a>(
    src: &dyn OpenLts,
    tgt: &dyn OpenLts,
    plan: &SimPlan,
    mut matcher_for: impl FnMut() -> Box<dyn PassMatcher + 'a>,
    mut env_for: impl FnMut(u64) -> Box<dyn CoEnv + 'a>,
) -> SimOutcome {
    let mut outcome = SimOutcome::default();
    for (i, inst) in plan.items.iter().enumerate() {
        let mut matcher = matcher_for();
        let mut env = env_for(i as u64);
        outcome.items.push(run_item(
            src,
            tgt,
            inst,
            matcher.as_mut(),
            env.as_mut(),
            plan.stutter,
            plan.fuel,
        ));
    }
    outcome
}

// ---------------------------------------------------------------------
// The default convention-respecting environment.
// ---------------------------------------------------------------------

/// Index positions of bridging atoms in a chain.
pub fn bridging_atoms(atoms: &[ConvAtom]) -> Vec<usize> {
    atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a, ConvAtom::Kmr(..) | ConvAtom::CAinjp))
        .map(|(i, _)| i)
        .collect()
}

/// Answers external calls by evolving every bridging world in lockstep
/// with a protected operation script, then transporting a reply value
/// through the evolved injections. Optional sabotage hooks produce the
/// negative behaviours of the test suites.
pub struct ProtectedEnv {
    pub seed: u64,
    pub cfg: GenConfig,
    pub calls: u64,
    pub sabotage: Sabotage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sabotage {
    None,
    /// Write into an out-of-reach cell of the target-most memory.
    ClobberOutOfReach,
    /// Break the callee-save contract in an Asm reply.
    ClobberCalleeSave,
}

impl ProtectedEnv {
    pub fn new(seed: u64) -> ProtectedEnv {
        let cfg = GenConfig { lower_perms: false, ..GenConfig::default() };
        ProtectedEnv { seed, cfg, calls: 0, sabotage: Sabotage::None }
    }

    pub fn with_sabotage(seed: u64, sabotage: Sabotage) -> ProtectedEnv {
        ProtectedEnv { sabotage, ..ProtectedEnv::new(seed) }
    }

    fn reply_value(
        rng: &mut rand::rngs::StdRng,
        sg: Option<&Signature>,
        transportable: &[Value],
    ) -> Value {
        let ret = sg.map(|s| s.ret).unwrap_or(RetKind::Int);
        match ret {
            RetKind::Void => Value::Undef,
            RetKind::Int => Value::int(rng.gen_range(-99..100)),
            RetKind::Ptr => {
                // A pointer that survives transport through every leg, or
                // Undef when none exists.
                if transportable.is_empty() {
                    Value::Undef
                } else {
                    transportable[rng.gen_range(0..transportable.len())]
                }
            }
        }
    }
}

impl CoEnv for ProtectedEnv {
    fn co_reply(&mut self, inst: &ChainInstance) -> Result<CoReplyOutcome, String> {
        let mut rng = rng_for(self.seed ^ 0x5eed, self.calls);
        self.calls += 1;

        let bridges = bridging_atoms(&inst.atoms);
        // Collapse the chain to its bridging legs: invariant atoms keep
        // memories equal, so the leg memories are exactly the distinct
        // query memories around bridges.
        let mut js: Vec<Meminj> = Vec::new();
        let mut mems: Vec<MemoryState> = vec![inst.queries[0].mem().clone()];
        for &b in &bridges {
            let w = match &inst.worlds[b] {
                ConvWorld::Kmr(_, w) => w,
                ConvWorld::CAinjp { w, .. } => w,
                _ => return Err("bridging atom without a KMR world".to_string()),
            };
            js.push(w.j.clone());
            mems.push(w.m2.clone());
        }
        let (evolved_js, evolved_mems) = gen_chain_evolution(&mut rng, &self.cfg, &js, &mems);

        // Reply value at the source end, transported leg by leg.
        let sg = match &inst.queries[0] {
            Query::C(q) => Some(q.sg.clone()),
            Query::Asm(_) => None,
        };
        let transportable: Vec<Value> = evolved_js
            .first()
            .map(|j0| {
                j0.iter()
                    .map(|(b, _)| Value::ptr(b, 0))
                    .filter(|v| {
                        let mut vv = *v;
                        evolved_js.iter().all(|j| match value_transport(j, &vv) {
                            Some(n) => {
                                vv = n;
                                true
                            }
                            None => false,
                        })
                    })
                    .collect()
            })
            .unwrap_or_default();
        let mut values = Vec::with_capacity(evolved_js.len() + 1);
        values.push(Self::reply_value(&mut rng, sg.as_ref(), &transportable));
        for j in &evolved_js {
            let prev = *values.last().unwrap();
            values.push(value_transport(j, &prev).unwrap_or(Value::Undef));
        }

        // Optional sabotage on the target-most memory.
        let mut evolved_mems = evolved_mems;
        if self.sabotage == Sabotage::ClobberOutOfReach {
            if let Some(j) = evolved_js.last() {
                let last = evolved_mems.last().unwrap().clone();
                let victim = last.max_nonempty_positions().into_iter().find(|&(b, o)| {
                    crate::inject::out_of_reach(j, &evolved_mems[evolved_mems.len() - 2], b, o)
                        && last.perm_at(
                            b,
                            o,
                            crate::mem::PermKind::Cur,
                            crate::mem::Permission::Writable,
                        )
                });
                if let Some((b, o)) = victim {
                    *evolved_mems.last_mut().unwrap() =
                        last.store(b, o, Value::int(13371337)).map_err(|e| e.to_string())?;
                }
            }
        }

        // Assemble per-position replies and per-atom witnesses.
        let mut replies = Vec::with_capacity(inst.atoms.len() + 1);
        let mut witnesses = Vec::with_capacity(inst.atoms.len());
        let mut evolved_worlds = Vec::new();
        let mut leg = 0usize;
        let reply_at = |leg: usize, q: &Query, values: &[Value], mems: &[MemoryState]| {
            match q {
                Query::C(_) => {
                    Reply::C(CReply { res: values[leg], mem: mems[leg].clone() })
                }
                Query::Asm(q) => {
                    let mut rs = q.rs.clone();
                    rs.set(Reg::Pc, q.rs.get(Reg::Ra));
                    rs.set(Reg::Rax, values[leg]);
                    Reply::Asm(AReply { rs, mem: mems[leg].clone() })
                }
            }
        };
        replies.push(reply_at(0, &inst.queries[0], &values, &evolved_mems));
        for (i, atom) in inst.atoms.iter().enumerate() {
            if bridges.contains(&i) {
                let w = InjpWorld::new(
                    evolved_js[leg].clone(),
                    evolved_mems[leg].clone(),
                    evolved_mems[leg + 1].clone(),
                );
                evolved_worlds.push(w.clone());
                witnesses.push(match atom {
                    ConvAtom::CAinjp => ReplyWitness::CAinjp(w),
                    _ => ReplyWitness::Kmr(w),
                });
                leg += 1;
            } else {
                witnesses.push(ReplyWitness::Trivial);
            }
            replies.push(reply_at(leg, &inst.queries[i + 1], &values, &evolved_mems));
        }

        if self.sabotage == Sabotage::ClobberCalleeSave {
            if let Some(Reply::Asm(last)) = replies.last_mut() {
                last.rs.set(Reg::Rbx, Value::int(0));
            }
        }

        Ok(CoReplyOutcome { replies, witnesses, evolved: evolved_worlds })
    }
}
