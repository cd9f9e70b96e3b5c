//! Plan construction for simulation checks and the identity matcher used
//! by self-simulation and reflexivity checks.

use super::simcheck::{PassMatcher, SimPlan};
use super::{ChainInstance, ConvAtom, ConvWorld, Level, ReplyWitness};
use crate::gen::rng_for;
use crate::inject::Meminj;
use crate::kmr::InjpWorld;
use crate::mem::{MemoryState, Value};
use crate::sem::{CQuery, LtsState, Query, Reply, Signature, SymbolTable};
use rand::Rng;

/// One world per atom for a run where source and target queries coincide:
/// structural conventions get identity worlds over the query memory.
pub fn identity_worlds(
    atoms: &[ConvAtom],
    se: &SymbolTable,
    q: &Query,
) -> Result<Vec<ConvWorld>, String> {
    atoms
        .iter()
        .map(|atom| match atom {
            ConvAtom::Ro => Ok(ConvWorld::Ro { se: se.clone(), mem: q.mem().clone() }),
            ConvAtom::Wt => match q {
                Query::C(cq) => Ok(ConvWorld::Wt(cq.sg.clone())),
                _ => Err("wt needs a C query".to_string()),
            },
            ConvAtom::Id(_) => Ok(ConvWorld::Id),
            ConvAtom::Kmr(Level::C | Level::Asm, tag) => {
                let m = q.mem().clone();
                Ok(ConvWorld::Kmr(*tag, InjpWorld::new(Meminj::identity_on(&m), m.clone(), m)))
            }
            other => Err(format!("cannot instantiate {other} with an identity world")),
        })
        .collect()
}

/// A plan item whose source and target queries are the same query.
pub fn identity_item(
    atoms: &[ConvAtom],
    se: &SymbolTable,
    q: &Query,
) -> Result<ChainInstance, String> {
    let worlds = identity_worlds(atoms, se, q)?;
    Ok(ChainInstance {
        atoms: atoms.to_vec(),
        worlds,
        queries: vec![q.clone(); atoms.len() + 1],
    })
}

/// Template for randomized C query generation.
pub struct CQueryTemplate {
    pub vf: Value,
    pub sg: Signature,
    /// Fixed argument shapes; integer arguments are re-randomized.
    pub args: Vec<Value>,
}

/// Randomized identity plans: integer arguments and writable global cells
/// are perturbed per item, and some items carry extra junk blocks.
pub fn randomized_identity_plan(
    atoms: &[ConvAtom],
    se: &SymbolTable,
    templates: &[CQueryTemplate],
    base_mem: &MemoryState,
    count: usize,
    seed: u64,
    fuel: usize,
) -> Result<SimPlan, String> {
    let mut items = Vec::new();
    for i in 0..count {
        let mut rng = rng_for(seed, i as u64);
        let t = &templates[i % templates.len()];
        let mut mem = base_mem.clone();
        // Perturb writable global cells that hold integers.
        for (_, info) in se.iter() {
            if info.kind != crate::sem::SymKind::Var || info.read_only {
                continue;
            }
            for (k, _) in info.init.iter().enumerate() {
                if rng.gen_bool(0.3) {
                    mem = mem
                        .store(info.block, 8 * k as i64, Value::int(rng.gen_range(-50..50)))
                        .map_err(|e| e.to_string())?;
                }
            }
        }
        // Occasionally add an unrelated block.
        if rng.gen_bool(0.4) {
            let (next, b) = mem.alloc(0, 8).map_err(|e| e.to_string())?;
            mem = next.store(b, 0, Value::int(rng.gen_range(-9..10))).map_err(|e| e.to_string())?;
        }
        let args: Vec<Value> = t
            .args
            .iter()
            .map(|a| match a {
                Value::Int { .. } => Value::int(rng.gen_range(-40..60)),
                other => *other,
            })
            .collect();
        let q = Query::C(CQuery { vf: t.vf, sg: t.sg.clone(), args, mem });
        items.push(identity_item(atoms, se, &q)?);
    }
    Ok(SimPlan { items, stutter: 64, fuel })
}

/// Relates literally equal states; worlds are identity-shaped. Sound for
/// self-simulation because deterministic semantics answer equal queries
/// with equal runs.
pub struct IdentityMatcher {
    se: SymbolTable,
    out_atoms: Vec<ConvAtom>,
    in_atoms: Vec<ConvAtom>,
}

impl IdentityMatcher {
    pub fn new(se: &SymbolTable, in_atoms: &[ConvAtom], out_atoms: &[ConvAtom]) -> IdentityMatcher {
        IdentityMatcher {
            se: se.clone(),
            out_atoms: out_atoms.to_vec(),
            in_atoms: in_atoms.to_vec(),
        }
    }
}

impl PassMatcher for IdentityMatcher {
    fn init(
        &mut self,
        inst: &ChainInstance,
        _s1: &LtsState,
        _s2: &LtsState,
    ) -> Result<(), String> {
        if inst.source_query() != inst.target_query() {
            return Err("identity matcher needs equal endpoint queries".to_string());
        }
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        if s1 == s2 {
            Ok(())
        } else {
            Err("states differ".to_string())
        }
    }

    fn outgoing(
        &mut self,
        _s1: &LtsState,
        _s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        if q1 != q2 {
            return Err("outgoing queries differ".to_string());
        }
        identity_item(&self.out_atoms, &self.se, q1)
    }

    fn after_external(
        &mut self,
        _evolved: &[InjpWorld],
        _replies: &[crate::sem::Reply],
        _s1: &LtsState,
        _s2: &LtsState,
    ) -> Result<(), String> {
        Ok(())
    }

    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String> {
        if r1 != r2 {
            return Err("final replies differ".to_string());
        }
        let m = r1.mem().clone();
        let identity = || InjpWorld::new(Meminj::identity_on(&m), m.clone(), m.clone());
        let witnesses = self
            .in_atoms
            .iter()
            .map(|a| match a {
                ConvAtom::Kmr(..) => ReplyWitness::Kmr(identity()),
                ConvAtom::CAinjp => ReplyWitness::CAinjp(identity()),
                _ => ReplyWitness::Trivial,
            })
            .collect();
        Ok((witnesses, vec![r1.clone(); self.in_atoms.len() + 1]))
    }
}
