//! The three-pass pipeline: local promotion, constant propagation and
//! stack lowering, with per-pass simulation conventions and matchers, plus
//! vertical pairing of adjacent pass checks and the derivation that
//! rewrites the composed conventions into the direct one.

pub mod constprop;
pub mod matchers;
pub mod promote;
pub mod stacking;

use crate::conv::laws::{derive_rewrite, pipeline_script, pipeline_start, Derivation, DeriveError};
use crate::conv::simcheck::{PassMatcher, SimPlan};
use crate::conv::{scc, ChainInstance, ConvAtom, ConvExpr, ConvWorld, Level, ReplyWitness};
use crate::gen::rng_for;
use crate::inject::Meminj;
use crate::kmr::{InjpWorld, KmrTag};
use crate::lang::minic::MiniCModule;
use crate::lang::miniasm::MiniAsmModule;
use crate::mem::Value;
use crate::sem::{
    AQuery, CQuery, LtsState, Mode, OpenLts, Query, Reg, RegSet, Reply, Signature, SymbolTable,
};
use rand::Rng;
use stacking::{CodegenMap, CompileError};

pub use constprop::{analyze, const_prop, Fact, ValueAnalysis};
pub use promote::local_promotion;
pub use stacking::stacking_codegen;

/// Everything the pipeline produces for one module.
#[derive(Clone)]
pub struct Pipeline {
    pub source: MiniCModule,
    pub promoted: MiniCModule,
    pub optimized: MiniCModule,
    pub asm: MiniAsmModule,
    pub codegen: CodegenMap,
    pub analysis: ValueAnalysis,
    /// The direct convention the derivation ends in.
    pub convention: ConvExpr,
    pub derivation: Derivation,
}

pub fn pipeline_compile(se: &SymbolTable, m: &MiniCModule) -> Result<Pipeline, CompileError> {
    let promoted = local_promotion(m);
    let (optimized, analysis) = const_prop(se, &promoted);
    let (asm, codegen) = stacking_codegen(se, &optimized)?;
    let derivation = derive_rewrite(&pipeline_start(), &pipeline_script())
        .map_err(|e: DeriveError| CompileError(e.to_string()))?;
    Ok(Pipeline {
        source: m.clone(),
        promoted,
        optimized,
        asm,
        codegen,
        analysis,
        convention: scc(),
        derivation,
    })
}

/// Conventions of the three passes.
pub fn promotion_atoms() -> Vec<ConvAtom> {
    vec![ConvAtom::Kmr(Level::C, KmrTag::Injp)]
}

pub fn constprop_atoms() -> Vec<ConvAtom> {
    vec![ConvAtom::Ro, ConvAtom::Kmr(Level::C, KmrTag::Injp)]
}

pub fn stacking_atoms() -> Vec<ConvAtom> {
    vec![ConvAtom::CAinjp]
}

// ---------------------------------------------------------------------
// Plan construction for the pass checks.
// ---------------------------------------------------------------------

/// Randomize the writable globals and integer arguments of a base query.
fn perturbed_c_query(
    se: &SymbolTable,
    vf: Value,
    sg: &Signature,
    args: &[Value],
    seed: u64,
    i: u64,
) -> CQuery {
    let mut rng = rng_for(seed, i);
    let mut mem = se.initial_memory();
    for (_, info) in se.iter() {
        if info.kind != crate::sem::SymKind::Var || info.read_only {
            continue;
        }
        for (k, _) in info.init.iter().enumerate() {
            if rng.gen_bool(0.3) {
                mem = mem
                    .store(info.block, 8 * k as i64, Value::int(rng.gen_range(-50..50)))
                    .expect("writable global");
            }
        }
    }
    let args: Vec<Value> = args
        .iter()
        .map(|a| match a {
            Value::Int { .. } => Value::int(rng.gen_range(-40..60)),
            other => *other,
        })
        .collect();
    CQuery { vf, sg: sg.clone(), args, mem }
}

/// A plan item for a C-to-C pass: the target query mirrors the source one
/// and the target memory carries extra private blocks.
pub fn c_pass_item(
    atoms: &[ConvAtom],
    se: &SymbolTable,
    q: &CQuery,
    junk: usize,
) -> Result<ChainInstance, String> {
    let mut m2 = q.mem.clone();
    for k in 0..junk {
        let (next, b) = m2.alloc(0, 4).map_err(|e| e.to_string())?;
        m2 = next.store(b, 0, Value::int(90 + k as i64)).map_err(|e| e.to_string())?;
    }
    let j = Meminj::identity_on(&q.mem);
    let q2 = CQuery { vf: q.vf, sg: q.sg.clone(), args: q.args.clone(), mem: m2.clone() };
    let world = InjpWorld::new(j, q.mem.clone(), m2);
    let worlds = atoms
        .iter()
        .map(|a| match a {
            ConvAtom::Ro => Ok(ConvWorld::Ro { se: se.clone(), mem: q.mem.clone() }),
            ConvAtom::Wt => Ok(ConvWorld::Wt(q.sg.clone())),
            ConvAtom::Kmr(Level::C, tag) => Ok(ConvWorld::Kmr(*tag, world.clone())),
            other => Err(format!("unsupported atom {other} in a C pass plan")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    // Invariant atoms relate the source query to itself; the bridging atom
    // maps to the junk-extended target query.
    let queries = crate::conv::synthesize_query_chain(
        atoms,
        &Query::C(q.clone()),
        &Query::C(q2),
    )?;
    Ok(ChainInstance { atoms: atoms.to_vec(), worlds, queries })
}

/// A plan item for the lowering pass: the machine query carries a private
/// caller frame with the extra arguments in the outgoing area.
pub fn stacking_item(
    se: &SymbolTable,
    q: &CQuery,
    in_atoms: &[ConvAtom],
) -> Result<ChainInstance, String> {
    let (mut m2, caller) = q.mem.alloc(0, 64).map_err(|e| e.to_string())?;
    let mut rs = RegSet::new();
    rs.set(Reg::Rsp, Value::ptr(caller, 0));
    rs.set(Reg::Ra, Value::ptr(caller, 4096));
    rs.set(Reg::Pc, q.vf);
    for (k, a) in q.args.iter().enumerate() {
        match k {
            0 => rs.set(Reg::Rdi, *a),
            1 => rs.set(Reg::Rsi, *a),
            _ => {
                m2 = m2
                    .store(caller, 16 + 8 * (k as i64 - 2), *a)
                    .map_err(|e| e.to_string())?;
            }
        }
    }
    rs.set(Reg::Rbx, Value::int(1234567));
    let j = Meminj::identity_on(&q.mem);
    let world = InjpWorld::new(j, q.mem.clone(), m2.clone());
    let qa = AQuery { rs: rs.clone(), mem: m2 };
    let worlds = in_atoms
        .iter()
        .map(|a| match a {
            ConvAtom::Ro => Ok(ConvWorld::Ro { se: se.clone(), mem: q.mem.clone() }),
            ConvAtom::Wt => Ok(ConvWorld::Wt(q.sg.clone())),
            ConvAtom::CAinjp => Ok(ConvWorld::CAinjp {
                w: world.clone(),
                sg: q.sg.clone(),
                rs: rs.clone(),
            }),
            other => Err(format!("unsupported atom {other} in a lowering plan")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let queries = crate::conv::synthesize_query_chain(
        in_atoms,
        &Query::C(q.clone()),
        &Query::Asm(qa),
    )?;
    Ok(ChainInstance { atoms: in_atoms.to_vec(), worlds, queries })
}

/// Templates: one query per defined function with small integer arguments
/// and function pointers for pointer parameters.
pub fn module_query_templates(se: &SymbolTable, m: &MiniCModule) -> Vec<(Value, Signature, Vec<Value>)> {
    m.funcs
        .iter()
        .filter_map(|f| {
            let vf = Value::ptr(se.block_of(&f.name)?, 0);
            let args = f
                .params
                .iter()
                .map(|(_, k)| match k {
                    crate::sem::ValKind::Int => Some(Value::int(7)),
                    crate::sem::ValKind::Ptr => {
                        // Point at a writable global cell, or the first
                        // other function.
                        se.iter()
                            .find(|(_, i)| {
                                i.kind == crate::sem::SymKind::Var && !i.read_only
                            })
                            .map(|(_, i)| Value::ptr(i.block, 0))
                            .or_else(|| {
                                m.funcs
                                    .iter()
                                    .find(|g| g.name != f.name)
                                    .and_then(|g| se.block_of(&g.name))
                                    .map(|b| Value::ptr(b, 0))
                            })
                    }
                })
                .collect::<Option<Vec<_>>>()?;
            Some((vf, f.sig(), args))
        })
        .collect()
}

/// 100-item randomized plan for one pass over a module's entry points.
pub fn pass_plan(
    atoms: &[ConvAtom],
    se: &SymbolTable,
    m: &MiniCModule,
    count: usize,
    seed: u64,
    to_item: impl Fn(&CQuery) -> Result<ChainInstance, String>,
) -> Result<SimPlan, String> {
    let templates = module_query_templates(se, m);
    if templates.is_empty() {
        return Err("module defines no checkable entry points".to_string());
    }
    let mut items = Vec::new();
    for i in 0..count {
        let (vf, sg, args) = &templates[i % templates.len()];
        let q = perturbed_c_query(se, *vf, sg, args, seed, i as u64);
        items.push(to_item(&q)?);
    }
    let _ = atoms;
    Ok(SimPlan { items, stutter: 256, fuel: 100_000 })
}

// ---------------------------------------------------------------------
// Vertical pairing.
// ---------------------------------------------------------------------

/// Composes two pass matchers through the middle semantics: the middle
/// runs in lockstep with the source, queries and replies at the junction
/// come from its actual boundary events.
pub struct PairedMatcher {
    pub mid: Box<dyn OpenLts>,
    pub left: Box<dyn PassMatcher>,
    pub right: Box<dyn PassMatcher>,
    pub left_atoms: usize,
    pub stutter: usize,
    mid_state: Option<LtsState>,
    left_bridges: usize,
}

impl PairedMatcher {
    pub fn new(
        mid: Box<dyn OpenLts>,
        left: Box<dyn PassMatcher>,
        right: Box<dyn PassMatcher>,
        left_atoms: usize,
    ) -> PairedMatcher {
        PairedMatcher {
            mid,
            left,
            right,
            left_atoms,
            stutter: 512,
            mid_state: None,
            left_bridges: 0,
        }
    }

    fn split(&self, inst: &ChainInstance) -> (ChainInstance, ChainInstance) {
        let k = self.left_atoms;
        let left = ChainInstance {
            atoms: inst.atoms[..k].to_vec(),
            worlds: inst.worlds[..k].to_vec(),
            queries: inst.queries[..=k].to_vec(),
        };
        let right = ChainInstance {
            atoms: inst.atoms[k..].to_vec(),
            worlds: inst.worlds[k..].to_vec(),
            queries: inst.queries[k..].to_vec(),
        };
        (left, right)
    }

}

impl PassMatcher for PairedMatcher {
    fn init(&mut self, inst: &ChainInstance, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let (li, ri) = self.split(inst);
        self.left_bridges = li
            .atoms
            .iter()
            .filter(|a| matches!(a, ConvAtom::Kmr(..) | ConvAtom::CAinjp))
            .count();
        let q_mid = li.queries.last().unwrap().clone();
        let mid_state = self.mid.init(&q_mid).map_err(|e| format!("middle init: {e}"))?;
        self.left.init(&li, s1, &mid_state)?;
        self.right.init(&ri, &mid_state, s2)?;
        self.mid_state = Some(mid_state);
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let mut mid = self.mid_state.clone().ok_or("matcher not initialized")?;
        let mut last = String::new();
        for _ in 0..=self.stutter {
            match self.left.related(s1, &mid) {
                Ok(()) => {
                    self.mid_state = Some(mid.clone());
                    return self.right.related(&mid, s2);
                }
                Err(e) => last = e,
            }
            match self.mid.mode(&mid) {
                Mode::Step => {
                    mid = self.mid.step(&mid).map_err(|e| format!("middle stuck: {e}"))?;
                }
                other => {
                    if std::env::var("PAIR_DEBUG").is_ok() {
                        eprintln!("[pair {}] mid boundary {other:?}", self.mid.name());
                    }
                    break;
                }
            }
        }
        Err(format!("middle never aligns with the source: {last}"))
    }

    fn outgoing(
        &mut self,
        s1: &LtsState,
        s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let mut mid = self.mid_state.clone().ok_or("matcher not initialized")?;
        let q_mid = loop {
            match self.mid.mode(&mid) {
                Mode::External(q) => break q,
                Mode::Step => {
                    mid = self.mid.step(&mid).map_err(|e| format!("middle stuck: {e}"))?;
                }
                other => return Err(format!("middle not at an external call: {other:?}")),
            }
        };
        self.mid_state = Some(mid.clone());
        let li = self.left.outgoing(s1, &mid, q1, &q_mid)?;
        let ri = self.right.outgoing(&mid, s2, &q_mid, q2)?;
        let mut atoms = li.atoms;
        atoms.extend(ri.atoms);
        let mut worlds = li.worlds;
        worlds.extend(ri.worlds);
        let mut queries = li.queries;
        queries.extend(ri.queries.into_iter().skip(1));
        Ok(ChainInstance { atoms, worlds, queries })
    }

    fn after_external(
        &mut self,
        evolved: &[InjpWorld],
        replies: &[Reply],
        s1: &LtsState,
        s2: &LtsState,
    ) -> Result<(), String> {
        let mid = self.mid_state.clone().ok_or("matcher not initialized")?;
        let junction = self.left_atoms.min(replies.len().saturating_sub(1));
        let r_mid = &replies[junction];
        let mid = self
            .mid
            .resume(&mid, r_mid)
            .map_err(|e| format!("middle resume: {e}"))?;
        self.mid_state = Some(mid.clone());
        let lb = evolved.len().min(self.left_bridges);
        self.left.after_external(&evolved[..lb], &replies[..=junction], s1, &mid)?;
        self.right.after_external(&evolved[lb..], &replies[junction..], &mid, s2)?;
        Ok(())
    }

    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String> {
        let mut mid = self.mid_state.clone().ok_or("matcher not initialized")?;
        let r_mid = loop {
            match self.mid.mode(&mid) {
                Mode::Final(r) => break r,
                Mode::Step => {
                    mid = self.mid.step(&mid).map_err(|e| format!("middle stuck: {e}"))?;
                }
                other => return Err(format!("middle did not finish: {other:?}")),
            }
        };
        self.mid_state = Some(mid);
        let (wl, rl) = self.left.final_witness(r1, &r_mid)?;
        let (wr, rr) = self.right.final_witness(&r_mid, r2)?;
        let mut witnesses = wl;
        witnesses.extend(wr);
        let mut replies = rl;
        replies.extend(rr.into_iter().skip(1));
        Ok((witnesses, replies))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::minic::parse_module;

    #[test]
    fn pipeline_produces_each_stage() {
        let src = include_str!("../../programs/client.mc");
        let m = parse_module(src).unwrap();
        let se = SymbolTable::build(&m.decls()).unwrap();
        let p = pipeline_compile(&se, &m).unwrap();
        assert_eq!(p.convention, scc());
        assert_eq!(p.derivation.final_chain(), &scc().flatten()[..]);
        // request's parameter is unaddressed: promoted.
        let f = p.promoted.func("request").unwrap();
        assert!(f.locals.is_empty());
        assert_eq!(f.temps, vec!["i".to_string()]);
        assert!(p.asm.func("request").is_some());
        assert!(p.asm.func("process").is_some());
    }

    #[test]
    fn empty_module_compiles_trivially() {
        let m = MiniCModule::default();
        let se = SymbolTable::build(&[]).unwrap();
        let p = pipeline_compile(&se, &m).unwrap();
        assert!(p.asm.funcs.is_empty());
        assert_eq!(p.derivation.final_chain(), &scc().flatten()[..]);
    }
}
