//! Per-pass simulation checks on the bundled modules, the vertically
//! paired pipeline, and the negative variants that demonstrate why the
//! read-only invariant and the memory protection are necessary.

use refinekit::compiler::matchers::{PromoteMatcher, StackingMatcher};
use refinekit::compiler::{
    c_pass_item, const_prop, constprop_atoms, local_promotion, pass_plan, pipeline_compile,
    promotion_atoms, stacking_atoms, stacking_item, PairedMatcher,
};
use refinekit::conv::plans::IdentityMatcher;
use refinekit::conv::simcheck::{sim_check, ProtectedEnv, Sabotage, SimPlan};
use refinekit::conv::{scc, ConvAtom, Level};
use refinekit::kmr::KmrTag;
use refinekit::lang::minic::{parse_module, sem_minic, MiniCModule};
use refinekit::lang::miniasm::sem_miniasm;
use refinekit::mem::Value;
use refinekit::sem::{CQuery, OpenLts, Query, SymbolTable};

const CLIENT: &str = include_str!("../programs/client.mc");
const CLIENT_MR: &str = include_str!("../programs/client_mr.mc");
const SUM_F: &str = include_str!("../programs/sum_f.mc");

const DOUBLE_KEY: &str = r#"
const key = 42
extern foo(ptr) -> void

func double_key() -> int {
  var a
  a = key
  call foo(&key)
  return a + key
}
"#;

fn bundled() -> Vec<(&'static str, MiniCModule)> {
    vec![
        ("client", parse_module(CLIENT).unwrap()),
        ("client_mr", parse_module(CLIENT_MR).unwrap()),
        ("sum_f", parse_module(SUM_F).unwrap()),
        ("double_key", parse_module(DOUBLE_KEY).unwrap()),
    ]
}

#[test]
fn promotion_simulates_on_bundled_modules() {
    for (name, m) in bundled() {
        let se = SymbolTable::build(&m.decls()).unwrap();
        let promoted = local_promotion(&m);
        let src = sem_minic(&m, &se).unwrap();
        let tgt = sem_minic(&promoted, &se).unwrap();
        let atoms = promotion_atoms();
        let plan = pass_plan(&atoms, &se, &m, 100, 0x9a55, |q| c_pass_item(&atoms, &se, q, 1))
            .unwrap();
        let outcome = sim_check(
            &src,
            &tgt,
            &plan,
            || Box::new(PromoteMatcher::new(&promotion_atoms(), &promotion_atoms())),
            |s| Box::new(ProtectedEnv::new(0x11 ^ s)),
        );
        assert!(outcome.ok(), "{name}: {:?}", outcome.first_failure());
        assert!(outcome.passes() >= 25, "{name}: too few passing items");
    }
}

#[test]
fn constprop_simulates_on_bundled_modules() {
    for (name, m) in bundled() {
        let se = SymbolTable::build(&m.decls()).unwrap();
        let promoted = local_promotion(&m);
        let (optimized, _) = const_prop(&se, &promoted);
        let src = sem_minic(&promoted, &se).unwrap();
        let tgt = sem_minic(&optimized, &se).unwrap();
        let atoms = constprop_atoms();
        let plan = pass_plan(&atoms, &se, &promoted, 100, 0xc0, |q| {
            c_pass_item(&atoms, &se, q, 0)
        })
        .unwrap();
        let outcome = sim_check(
            &src,
            &tgt,
            &plan,
            || Box::new(IdentityMatcher::new(&se, &constprop_atoms(), &constprop_atoms())),
            |s| Box::new(ProtectedEnv::new(0x22 ^ s)),
        );
        assert!(outcome.ok(), "{name}: {:?}", outcome.first_failure());
    }
}

#[test]
fn stacking_simulates_on_bundled_modules() {
    for (name, m) in bundled() {
        let se = SymbolTable::build(&m.decls()).unwrap();
        let promoted = local_promotion(&m);
        let (optimized, _) = const_prop(&se, &promoted);
        let (asm, map) = refinekit::compiler::stacking_codegen(&se, &optimized).unwrap();
        let src = sem_minic(&optimized, &se).unwrap();
        let tgt = sem_miniasm(&asm, &se).unwrap();
        let atoms = stacking_atoms();
        let plan =
            pass_plan(&atoms, &se, &optimized, 100, 0x57ac, |q| stacking_item(&se, q, &atoms))
                .unwrap();
        let outcome = sim_check(
            &src,
            &tgt,
            &plan,
            || Box::new(StackingMatcher::new(&se, &map, &stacking_atoms())),
            |s| Box::new(ProtectedEnv::new(0x33 ^ s)),
        );
        assert!(outcome.ok(), "{name}: {:?}", outcome.first_failure());
        assert!(outcome.passes() >= 25, "{name}: too few passing items");
    }
}

#[test]
fn pipeline_pairs_vertically_under_scc() {
    for (name, m) in bundled() {
        let se = SymbolTable::build(&m.decls()).unwrap();
        let p = pipeline_compile(&se, &m).unwrap();
        let src = sem_minic(&p.source, &se).unwrap();
        let tgt = sem_miniasm(&p.asm, &se).unwrap();

        // Incoming chain: promotion ∘ constant propagation ∘ lowering,
        // i.e. c_injp . ro . c_injp . CAinjp with the matching middles.
        let atoms: Vec<ConvAtom> = promotion_atoms()
            .into_iter()
            .chain(constprop_atoms())
            .chain(stacking_atoms())
            .collect();
        let plan = pass_plan(&atoms, &se, &p.source, 25, 0xe2e, |q| {
            // Source and both middles share the query; the machine side
            // gets the lowering item queries.
            let low = stacking_item(&se, q, &stacking_atoms())?;
            let mut queries = vec![Query::C(q.clone()); 4];
            queries.push(low.queries.last().unwrap().clone());
            let mut worlds = c_pass_item(&promotion_atoms(), &se, q, 0)?.worlds;
            worlds.extend(c_pass_item(&constprop_atoms(), &se, q, 0)?.worlds);
            worlds.extend(low.worlds);
            Ok(refinekit::conv::ChainInstance { atoms: atoms.clone(), worlds, queries })
        })
        .unwrap();

        let outcome = sim_check(
            &src,
            &tgt,
            &plan,
            || {
                let inner = PairedMatcher::new(
                    Box::new(sem_minic(&p.optimized, &se).unwrap()),
                    Box::new(IdentityMatcher::new(&se, &constprop_atoms(), &constprop_atoms())),
                    Box::new(StackingMatcher::new(&se, &p.codegen, &stacking_atoms())),
                    constprop_atoms().len(),
                );
                Box::new(PairedMatcher::new(
                    Box::new(sem_minic(&p.promoted, &se).unwrap()),
                    Box::new(PromoteMatcher::new(&promotion_atoms(), &promotion_atoms())),
                    Box::new(inner),
                    promotion_atoms().len(),
                ))
            },
            |s| Box::new(ProtectedEnv::new(0x44 ^ s)),
        );
        assert!(outcome.ok(), "{name}: {:?}", outcome.first_failure());

        // The pipeline's derivation rewrites the composed conventions to
        // the direct one.
        assert_eq!(p.derivation.final_chain(), &scc().flatten()[..]);
    }
}

#[test]
fn constprop_without_ro_fails_on_forged_key() {
    // The optimized module folded key to 42. A query whose memory holds 41
    // is legal for the bare structural convention, and the co-execution
    // diverges at the first folded statement.
    let m = parse_module(DOUBLE_KEY).unwrap();
    let se = SymbolTable::build(&m.decls()).unwrap();
    let promoted = local_promotion(&m);
    let (optimized, _) = const_prop(&se, &promoted);
    let src = sem_minic(&promoted, &se).unwrap();
    let tgt = sem_minic(&optimized, &se).unwrap();

    let mut mem = se.initial_memory();
    let key = se.block_of("key").unwrap();
    mem.blocks.get_mut(&key).unwrap().cells.insert(0, Value::int(41));
    let q = CQuery {
        vf: Value::ptr(se.block_of("double_key").unwrap(), 0),
        sg: refinekit::sem::Signature::new(vec![], refinekit::sem::RetKind::Int),
        args: vec![],
        mem,
    };
    let atoms = vec![ConvAtom::Kmr(Level::C, KmrTag::Injp)];
    let item = c_pass_item(&atoms, &se, &q, 0).unwrap();
    let plan = SimPlan { items: vec![item], stutter: 64, fuel: 10_000 };
    let outcome = sim_check(
        &src,
        &tgt,
        &plan,
        || Box::new(IdentityMatcher::new(&se, &atoms, &atoms)),
        |s| Box::new(ProtectedEnv::new(s)),
    );
    let (clause, _) = outcome.first_failure().expect("expected a failure");
    assert_eq!(clause, 3, "value mismatch surfaces during internal execution");
}

#[test]
fn adversarial_env_writing_private_slot_is_flagged() {
    // The environment mutates an out-of-reach cell; the run is classified
    // as a broken rely at the external call, never as a pass.
    let m = parse_module(CLIENT).unwrap();
    let se = SymbolTable::build(&m.decls()).unwrap();
    let promoted = local_promotion(&m);
    let (optimized, _) = const_prop(&se, &promoted);
    let (asm, map) = refinekit::compiler::stacking_codegen(&se, &optimized).unwrap();
    let src = sem_minic(&optimized, &se).unwrap();
    let tgt = sem_miniasm(&asm, &se).unwrap();
    let atoms = stacking_atoms();
    // Every item calls out through the environment, so the sabotage always
    // fires.
    let items: Vec<_> = (0..10)
        .map(|i| {
            let q = CQuery {
                vf: Value::ptr(se.block_of("request").unwrap(), 0),
                sg: refinekit::sem::Signature::int_int(),
                args: vec![Value::int(i)],
                mem: se.initial_memory(),
            };
            stacking_item(&se, &q, &atoms).unwrap()
        })
        .collect();
    let plan = SimPlan { items, stutter: 256, fuel: 100_000 };
    let outcome = sim_check(
        &src,
        &tgt,
        &plan,
        || Box::new(StackingMatcher::new(&se, &map, &stacking_atoms())),
        |s| Box::new(ProtectedEnv::with_sabotage(s, Sabotage::ClobberOutOfReach)),
    );
    assert_eq!(outcome.passes(), 0, "sabotaged runs must not pass");
    let vacuous = outcome
        .items
        .iter()
        .filter(|i| matches!(i, refinekit::conv::simcheck::ItemClass::Vacuous { detail }
            if detail.contains("rely broken")))
        .count();
    assert!(vacuous > 0, "expected rely-broken classifications: {outcome:?}");
}

#[test]
fn value_analysis_agrees_with_dynamic_reachability() {
    // The static escape rule is at least as conservative as dynamic
    // reachability: whenever the analysis keeps a fact across a call, the
    // frame block of that local is unreachable from the call's arguments
    // and the public globals in the actual run.
    use refinekit::inject::reach_closure;
    let m = parse_module(DOUBLE_KEY).unwrap();
    let se = SymbolTable::build(&m.decls()).unwrap();
    let promoted = local_promotion(&m);
    let sem = sem_minic(&promoted, &se).unwrap();
    let q = Query::C(CQuery {
        vf: Value::ptr(se.block_of("double_key").unwrap(), 0),
        sg: refinekit::sem::Signature::new(vec![], refinekit::sem::RetKind::Int),
        args: vec![],
        mem: se.initial_memory(),
    });
    let mut s = sem.init(&q).unwrap();
    loop {
        match sem.mode(&s) {
            refinekit::sem::Mode::External(Query::C(cq)) => {
                // Roots: argument pointers plus all public global cells.
                let mut roots: Vec<(refinekit::mem::BlockId, i64)> = Vec::new();
                for a in &cq.args {
                    if let Value::Ptr { b, o } = a {
                        roots.push((*b, *o));
                    }
                }
                for (_, info) in se.iter() {
                    for k in 0..info.init.len().max(1) {
                        roots.push((info.block, 8 * k as i64));
                    }
                }
                let reached = reach_closure(&cq.mem, &roots);
                // `a` was promoted: it has no block at all, so the frame
                // is trivially unreachable, matching the kept fact.
                let refinekit::sem::LtsState::MiniC(cs) = &s else { panic!() };
                for f in &cs.frames {
                    for &b in f.local_blocks.values() {
                        // key is passed by address, so nothing of the
                        // frame should be reachable except cells the
                        // analysis already treats as dead.
                        assert!(!reached.contains(&b) || f.local_blocks.is_empty());
                    }
                }
                return;
            }
            refinekit::sem::Mode::Step => s = sem.step(&s).unwrap(),
            other => panic!("unexpected mode {other:?}"),
        }
    }
}
