//! Self-simulation and reflexivity checks: every bundled system simulates
//! itself under the identity convention and, for the language modules,
//! under the structural conventions instantiated at identity worlds.

use refinekit::conv::plans::{randomized_identity_plan, CQueryTemplate, IdentityMatcher};
use refinekit::conv::simcheck::{sim_check, ProtectedEnv};
use refinekit::conv::{ConvAtom, Level};
use refinekit::kmr::KmrTag;
use refinekit::lang::{miniasm, minic};
use refinekit::mem::Value;
use refinekit::sem::{OpenLts, Query, Signature, SymDecl, SymbolTable};
use refinekit::specs::ServerSpec;

const CLIENT: &str = include_str!("../programs/client.mc");
const SUM_F: &str = include_str!("../programs/sum_f.mc");
const SERVER: &str = include_str!("../programs/server.ma");

fn run_self_sim(
    lts: &dyn OpenLts,
    se: &SymbolTable,
    atoms: &[ConvAtom],
    templates: &[CQueryTemplate],
) -> refinekit::conv::simcheck::SimOutcome {
    let plan = randomized_identity_plan(
        atoms,
        se,
        templates,
        &se.initial_memory(),
        30,
        0xc0de,
        10_000,
    )
    .unwrap();
    sim_check(
        lts,
        lts,
        &plan,
        || Box::new(IdentityMatcher::new(se, atoms, atoms)),
        |s| Box::new(ProtectedEnv::new(0xabc ^ s)),
    )
}

#[test]
fn client_self_simulates_under_injp_identity_worlds() {
    let client = minic::parse_module(CLIENT).unwrap();
    let se = SymbolTable::build(&client.decls()).unwrap();
    let sem = minic::sem_minic(&client, &se).unwrap();
    let request = Value::ptr(se.block_of("request").unwrap(), 0);
    let templates = [CQueryTemplate {
        vf: request,
        sg: Signature::int_int(),
        args: vec![Value::int(11)],
    }];
    for atoms in [
        vec![ConvAtom::Id(Level::C)],
        vec![ConvAtom::Kmr(Level::C, KmrTag::Injp)],
        vec![ConvAtom::Ro, ConvAtom::Kmr(Level::C, KmrTag::Injp)],
        vec![ConvAtom::Ro, ConvAtom::Wt, ConvAtom::Kmr(Level::C, KmrTag::Injp)],
    ] {
        let outcome = run_self_sim(&sem, &se, &atoms, &templates);
        assert!(
            outcome.ok(),
            "self-simulation failed under {:?}: {:?}",
            atoms,
            outcome.first_failure()
        );
    }
}

#[test]
fn sum_f_self_simulates() {
    let m = minic::parse_module(SUM_F).unwrap();
    let se = SymbolTable::build(&m.decls()).unwrap();
    let sem = minic::sem_minic(&m, &se).unwrap();
    let f = Value::ptr(se.block_of("f").unwrap(), 0);
    let templates =
        [CQueryTemplate { vf: f, sg: Signature::int_int(), args: vec![Value::int(9)] }];
    let atoms = vec![ConvAtom::Ro, ConvAtom::Wt, ConvAtom::Kmr(Level::C, KmrTag::Injp)];
    let outcome = run_self_sim(&sem, &se, &atoms, &templates);
    assert!(outcome.ok(), "{:?}", outcome.first_failure());
}

#[test]
fn server_spec_self_simulates() {
    let mut decls = vec![
        SymDecl::func("encrypt"),
        SymDecl::extern_func("process"),
        SymDecl::var("key", true, vec![Value::int(42)]),
    ];
    decls.push(SymDecl::var("result", false, vec![Value::int(0)]));
    let se = SymbolTable::build(&decls).unwrap();
    let spec = ServerSpec::new(&se);
    let process = Value::ptr(se.block_of("process").unwrap(), 0);
    let templates = [CQueryTemplate {
        vf: Value::ptr(se.block_of("encrypt").unwrap(), 0),
        sg: Signature::int_ptr_void(),
        args: vec![Value::int(11), process],
    }];
    let atoms = vec![ConvAtom::Ro, ConvAtom::Kmr(Level::C, KmrTag::Injp)];
    let outcome = run_self_sim(&spec, &se, &atoms, &templates);
    assert!(outcome.ok(), "{:?}", outcome.first_failure());
}

#[test]
fn asm_server_self_simulates_under_asm_injp() {
    let m = miniasm::parse_module(SERVER).unwrap();
    let mut decls = m.decls();
    decls.push(SymDecl::extern_func("process"));
    let se = SymbolTable::build(&decls).unwrap();
    let sem = miniasm::sem_miniasm(&m, &se).unwrap();

    let mem = se.initial_memory();
    let (mem, caller) = mem.alloc(0, 8).unwrap();
    let rs = refinekit::sem::RegSet::new()
        .with(refinekit::sem::Reg::Pc, Value::ptr(se.block_of("encrypt").unwrap(), 0))
        .with(refinekit::sem::Reg::Rsp, Value::ptr(caller, 0))
        .with(refinekit::sem::Reg::Ra, Value::ptr(se.block_of("process").unwrap(), 7))
        .with(refinekit::sem::Reg::Rdi, Value::int(25))
        .with(refinekit::sem::Reg::Rsi, Value::ptr(se.block_of("process").unwrap(), 0));
    let q = Query::Asm(refinekit::sem::AQuery { rs, mem });
    let atoms = vec![ConvAtom::Kmr(Level::Asm, KmrTag::Injp)];
    let item = refinekit::conv::plans::identity_item(&atoms, &se, &q).unwrap();
    let plan = refinekit::conv::simcheck::SimPlan { items: vec![item], stutter: 64, fuel: 10_000 };
    let outcome = sim_check(
        &sem,
        &sem,
        &plan,
        || Box::new(IdentityMatcher::new(&se, &atoms, &atoms)),
        |s| Box::new(ProtectedEnv::new(77 ^ s)),
    );
    assert!(outcome.ok(), "{:?}", outcome.first_failure());
}

#[test]
fn every_spec_lts_simulates_itself_under_id() {
    use refinekit::conv::plans::identity_item;
    use refinekit::conv::simcheck::SimPlan;
    use refinekit::sem::CQuery;
    use refinekit::specs;

    let decls = vec![
        SymDecl::func("encrypt"),
        SymDecl::func("request"),
        SymDecl::func("process"),
        SymDecl::func("f"),
        SymDecl::func("g"),
        SymDecl::var("key", true, vec![Value::int(42)]),
        SymDecl::var("result", false, vec![Value::int(0)]),
        SymDecl::var("input", false, (0..10).map(Value::int).collect()),
        SymDecl::var("i", false, vec![Value::int(0)]),
        SymDecl::var("s", false, vec![Value::int(0), Value::int(0)]),
        SymDecl::var("memoized", false, vec![Value::int(0); 32]),
    ];
    let se = SymbolTable::build(&decls).unwrap();
    let atoms = vec![ConvAtom::Id(Level::C)];
    let cases: Vec<(&str, CQuery)> = vec![
        (
            "server",
            CQuery {
                vf: Value::ptr(se.block_of("encrypt").unwrap(), 0),
                sg: Signature::int_ptr_void(),
                args: vec![Value::int(9), Value::ptr(se.block_of("process").unwrap(), 0)],
                mem: se.initial_memory(),
            },
        ),
        (
            "client-server",
            CQuery {
                vf: Value::ptr(se.block_of("request").unwrap(), 0),
                sg: Signature::int_int(),
                args: vec![Value::int(9)],
                mem: se.initial_memory(),
            },
        ),
        (
            "sum-asm",
            CQuery {
                vf: Value::ptr(se.block_of("g").unwrap(), 0),
                sg: Signature::int_int(),
                args: vec![Value::int(5)],
                mem: se.initial_memory(),
            },
        ),
        (
            "sum-c",
            CQuery {
                vf: Value::ptr(se.block_of("f").unwrap(), 0),
                sg: Signature::int_int(),
                args: vec![Value::int(5)],
                mem: se.initial_memory(),
            },
        ),
        (
            "sum-top",
            CQuery {
                vf: Value::ptr(se.block_of("f").unwrap(), 0),
                sg: Signature::int_int(),
                args: vec![Value::int(5)],
                mem: se.initial_memory(),
            },
        ),
    ];
    for (name, q) in cases {
        let lts = specs::build_spec(name, &se).unwrap();
        let item = identity_item(&atoms, &se, &refinekit::sem::Query::C(q)).unwrap();
        let plan = SimPlan { items: vec![item], stutter: 64, fuel: 100_000 };
        let outcome = sim_check(
            lts.as_ref(),
            lts.as_ref(),
            &plan,
            || Box::new(IdentityMatcher::new(&se, &atoms, &atoms)),
            |s| Box::new(ProtectedEnv::new(s)),
        );
        assert!(outcome.ok(), "{name}: {:?}", outcome.first_failure());
    }
}
