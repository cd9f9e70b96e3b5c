//! Bundled end-to-end scenarios: the encryption client/server (plain,
//! optimized and multi-request) and the mutually recursive summation pair.
//! Each scenario walks the whole ladder: compile the C half, check the
//! hand-written half against its spec, compose horizontally, tie semantic
//! to syntactic linking by trace comparison, check the source-level
//! refinement, replay the convention absorption, and finish with one
//! direct check of the top spec against the syntactically linked machine
//! module.

pub mod matchers;
pub mod source;

use crate::compiler::matchers::{PromoteMatcher, StackingMatcher};
use crate::compiler::{
    constprop_atoms, pipeline_compile, promotion_atoms, stacking_atoms, PairedMatcher, Pipeline,
};
use crate::conv::laws::{absorb_script, absorb_start, derive_rewrite, Derivation};
use crate::conv::plans::IdentityMatcher;
use crate::conv::simcheck::{sim_check, CoEnv, PassMatcher, ProtectedEnv, SimOutcome, SimPlan};
use crate::conv::{scc, ChainInstance, ConvAtom, ConvWorld, Level};
use crate::gen::rng_for;
use crate::inject::Meminj;
use crate::kmr::{InjpWorld, KmrTag};
use crate::lang::{miniasm, minic};
use crate::mem::Value;
use crate::sem::{
    link_sem, run_trace, trace_equal, AQuery, CQuery, EnvStrategy, IfaceKind, ObservableProjection,
    OpenLts, Query, Reg, RegSet, Reply, RetKind, Signature, SymbolTable, TraceEvent,
};
use crate::specs::{ServerSpec, SumAsmSpec, SumCSpec, SumTopSpec, TopCsSpec, TopMrSpec};
use rand::Rng;
use serde_json::{json, Value as Json};

pub const CLIENT_MC: &str = include_str!("../../programs/client.mc");
pub const CLIENT_MR_MC: &str = include_str!("../../programs/client_mr.mc");
pub const SERVER_MA: &str = include_str!("../../programs/server.ma");
pub const SERVER_OPT_MA: &str = include_str!("../../programs/server_opt.ma");
pub const SUM_F_MC: &str = include_str!("../../programs/sum_f.mc");
pub const SUM_G_MA: &str = include_str!("../../programs/sum_g.ma");

#[derive(Debug, Clone)]
pub struct StepReport {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioReport {
    pub scenario: String,
    pub steps: Vec<StepReport>,
}

impl ScenarioReport {
    pub fn ok(&self) -> bool {
        self.steps.iter().all(|s| s.ok)
    }

    fn push(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.steps.push(StepReport { name: name.to_string(), ok, detail: detail.into() });
    }

    fn push_sim(&mut self, name: &str, outcome: &SimOutcome) {
        let detail = match outcome.first_failure() {
            Some((clause, d)) => format!("clause {clause}: {d}"),
            None => format!("{} runs", outcome.passes()),
        };
        self.push(name, outcome.ok(), detail);
    }

    pub fn to_json(&self) -> Json {
        json!({
            "scenario": self.scenario,
            "ok": self.ok(),
            "steps": self
                .steps
                .iter()
                .map(|s| json!({ "name": s.name, "ok": s.ok, "detail": s.detail }))
                .collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct UnknownScenario(pub String);

impl std::fmt::Display for UnknownScenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown scenario {:?}", self.0)
    }
}

impl std::error::Error for UnknownScenario {}

/// Environment for adequacy runs: answers escaped queries with a seeded
/// integer and mirrors no memory changes, acting identically on both runs.
struct AdequacyEnv {
    seed: u64,
    calls: u64,
}

impl EnvStrategy for AdequacyEnv {
    fn reply(&mut self, q: &Query, _h: &[TraceEvent]) -> Result<Reply, String> {
        let mut rng = rng_for(self.seed, self.calls);
        self.calls += 1;
        let v = Value::int(rng.gen_range(-9..10));
        Ok(match q {
            Query::C(q) => Reply::C(crate::sem::CReply {
                res: if q.sg.ret == RetKind::Void { Value::Undef } else { v },
                mem: q.mem.clone(),
            }),
            Query::Asm(q) => {
                let mut rs = q.rs.clone();
                rs.set(Reg::Pc, q.rs.get(Reg::Ra));
                rs.set(Reg::Rax, v);
                Reply::Asm(crate::sem::AReply { rs, mem: q.mem.clone() })
            }
        })
    }
}

/// Random machine query entering one of the module's functions.
fn random_asm_query(
    se: &SymbolTable,
    funcs: &[&str],
    seed: u64,
    i: u64,
) -> Query {
    let mut rng = rng_for(seed, i);
    let mem = se.initial_memory();
    let (mem, caller) = mem.alloc(0, 32).expect("alloc");
    let f = funcs[rng.gen_range(0..funcs.len())];
    let mut rs = RegSet::new();
    rs.set(Reg::Pc, Value::ptr(se.block_of(f).expect("func"), 0));
    rs.set(Reg::Rsp, Value::ptr(caller, 0));
    rs.set(Reg::Ra, Value::ptr(caller, 4096));
    rs.set(Reg::Rdi, Value::int(rng.gen_range(0..20)));
    rs.set(Reg::Rbx, Value::int(rng.gen_range(-9..10)));
    // A pointer argument when the entry expects one.
    let ptr_target = se
        .iter()
        .find(|(_, info)| info.kind == crate::sem::SymKind::Var && !info.read_only)
        .map(|(_, info)| Value::ptr(info.block, 0))
        .unwrap_or(Value::ptr(caller, 8));
    rs.set(Reg::Rsi, ptr_target);
    if rng.gen_bool(0.5) {
        rs.set(Reg::Rdi, ptr_target);
    }
    Query::Asm(AQuery { rs, mem })
}

/// Semantic linking against syntactic linking: run both composites on
/// randomized queries and environments; traces must agree exactly up to
/// the observable projection.
pub fn adequacy_check(
    a: &miniasm::MiniAsmModule,
    b: &miniasm::MiniAsmModule,
    observables: &[&str],
    runs: usize,
    seed: u64,
) -> Result<(), String> {
    let merged = miniasm::syn_link(a, b).map_err(|e| e.to_string())?;
    let se = SymbolTable::build(&merged.decls()).map_err(|e| e.to_string())?;
    let sem_merged = miniasm::sem_miniasm(&merged, &se).map_err(|e| e.to_string())?;
    let sem_a = miniasm::sem_miniasm(a, &se).map_err(|e| e.to_string())?;
    let sem_b = miniasm::sem_miniasm(b, &se).map_err(|e| e.to_string())?;
    let linked =
        link_sem(Box::new(sem_a), Box::new(sem_b)).map_err(|e| e.to_string())?;
    let funcs: Vec<&str> = a
        .funcs
        .iter()
        .chain(b.funcs.iter())
        .map(|f| f.name.as_str())
        .collect();
    let proj = ObservableProjection::new(&se, observables);
    for i in 0..runs {
        let q = random_asm_query(&se, &funcs, seed, i as u64);
        let fuel = 200_000;
        let r1 = run_trace(&linked, &q, &mut AdequacyEnv { seed: seed ^ 1, calls: 0 }, fuel);
        let r2 = run_trace(&sem_merged, &q, &mut AdequacyEnv { seed: seed ^ 1, calls: 0 }, fuel);
        match (r1, r2) {
            (Ok(t1), Ok(t2)) => {
                if !trace_equal(&t1, &t2, &proj) {
                    return Err(format!("run {i}: traces differ"));
                }
            }
            (Err((e1, t1)), Err((e2, t2))) => {
                if !trace_equal(&t1, &t2, &proj) {
                    return Err(format!("run {i}: partial traces differ ({e1} / {e2})"));
                }
            }
            (Ok(_), Err((e, _))) => {
                return Err(format!("run {i}: semantic linking succeeds, syntactic fails: {e}"))
            }
            (Err((e, _)), Ok(_)) => {
                return Err(format!("run {i}: syntactic linking succeeds, semantic fails: {e}"))
            }
        }
    }
    Ok(())
}

/// One top-level plan item at the direct convention: the machine query
/// mirrors the C query through an identity world with a private caller
/// frame on the machine side.
pub fn scc_item(se: &SymbolTable, q: &CQuery) -> Result<ChainInstance, String> {
    crate::compiler::stacking_item(se, q, &scc().flatten())
}

/// Plan item for a C-to-C spec refinement under `ro . wt . c_injp`.
pub fn source_item(se: &SymbolTable, q: &CQuery) -> Result<ChainInstance, String> {
    let atoms = vec![ConvAtom::Ro, ConvAtom::Wt, ConvAtom::Kmr(Level::C, KmrTag::Injp)];
    let j = Meminj::identity_on(&q.mem);
    let world = InjpWorld::new(j, q.mem.clone(), q.mem.clone());
    let worlds = vec![
        ConvWorld::Ro { se: se.clone(), mem: q.mem.clone() },
        ConvWorld::Wt(q.sg.clone()),
        ConvWorld::Kmr(KmrTag::Injp, world),
    ];
    Ok(ChainInstance {
        atoms: atoms.clone(),
        worlds,
        queries: vec![Query::C(q.clone()); 4],
    })
}

fn source_atoms() -> Vec<ConvAtom> {
    vec![ConvAtom::Ro, ConvAtom::Wt, ConvAtom::Kmr(Level::C, KmrTag::Injp)]
}

fn protected_env(seed: u64) -> Box<dyn CoEnv> {
    Box::new(ProtectedEnv::new(seed))
}

/// Builds the vertically paired pipeline matcher for a compiled module.
pub fn pipeline_matcher(se: &SymbolTable, p: &Pipeline) -> Result<PairedMatcher, String> {
    let promoted = minic::sem_minic(&p.promoted, se).map_err(|e| e.to_string())?;
    let optimized = minic::sem_minic(&p.optimized, se).map_err(|e| e.to_string())?;
    let inner = PairedMatcher::new(
        Box::new(optimized),
        Box::new(IdentityMatcher::new(se, &constprop_atoms(), &constprop_atoms())),
        Box::new(StackingMatcher::new(se, &p.codegen, &stacking_atoms())),
        constprop_atoms().len(),
    );
    Ok(PairedMatcher::new(
        Box::new(promoted),
        Box::new(PromoteMatcher::new(&promotion_atoms(), &promotion_atoms())),
        Box::new(inner),
        promotion_atoms().len(),
    ))
}

/// The composed chain the paired pipeline matcher expects.
pub fn pipeline_atoms() -> Vec<ConvAtom> {
    promotion_atoms()
        .into_iter()
        .chain(constprop_atoms())
        .chain(stacking_atoms())
        .collect()
}

/// Client/server scenario with either server module.
fn run_client_server(optimized_server: bool) -> Result<ScenarioReport, String> {
    let mut report = ScenarioReport {
        scenario: if optimized_server {
            "client-server".to_string()
        } else {
            "client-server-unopt".to_string()
        },
        steps: Vec::new(),
    };
    let client = minic::parse_module(CLIENT_MC).map_err(|e| e.to_string())?;
    let server_src = if optimized_server { SERVER_OPT_MA } else { SERVER_MA };
    let server = miniasm::parse_module(server_src).map_err(|e| e.to_string())?;
    let mut decls = client.decls();
    decls.extend(server.decls());
    let se = SymbolTable::build(&decls).map_err(|e| e.to_string())?;

    // 1. Compile the client through the pipeline.
    let p = pipeline_compile(&se, &client).map_err(|e| e.to_string())?;
    report.push(
        "compile client",
        true,
        format!("derivation ends in {}", crate::conv::scc()),
    );

    // 2. The hand-written server refines its spec at the direct convention.
    let spec = ServerSpec::new(&se);
    let server_sem = miniasm::sem_miniasm(&server, &se).map_err(|e| e.to_string())?;
    let plan = server_plan(&se, 20, 0xca11)?;
    let outcome = sim_check(
        &spec,
        &server_sem,
        &plan,
        || {
            Box::new(matchers::ServerImplMatcher::new(&se, &server, &scc().flatten()))
                as Box<dyn PassMatcher>
        },
        protected_env,
    );
    report.push_sim("server refines its spec", &outcome);

    // 3. Horizontal composition of the two refinements.
    let outcome = horizontal_cs(&se, &p, &client, &server)?;
    report.push_sim("horizontal composition", &outcome);

    // 4. Adequacy: semantic against syntactic linking.
    match adequacy_check(&p.asm, &server, &["result"], 100, 0xade0) {
        Ok(()) => report.push("adequacy", true, "100 randomized runs"),
        Err(e) => report.push("adequacy", false, e),
    }

    // 5. Source-level refinement of the top spec.
    let top = TopCsSpec::new(&se);
    let client_sem = minic::sem_minic(&client, &se).map_err(|e| e.to_string())?;
    let linked_src = link_sem(
        Box::new(client_sem),
        Box::new(ServerSpec::new(&se)),
    )
    .map_err(|e| e.to_string())?;
    let plan = top_cs_plan(&se, 20, 0x50fa, IfaceKind::C)?;
    let outcome = sim_check(
        &top,
        &linked_src,
        &plan,
        || Box::new(source::source_cs_matcher(&se, &source_atoms())) as Box<dyn PassMatcher>,
        protected_env,
    );
    report.push_sim("top spec refines the linked source", &outcome);

    // 6. Absorb the source-level refinement into the direct convention.
    let d = derive_rewrite(&absorb_start(), &absorb_script()).map_err(|e| e.to_string())?;
    let absorbed = d.final_chain() == &scc().flatten()[..];
    report.push(
        "convention absorption",
        absorbed,
        format!("{} stages", d.stages()),
    );

    // 7. End to end: top spec against the syntactically linked machine
    // module, plus the expected observables.
    let merged = miniasm::syn_link(&p.asm, &server).map_err(|e| e.to_string())?;
    let merged_sem = miniasm::sem_miniasm(&merged, &se).map_err(|e| e.to_string())?;
    let plan = top_cs_plan(&se, 20, 0xe2ee, IfaceKind::Asm)?;
    let outcome = sim_check(
        &TopCsSpec::new(&se),
        &merged_sem,
        &plan,
        || {
            Box::new(matchers::TopSpecMatcher::new(&se, &scc().flatten()))
                as Box<dyn PassMatcher>
        },
        protected_env,
    );
    report.push_sim("top spec refines the linked machine module", &outcome);

    // Observable: request(11) replies 11 and stores 33.
    match observe_request(&se, &merged_sem, 11) {
        Ok((reply, result)) if reply == Value::int(11) && result == Value::int(33) => {
            report.push("request(11) = 11 with result 33", true, "exact");
        }
        Ok((reply, result)) => report.push(
            "request(11) = 11 with result 33",
            false,
            format!("reply {reply}, result {result}"),
        ),
        Err(e) => report.push("request(11) = 11 with result 33", false, e),
    }

    Ok(report)
}

fn observe_request(
    se: &SymbolTable,
    merged: &dyn OpenLts,
    i: i64,
) -> Result<(Value, Value), String> {
    let mem = se.initial_memory();
    let (mem, caller) = mem.alloc(0, 32).map_err(|e| e.to_string())?;
    let rs = RegSet::new()
        .with(Reg::Pc, Value::ptr(se.block_of("request").ok_or("no request")?, 0))
        .with(Reg::Rsp, Value::ptr(caller, 0))
        .with(Reg::Ra, Value::ptr(caller, 4096))
        .with(Reg::Rdi, Value::int(i));
    let q = Query::Asm(AQuery { rs, mem });
    let mut env = AdequacyEnv { seed: 1, calls: 0 };
    let Query::Asm(ref q0) = q else { unreachable!() };
    let (rsp0, rbx0) = (q0.rs.get(Reg::Rsp), q0.rs.get(Reg::Rbx));
    let trace = run_trace(merged, &q, &mut env, 100_000).map_err(|(e, _)| e.to_string())?;
    let Some(Reply::Asm(r)) = trace.final_reply() else {
        return Err("no machine reply".to_string());
    };
    if r.rs.get(Reg::Rsp) != rsp0 || r.rs.get(Reg::Rbx) != rbx0 {
        return Err("callee-save discipline broken across the run".to_string());
    }
    let result_block = se.block_of("result").ok_or("no result symbol")?;
    Ok((r.rs.get(Reg::Rax), r.mem.value_at(result_block, 0)))
}

/// Plan of spec queries for the server refinement.
fn server_plan(se: &SymbolTable, count: usize, seed: u64) -> Result<SimPlan, String> {
    let mut items = Vec::new();
    for i in 0..count {
        let mut rng = rng_for(seed, i as u64);
        let q = CQuery {
            vf: Value::ptr(se.block_of("encrypt").ok_or("no encrypt")?, 0),
            sg: Signature::int_ptr_void(),
            args: vec![
                Value::int(rng.gen_range(0..100)),
                Value::ptr(se.block_of("process").ok_or("no process")?, 0),
            ],
            mem: se.initial_memory(),
        };
        items.push(scc_item(se, &q)?);
    }
    Ok(SimPlan { items, stutter: 512, fuel: 100_000 })
}

/// Plan of top-level queries, at the C or machine interface.
fn top_cs_plan(
    se: &SymbolTable,
    count: usize,
    seed: u64,
    iface: IfaceKind,
) -> Result<SimPlan, String> {
    let mut items = Vec::new();
    for i in 0..count {
        let mut rng = rng_for(seed, i as u64);
        let q = CQuery {
            vf: Value::ptr(se.block_of("request").ok_or("no request")?, 0),
            sg: Signature::int_int(),
            args: vec![Value::int(rng.gen_range(0..100))],
            mem: se.initial_memory(),
        };
        items.push(match iface {
            IfaceKind::Asm => scc_item(se, &q)?,
            IfaceKind::C => source_item(se, &q)?,
        });
    }
    Ok(SimPlan { items, stutter: 4096, fuel: 1_000_000 })
}

/// Horizontal composition for the client/server pair: the compiled client
/// paired with the specified server, against the semantically linked machine
/// modules, all under the direct convention.
fn horizontal_cs(
    se: &SymbolTable,
    p: &Pipeline,
    client: &minic::MiniCModule,
    server: &miniasm::MiniAsmModule,
) -> Result<SimOutcome, String> {
    let client_src = minic::sem_minic(&p.source, se).map_err(|e| e.to_string())?;
    let client_asm = miniasm::sem_miniasm(&p.asm, se).map_err(|e| e.to_string())?;
    let server_sem = miniasm::sem_miniasm(server, se).map_err(|e| e.to_string())?;
    let _ = client;

    let src = link_sem(
        Box::new(client_src),
        Box::new(ServerSpec::new(se)),
    )
    .map_err(|e| e.to_string())?;
    let tgt =
        link_sem(Box::new(client_asm), Box::new(server_sem)).map_err(|e| e.to_string())?;

    let plan = {
        let mut items = Vec::new();
        for i in 0..10u64 {
            let mut rng = rng_for(0x402, i);
            let q = CQuery {
                vf: Value::ptr(se.block_of("request").ok_or("no request")?, 0),
                sg: Signature::int_int(),
                args: vec![Value::int(rng.gen_range(0..100))],
                mem: se.initial_memory(),
            };
            items.push(scc_item(se, &q)?);
        }
        SimPlan { items, stutter: 2048, fuel: 1_000_000 }
    };

    Ok(sim_check(
        &src,
        &tgt,
        &plan,
        || {
            let se_l = se.clone();
            let se_r = se.clone();
            let server = server.clone();
            let p2 = p.clone();
            Box::new(source::HorizontalMatcher::new(
                Box::new(move || {
                    Box::new(source::DirectPipelineMatcher::new(
                        Box::new(pipeline_matcher(&se_l, &p2).expect("pipeline matcher")),
                        &se_l,
                        pipeline_atoms(),
                        scc().flatten(),
                    )) as Box<dyn PassMatcher>
                }),
                Box::new(move || {
                    Box::new(matchers::ServerImplMatcher::new(
                        &se_r,
                        &server,
                        &scc().flatten(),
                    )) as Box<dyn PassMatcher>
                }),
            )) as Box<dyn PassMatcher>
        },
        protected_env,
    ))
}

/// Multi-request scenario.
fn run_client_server_mr() -> Result<ScenarioReport, String> {
    let mut report =
        ScenarioReport { scenario: "client-server-mr".to_string(), steps: Vec::new() };
    let client = minic::parse_module(CLIENT_MR_MC).map_err(|e| e.to_string())?;
    let server = miniasm::parse_module(SERVER_OPT_MA).map_err(|e| e.to_string())?;
    let mut decls = client.decls();
    decls.extend(server.decls());
    let se = SymbolTable::build(&decls).map_err(|e| e.to_string())?;

    let p = pipeline_compile(&se, &client).map_err(|e| e.to_string())?;
    report.push("compile client", true, "three passes");

    match adequacy_check(&p.asm, &server, &["result", "i"], 100, 0xadee) {
        Ok(()) => report.push("adequacy", true, "100 randomized runs"),
        Err(e) => report.push("adequacy", false, e),
    }

    let merged = miniasm::syn_link(&p.asm, &server).map_err(|e| e.to_string())?;
    let merged_sem = miniasm::sem_miniasm(&merged, &se).map_err(|e| e.to_string())?;

    // End-to-end simulation of the multi-request spec.
    let spec = TopMrSpec::new(&se, 10);
    let plan = {
        let mut items = Vec::new();
        for i in 0..5u64 {
            let mut rng = rng_for(0x3712, i);
            let mem = se.initial_memory();
            let (mem, rb) = mem.alloc(0, 8).map_err(|e| e.to_string())?;
            let mem =
                mem.store(rb, 0, Value::int(rng.gen_range(-9..10))).map_err(|e| e.to_string())?;
            let q = CQuery {
                vf: Value::ptr(se.block_of("request").ok_or("no request")?, 0),
                sg: Signature::ptr_void(),
                args: vec![Value::ptr(rb, 0)],
                mem,
            };
            items.push(scc_item(&se, &q)?);
        }
        SimPlan { items, stutter: 16384, fuel: 4_000_000 }
    };
    let outcome = sim_check(
        &spec,
        &merged_sem,
        &plan,
        || {
            Box::new(matchers::TopSpecMatcher::new(&se, &scc().flatten()))
                as Box<dyn PassMatcher>
        },
        protected_env,
    );
    report.push_sim("top spec refines the linked machine module", &outcome);

    // Observables: result[k] = input[k] XOR 42.
    match observe_mr(&se, &merged_sem) {
        Ok(()) => report.push("result[k] = input[k] XOR 42", true, "exact"),
        Err(e) => report.push("result[k] = input[k] XOR 42", false, e),
    }
    Ok(report)
}

fn observe_mr(se: &SymbolTable, merged: &dyn OpenLts) -> Result<(), String> {
    let mem = se.initial_memory();
    let (mem, caller) = mem.alloc(0, 32).map_err(|e| e.to_string())?;
    let (mem, rb) = mem.alloc(0, 8).map_err(|e| e.to_string())?;
    let rs = RegSet::new()
        .with(Reg::Pc, Value::ptr(se.block_of("request").ok_or("no request")?, 0))
        .with(Reg::Rsp, Value::ptr(caller, 0))
        .with(Reg::Ra, Value::ptr(caller, 4096))
        .with(Reg::Rdi, Value::ptr(rb, 0));
    let q = Query::Asm(AQuery { rs, mem });
    let mut env = AdequacyEnv { seed: 5, calls: 0 };
    let trace = run_trace(merged, &q, &mut env, 2_000_000).map_err(|(e, _)| e.to_string())?;
    let Some(Reply::Asm(r)) = trace.final_reply() else {
        return Err("no machine reply".to_string());
    };
    let input = se.lookup("input").ok_or("no input symbol")?;
    let result = se.lookup("result").ok_or("no result symbol")?;
    for k in 0..10 {
        let inp = input.init[k].as_int().ok_or("input cell not an integer")?;
        let got = r.mem.value_at(result.block, 8 * k as i64);
        if got != Value::int(inp ^ 42) {
            return Err(format!("result[{k}] = {got}, expected {}", inp ^ 42));
        }
    }
    Ok(())
}

/// Mutual summation scenario.
fn run_mutual_sum() -> Result<ScenarioReport, String> {
    let mut report = ScenarioReport { scenario: "mutual-sum".to_string(), steps: Vec::new() };
    let f_mod = minic::parse_module(SUM_F_MC).map_err(|e| e.to_string())?;
    let g_mod = miniasm::parse_module(SUM_G_MA).map_err(|e| e.to_string())?;
    let mut decls = f_mod.decls();
    decls.extend(g_mod.decls());
    let se = SymbolTable::build(&decls).map_err(|e| e.to_string())?;

    let p = pipeline_compile(&se, &f_mod).map_err(|e| e.to_string())?;
    report.push("compile the C half", true, "three passes");

    // The machine half refines its spec.
    let g_sem = miniasm::sem_miniasm(&g_mod, &se).map_err(|e| e.to_string())?;
    let plan = {
        let mut items = Vec::new();
        for i in 0..20u64 {
            let mut rng = rng_for(0x6u64, i);
            let mut mem = se.initial_memory();
            // Sometimes pre-warm the cache.
            if rng.gen_bool(0.4) {
                let s = se.block_of("s").ok_or("no s")?;
                let i0 = rng.gen_range(1..6);
                mem = mem
                    .store(s, 0, Value::int(i0))
                    .and_then(|m| m.store(s, 8, Value::int(i0 * (i0 + 1) / 2)))
                    .map_err(|e| e.to_string())?;
            }
            let q = CQuery {
                vf: Value::ptr(se.block_of("g").ok_or("no g")?, 0),
                sg: Signature::int_int(),
                args: vec![Value::int(rng.gen_range(0..8))],
                mem,
            };
            items.push(scc_item(&se, &q)?);
        }
        SimPlan { items, stutter: 512, fuel: 100_000 }
    };
    let spec = SumAsmSpec::new(&se);
    let outcome = sim_check(
        &spec,
        &g_sem,
        &plan,
        || {
            Box::new(matchers::SumAsmImplMatcher::new(&se, &g_mod, &scc().flatten()))
                as Box<dyn PassMatcher>
        },
        protected_env,
    );
    report.push_sim("machine half refines its spec", &outcome);

    // The C half refines its spec at the C level.
    let f_sem = minic::sem_minic(&f_mod, &se).map_err(|e| e.to_string())?;
    let plan = {
        let mut items = Vec::new();
        for i in 0..20u64 {
            let mut rng = rng_for(0x7u64, i);
            let q = CQuery {
                vf: Value::ptr(se.block_of("f").ok_or("no f")?, 0),
                sg: Signature::int_int(),
                args: vec![Value::int(rng.gen_range(0..8))],
                mem: se.initial_memory(),
            };
            items.push(source_item(&se, &q)?);
        }
        SimPlan { items, stutter: 512, fuel: 100_000 }
    };
    let outcome = sim_check(
        &SumCSpec::new(&se),
        &f_sem,
        &plan,
        || Box::new(source::sum_c_matcher(&se, &source_atoms())) as Box<dyn PassMatcher>,
        protected_env,
    );
    report.push_sim("C half refines its spec", &outcome);

    // The top spec refines the linked pair of specs.
    let linked_specs = link_sem(
        Box::new(SumCSpec::new(&se)),
        Box::new(SumAsmSpec::new(&se)),
    )
    .map_err(|e| e.to_string())?;
    let plan = {
        let mut items = Vec::new();
        for i in 0..10u64 {
            let mut rng = rng_for(0x8u64, i);
            let name = if rng.gen_bool(0.5) { "f" } else { "g" };
            let q = CQuery {
                vf: Value::ptr(se.block_of(name).ok_or("no entry")?, 0),
                sg: Signature::int_int(),
                args: vec![Value::int(rng.gen_range(0..15))],
                mem: se.initial_memory(),
            };
            items.push(source_item(&se, &q)?);
        }
        SimPlan { items, stutter: 2048, fuel: 1_000_000 }
    };
    let outcome = sim_check(
        &SumTopSpec::new(&se),
        &linked_specs,
        &plan,
        || Box::new(source::sum_source_top_matcher(&se, &source_atoms())) as Box<dyn PassMatcher>,
        protected_env,
    );
    report.push_sim("top spec refines the linked specs", &outcome);

    // Adequacy of the machine pair.
    match adequacy_check(&p.asm, &g_mod, &["memoized", "s"], 100, 0x5d) {
        Ok(()) => report.push("adequacy", true, "100 randomized runs"),
        Err(e) => report.push("adequacy", false, e),
    }

    // End to end at the direct convention.
    let merged = miniasm::syn_link(&p.asm, &g_mod).map_err(|e| e.to_string())?;
    let merged_sem = miniasm::sem_miniasm(&merged, &se).map_err(|e| e.to_string())?;
    let plan = {
        let mut items = Vec::new();
        for i in 0..8u64 {
            let mut rng = rng_for(0x9u64, i);
            let name = if rng.gen_bool(0.5) { "f" } else { "g" };
            let q = CQuery {
                vf: Value::ptr(se.block_of(name).ok_or("no entry")?, 0),
                sg: Signature::int_int(),
                args: vec![Value::int(rng.gen_range(0..12))],
                mem: se.initial_memory(),
            };
            items.push(scc_item(&se, &q)?);
        }
        SimPlan { items, stutter: 32768, fuel: 4_000_000 }
    };
    let outcome = sim_check(
        &SumTopSpec::new(&se),
        &merged_sem,
        &plan,
        || {
            Box::new(matchers::TopSpecMatcher::new(&se, &scc().flatten()))
                as Box<dyn PassMatcher>
        },
        protected_env,
    );
    report.push_sim("top spec refines the linked machine module", &outcome);

    // Observables: f(i) = i(i+1)/2 for i up to 20, and a repeated query is
    // answered without calling out.
    match observe_sum(&se, &merged_sem) {
        Ok(()) => report.push("f(i) = i(i+1)/2 with caching", true, "exact for i <= 20"),
        Err(e) => report.push("f(i) = i(i+1)/2 with caching", false, e),
    }
    Ok(report)
}

fn observe_sum(se: &SymbolTable, merged: &dyn OpenLts) -> Result<(), String> {
    let mut mem = se.initial_memory();
    for i in 0..=20i64 {
        let (m2, caller) = mem.alloc(0, 32).map_err(|e| e.to_string())?;
        let rs = RegSet::new()
            .with(Reg::Pc, Value::ptr(se.block_of("f").ok_or("no f")?, 0))
            .with(Reg::Rsp, Value::ptr(caller, 0))
            .with(Reg::Ra, Value::ptr(caller, 4096))
            .with(Reg::Rdi, Value::int(i));
        let q = Query::Asm(AQuery { rs: rs.clone(), mem: m2 });
        let mut env = AdequacyEnv { seed: 9, calls: 0 };
        let trace =
            run_trace(merged, &q, &mut env, 4_000_000).map_err(|(e, _)| e.to_string())?;
        let Some(Reply::Asm(r)) = trace.final_reply() else {
            return Err("no machine reply".to_string());
        };
        if r.rs.get(Reg::Rax) != Value::int(i * (i + 1) / 2) {
            return Err(format!("f({i}) = {}", r.rs.get(Reg::Rax)));
        }
        if r.rs.get(Reg::Rsp) != rs.get(Reg::Rsp) || r.rs.get(Reg::Rbx) != rs.get(Reg::Rbx) {
            return Err("callee-save discipline broken across the run".to_string());
        }
        if trace.outgoing_queries().count() != 0 {
            return Err("the closed pair called out".to_string());
        }
        mem = r.mem.clone();
    }
    // The repeat of the largest query is served from the memo table: the
    // run is a short, call-free hop.
    let (m2, caller) = mem.alloc(0, 32).map_err(|e| e.to_string())?;
    let rs = RegSet::new()
        .with(Reg::Pc, Value::ptr(se.block_of("f").unwrap(), 0))
        .with(Reg::Rsp, Value::ptr(caller, 0))
        .with(Reg::Ra, Value::ptr(caller, 4096))
        .with(Reg::Rdi, Value::int(20));
    let q = Query::Asm(AQuery { rs, mem: m2 });
    let mut env = AdequacyEnv { seed: 10, calls: 0 };
    let trace = run_trace(merged, &q, &mut env, 4_000_000).map_err(|(e, _)| e.to_string())?;
    let Some(Reply::Asm(r)) = trace.final_reply() else {
        return Err("no machine reply".to_string());
    };
    if r.rs.get(Reg::Rax) != Value::int(210) {
        return Err(format!("repeated f(20) = {}", r.rs.get(Reg::Rax)));
    }
    if trace.events.len() != 2 {
        return Err("repeated query was not served from the cache".to_string());
    }
    Ok(())
}

/// Run a named scenario end to end.
pub fn run_scenario(name: &str) -> Result<ScenarioReport, UnknownScenario> {
    let result = match name {
        "client-server" => run_client_server(true),
        "client-server-unopt" => run_client_server(false),
        "client-server-mr" => run_client_server_mr(),
        "mutual-sum" => run_mutual_sum(),
        other => return Err(UnknownScenario(other.to_string())),
    };
    Ok(result.unwrap_or_else(|e| {
        let mut r = ScenarioReport { scenario: name.to_string(), steps: Vec::new() };
        r.push("setup", false, e);
        r
    }))
}

pub fn scenario_names() -> Vec<&'static str> {
    vec!["client-server", "client-server-unopt", "client-server-mr", "mutual-sum"]
}

/// The absorption derivation used by the scenarios, exposed for reporting.
pub fn absorption_derivation() -> Derivation {
    derive_rewrite(&absorb_start(), &absorb_script()).expect("absorption script replays")
}
