//! Command-line front door: property suites, law validation, compilation,
//! linking, trace execution, simulation checks, derivation replays and the
//! bundled end-to-end scenarios.

use refinekit::compiler::{self, matchers::StackingMatcher, pipeline_compile};
use refinekit::conv::laws::{
    absorb_script, absorb_start, derive_rewrite, incoming_script, incoming_start,
    outgoing_script, outgoing_start, pipeline_script, pipeline_start, refine_instance_check,
    registry, Validation,
};
use refinekit::conv::plans::IdentityMatcher;
use refinekit::conv::simcheck::{sim_check, PassMatcher, ProtectedEnv};
use refinekit::gen::{
    gen_decomposed_evolution, gen_interpolation_instance, gen_single_injection, rng_for,
    GenConfig,
};
use refinekit::inject::{compose_inj, mem_inj_check};
use refinekit::kmr::{injp_acc_check, interpolate, recompose_check, InjpWorld};
use refinekit::lang::{miniasm, minic};
use refinekit::mem::Value;
use refinekit::scenarios::{self, run_scenario, scenario_names};
use refinekit::sem::{
    link_sem, run_trace, AQuery, CQuery, EnvStrategy, OpenLts, Query, Reg, RegSet, Reply,
    RetKind, Signature, SymbolTable, TraceEvent,
};
use serde_json::json;
use std::collections::BTreeMap;
use std::process::ExitCode;

struct Args {
    positional: Vec<String>,
    flags: BTreeMap<String, Vec<String>>,
    json: bool,
}

fn parse_args(argv: &[String]) -> Args {
    let mut positional = Vec::new();
    let mut flags: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut json = false;
    let mut i = 0;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--json" {
            json = true;
        } else if let Some(name) = a.strip_prefix("--") {
            if i + 1 < argv.len() && !argv[i + 1].starts_with("--") {
                flags.entry(name.to_string()).or_default().push(argv[i + 1].clone());
                i += 1;
            } else {
                flags.entry(name.to_string()).or_default().push(String::new());
            }
        } else {
            positional.push(a.clone());
        }
        i += 1;
    }
    // A config file provides defaults (seeds, fuel, iteration counts);
    // explicit flags win.
    if let Some(path) = flags.get("config").and_then(|v| v.first()).cloned() {
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&text) {
                for (k, v) in map {
                    let rendered = match v {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    flags.entry(k).or_insert_with(|| vec![rendered]);
                }
            } else {
                eprintln!("warning: {path} is not a JSON object; ignoring");
            }
        } else {
            eprintln!("warning: cannot read config {path}");
        }
    }
    Args { positional, flags, json }
}

impl Args {
    fn flag(&self, name: &str) -> Option<&str> {
        self.flags.get(name).and_then(|v| v.first()).map(|s| s.as_str())
    }

    fn all(&self, name: &str) -> Vec<&str> {
        self.flags.get(name).map(|v| v.iter().map(|s| s.as_str()).collect()).unwrap_or_default()
    }

    fn num(&self, name: &str, default: u64) -> u64 {
        self.flag(name).and_then(|s| s.parse().ok()).unwrap_or(default)
    }
}

fn usage() -> ExitCode {
    eprintln!(
        "usage: refinekit <command> [options]

commands:
  check-injp    --iters N --seed S [--max-blocks 4] [--max-cells 8]
                transitivity suites for the protected memory relation
  check-laws    [--samples N] [--seed S] [--law NAME]
                validate the convention-refinement laws
  compile       --in FILE.mc --out FILE.ma [--emit-derivation FILE.json]
  link          --out FILE A B   (same language, .mc or .ma)
  simulate      --module FILE [--module FILE ...] --entry NAME
                [--args \"1,2\"] [--fuel N] [--env quiet|writer] [--seed S]
  sim-check     --pass promote|constprop|stacking|pipeline --in FILE.mc
                [--count N] [--seed S]
  refine-derive --script outgoing|incoming|pipeline|absorb
  run-example   NAME | all | list
  fmt           --in FILE         reprint in canonical form

global: --json for machine-readable reports
        --config FILE (JSON object of default flag values; flags win)
exit codes: 0 pass, 1 check failure, 2 usage error"
    );
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(cmd) = argv.first().map(|s| s.as_str()) else {
        return usage();
    };
    let args = parse_args(&argv[1..]);
    match cmd {
        "check-injp" => cmd_check_injp(&args),
        "check-laws" => cmd_check_laws(&args),
        "compile" => cmd_compile(&args),
        "link" => cmd_link(&args),
        "simulate" => cmd_simulate(&args),
        "sim-check" => cmd_sim_check(&args),
        "refine-derive" => cmd_refine_derive(&args),
        "run-example" => cmd_run_example(&args),
        "fmt" => cmd_fmt(&args),
        _ => usage(),
    }
}

fn cmd_check_injp(args: &Args) -> ExitCode {
    let iters = args.num("iters", 1000);
    let seed = args.num("seed", 7);
    let cfg = GenConfig {
        max_blocks: args.num("max-blocks", 4) as usize,
        max_cells: args.num("max-cells", 8) as usize,
        max_mappings: args.num("max-mappings", 3) as usize,
        evolution_steps: args.num("evolution-steps", 6) as usize,
        ..GenConfig::default()
    };
    let mut failures: Vec<String> = Vec::new();
    for i in 0..iters {
        let mut rng = rng_for(seed, i);
        let inst = gen_interpolation_instance(&mut rng, &cfg);
        let c = &inst.chain;
        match interpolate(
            &c.j12, &c.j23, &c.m1, &c.m2, &c.m3, &inst.j13p, &inst.m1p, &inst.m3p,
        ) {
            Err(e) => failures.push(format!("merge instance {i}: {e}")),
            Ok((j12p, j23p, m2p)) => {
                let ok = mem_inj_check(&j12p, &inst.m1p, &m2p).ok()
                    && mem_inj_check(&j23p, &m2p, &inst.m3p).ok()
                    && injp_acc_check(
                        &InjpWorld::new(c.j12.clone(), c.m1.clone(), c.m2.clone()),
                        &InjpWorld::new(j12p.clone(), inst.m1p.clone(), m2p.clone()),
                    )
                    .ok()
                    && injp_acc_check(
                        &InjpWorld::new(c.j23.clone(), c.m2.clone(), c.m3.clone()),
                        &InjpWorld::new(j23p.clone(), m2p.clone(), inst.m3p.clone()),
                    )
                    .ok()
                    && compose_inj(&j12p, &j23p) == inst.j13p;
                if !ok {
                    failures.push(format!("merge instance {i}: a post-check failed"));
                }
            }
        }
    }
    for i in 0..iters {
        let mut rng = rng_for(seed ^ 0x5117, i);
        let (j13, m1, m3) = gen_single_injection(&mut rng, &cfg);
        let (j12p, j23p, m1p, _m2p, m3p) =
            gen_decomposed_evolution(&mut rng, &cfg, &j13, &m1, &m3);
        let r = recompose_check(&j13, &m1, &m3, &j12p, &j23p, &m1p, &m3p);
        if !r.ok() {
            failures.push(format!("split instance {i}: {r}"));
        }
    }
    let report = json!({ "instances": 2 * iters, "failures": failures });
    if args.json {
        println!("{report}");
    } else {
        println!(
            "protected-relation transitivity: {} instances, {} failures",
            2 * iters,
            failures.len()
        );
        for f in &failures {
            println!("  {f}");
        }
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_check_laws(args: &Args) -> ExitCode {
    let seed = args.num("seed", 11);
    let only = args.flag("law");
    let mut all_ok = true;
    let mut reports = Vec::new();
    for law in registry() {
        if let Some(name) = only {
            if law.name != name {
                continue;
            }
        }
        let samples = match law.mode {
            Validation::ConstructiveWitness => args.num("samples", 200) as usize,
            Validation::SampledCheck => args.num("samples", 500) as usize,
            Validation::SymbolicOnly => 0,
        };
        match refine_instance_check(law.name, samples, seed) {
            Ok(r) => {
                all_ok &= r.ok();
                if args.json {
                    reports.push(r.to_json());
                } else {
                    println!(
                        "{:28} {:20} {:>5} samples  {}",
                        r.law,
                        format!("{:?}", r.mode),
                        r.samples,
                        if r.ok() { "ok" } else { "FAILED" }
                    );
                    for f in r.failures.iter().take(3) {
                        println!("    {f}");
                    }
                }
            }
            Err(e) => {
                all_ok = false;
                eprintln!("{e}");
            }
        }
    }
    if args.json {
        println!("{}", json!({ "laws": reports }));
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn read_file(path: &str) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))
}

fn cmd_compile(args: &Args) -> ExitCode {
    let (Some(input), Some(output)) = (args.flag("in"), args.flag("out")) else {
        return usage();
    };
    let run = || -> Result<(), String> {
        let src = read_file(input)?;
        let m = minic::parse_module(&src).map_err(|e| e.to_string())?;
        let se = SymbolTable::build(&m.decls()).map_err(|e| e.to_string())?;
        let p = pipeline_compile(&se, &m).map_err(|e| e.to_string())?;
        std::fs::write(output, miniasm::print_module(&p.asm)).map_err(|e| e.to_string())?;
        if let Some(path) = args.flag("emit-derivation") {
            std::fs::write(path, p.derivation.to_json().to_string())
                .map_err(|e| e.to_string())?;
        }
        println!("compiled {input} -> {output} under {}", p.convention);
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_link(args: &Args) -> ExitCode {
    let Some(output) = args.flag("out") else { return usage() };
    if args.positional.len() != 2 {
        return usage();
    }
    let run = || -> Result<(), String> {
        let a = &args.positional[0];
        let b = &args.positional[1];
        if a.ends_with(".ma") {
            let ma = miniasm::parse_module(&read_file(a)?).map_err(|e| e.to_string())?;
            let mb = miniasm::parse_module(&read_file(b)?).map_err(|e| e.to_string())?;
            let merged = miniasm::syn_link(&ma, &mb).map_err(|e| e.to_string())?;
            std::fs::write(output, miniasm::print_module(&merged)).map_err(|e| e.to_string())?;
        } else {
            let ma = minic::parse_module(&read_file(a)?).map_err(|e| e.to_string())?;
            let mb = minic::parse_module(&read_file(b)?).map_err(|e| e.to_string())?;
            let merged = minic::syn_link(&ma, &mb).map_err(|e| e.to_string())?;
            std::fs::write(output, minic::print_module(&merged)).map_err(|e| e.to_string())?;
        }
        println!("linked {a} + {b} -> {output}");
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

/// Trace environments selectable by name: `quiet` answers with seeded
/// scalars and leaves memory alone; `writer` additionally stores seeded
/// integers into cells reachable through the query's pointer arguments.
struct NamedEnv {
    writer: bool,
    seed: u64,
    calls: u64,
}

impl NamedEnv {
    fn from_name(name: &str, seed: u64) -> Result<NamedEnv, String> {
        match name {
            "quiet" => Ok(NamedEnv { writer: false, seed, calls: 0 }),
            "writer" => Ok(NamedEnv { writer: true, seed, calls: 0 }),
            other => Err(format!("unknown environment {other:?} (quiet, writer)")),
        }
    }
}

impl EnvStrategy for NamedEnv {
    fn reply(&mut self, q: &Query, _h: &[TraceEvent]) -> Result<Reply, String> {
        use rand::Rng;
        let mut rng = rng_for(self.seed, self.calls);
        self.calls += 1;
        let mut mem = q.mem().clone();
        if self.writer {
            // Mutate through the query's own handles so the action is
            // identical across runs that only differ in block naming.
            let ptrs: Vec<Value> = match q {
                Query::C(q) => q.args.clone(),
                Query::Asm(q) => vec![q.rs.get(Reg::Rdi), q.rs.get(Reg::Rsi)],
            };
            for v in ptrs {
                if let Value::Ptr { b, o } = v {
                    if let Ok(next) = mem.store(b, o, Value::int(rng.gen_range(-9..10))) {
                        mem = next;
                    }
                }
            }
        }
        Ok(match q {
            Query::C(q) => Reply::C(refinekit::sem::CReply {
                res: match q.sg.ret {
                    RetKind::Void => Value::Undef,
                    _ => Value::int(rng.gen_range(-9..10)),
                },
                mem,
            }),
            Query::Asm(q) => {
                let mut rs = q.rs.clone();
                rs.set(Reg::Pc, q.rs.get(Reg::Ra));
                rs.set(Reg::Rax, Value::int(rng.gen_range(-9..10)));
                Reply::Asm(refinekit::sem::AReply { rs, mem })
            }
        })
    }
}

enum AnyModule {
    C(minic::MiniCModule),
    Asm(miniasm::MiniAsmModule),
}

fn load_module(path: &str) -> Result<AnyModule, String> {
    let src = read_file(path)?;
    if path.ends_with(".ma") {
        Ok(AnyModule::Asm(miniasm::parse_module(&src).map_err(|e| e.to_string())?))
    } else {
        Ok(AnyModule::C(minic::parse_module(&src).map_err(|e| e.to_string())?))
    }
}

fn cmd_simulate(args: &Args) -> ExitCode {
    let run = || -> Result<bool, String> {
        let mut paths: Vec<&str> = args.all("module");
        paths.extend(args.positional.iter().map(|s| s.as_str()));
        if paths.is_empty() {
            return Err("no modules given".to_string());
        }
        let entry = args.flag("entry").ok_or("missing --entry")?;
        let fuel = args.num("fuel", 1_000_000) as usize;
        let seed = args.num("seed", 1);
        let env_name = args.flag("env").unwrap_or("quiet");
        let modules: Result<Vec<AnyModule>, String> =
            paths.iter().map(|p| load_module(p)).collect();
        let modules = modules?;
        let mut decls = Vec::new();
        for m in &modules {
            match m {
                AnyModule::C(m) => decls.extend(m.decls()),
                AnyModule::Asm(m) => decls.extend(m.decls()),
            }
        }
        let se = SymbolTable::build(&decls).map_err(|e| e.to_string())?;
        let mut ltss: Vec<Box<dyn OpenLts>> = Vec::new();
        for m in &modules {
            match m {
                AnyModule::C(m) => {
                    ltss.push(Box::new(minic::sem_minic(m, &se).map_err(|e| e.to_string())?))
                }
                AnyModule::Asm(m) => ltss
                    .push(Box::new(miniasm::sem_miniasm(m, &se).map_err(|e| e.to_string())?)),
            }
        }
        let mut linked = ltss.remove(0);
        for l in ltss {
            linked = Box::new(link_sem(linked, l).map_err(|e| e.to_string())?);
        }
        let arg_values: Vec<Value> = args
            .flag("args")
            .unwrap_or("")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<i64>()
                    .map(Value::int)
                    .map_err(|e| format!("bad argument {s:?}: {e}"))
            })
            .collect::<Result<_, _>>()?;
        let entry_block =
            se.block_of(entry).ok_or_else(|| format!("unknown entry {entry}"))?;
        let mem = se.initial_memory();
        let q = match linked.incoming() {
            refinekit::sem::IfaceKind::C => Query::C(CQuery {
                vf: Value::ptr(entry_block, 0),
                sg: Signature::new(
                    arg_values.iter().map(|_| refinekit::sem::ValKind::Int).collect(),
                    RetKind::Int,
                ),
                args: arg_values,
                mem,
            }),
            refinekit::sem::IfaceKind::Asm => {
                let (mem, caller) = mem.alloc(0, 32).map_err(|e| e.to_string())?;
                let mut rs = RegSet::new()
                    .with(Reg::Pc, Value::ptr(entry_block, 0))
                    .with(Reg::Rsp, Value::ptr(caller, 0))
                    .with(Reg::Ra, Value::ptr(caller, 4096));
                if let Some(v) = arg_values.first() {
                    rs.set(Reg::Rdi, *v);
                }
                if let Some(v) = arg_values.get(1) {
                    rs.set(Reg::Rsi, *v);
                }
                Query::Asm(AQuery { rs, mem })
            }
        };
        let mut env = NamedEnv::from_name(env_name, seed)?;
        match run_trace(linked.as_ref(), &q, &mut env, fuel) {
            Ok(trace) => {
                if args.json {
                    println!("{}", trace.to_json_lines());
                } else {
                    for ev in &trace.events {
                        match ev {
                            TraceEvent::IncomingQuery(q) => {
                                println!("-> query {}", describe_query(&se, q))
                            }
                            TraceEvent::OutgoingQuery(q) => {
                                println!("<- external {}", describe_query(&se, q))
                            }
                            TraceEvent::OutgoingReply(_) => println!("-> resumed"),
                            TraceEvent::IncomingReply(r) => match r {
                                Reply::C(r) => println!("<- reply {}", r.res),
                                Reply::Asm(r) => {
                                    println!("<- reply RAX = {}", r.rs.get(Reg::Rax))
                                }
                            },
                        }
                    }
                }
                Ok(true)
            }
            Err((e, _)) => {
                eprintln!("run failed: {e}");
                Ok(false)
            }
        }
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}

fn describe_query(se: &SymbolTable, q: &Query) -> String {
    let target = q.target();
    let name = target
        .as_ptr()
        .and_then(|(b, _)| se.name_of(b))
        .unwrap_or("?")
        .to_string();
    match q {
        Query::C(q) => {
            let args: Vec<String> = q.args.iter().map(|v| v.to_string()).collect();
            format!("{name}({})", args.join(", "))
        }
        Query::Asm(q) => format!(
            "{name} [RDI = {}, RSI = {}]",
            q.rs.get(Reg::Rdi),
            q.rs.get(Reg::Rsi)
        ),
    }
}

fn cmd_sim_check(args: &Args) -> ExitCode {
    let run = || -> Result<bool, String> {
        let pass = args.flag("pass").ok_or("missing --pass")?;
        let input = args.flag("in").ok_or("missing --in")?;
        let count = args.num("count", 50) as usize;
        let seed = args.num("seed", 0x51c);
        let src_text = read_file(input)?;
        let m = minic::parse_module(&src_text).map_err(|e| e.to_string())?;
        let se = SymbolTable::build(&m.decls()).map_err(|e| e.to_string())?;
        let p = pipeline_compile(&se, &m).map_err(|e| e.to_string())?;
        let outcome = match pass {
            "promote" => {
                let src = minic::sem_minic(&p.source, &se).map_err(|e| e.to_string())?;
                let tgt = minic::sem_minic(&p.promoted, &se).map_err(|e| e.to_string())?;
                let atoms = compiler::promotion_atoms();
                let plan = compiler::pass_plan(&atoms, &se, &p.source, count, seed, |q| {
                    compiler::c_pass_item(&atoms, &se, q, 1)
                })?;
                sim_check(
                    &src,
                    &tgt,
                    &plan,
                    || {
                        Box::new(compiler::matchers::PromoteMatcher::new(
                            &compiler::promotion_atoms(),
                            &compiler::promotion_atoms(),
                        )) as Box<dyn PassMatcher>
                    },
                    |s| Box::new(ProtectedEnv::new(seed ^ s)),
                )
            }
            "constprop" => {
                let src = minic::sem_minic(&p.promoted, &se).map_err(|e| e.to_string())?;
                let tgt = minic::sem_minic(&p.optimized, &se).map_err(|e| e.to_string())?;
                let atoms = compiler::constprop_atoms();
                let plan = compiler::pass_plan(&atoms, &se, &p.promoted, count, seed, |q| {
                    compiler::c_pass_item(&atoms, &se, q, 0)
                })?;
                sim_check(
                    &src,
                    &tgt,
                    &plan,
                    || {
                        Box::new(IdentityMatcher::new(
                            &se,
                            &compiler::constprop_atoms(),
                            &compiler::constprop_atoms(),
                        )) as Box<dyn PassMatcher>
                    },
                    |s| Box::new(ProtectedEnv::new(seed ^ s)),
                )
            }
            "stacking" => {
                let src = minic::sem_minic(&p.optimized, &se).map_err(|e| e.to_string())?;
                let tgt = miniasm::sem_miniasm(&p.asm, &se).map_err(|e| e.to_string())?;
                let atoms = compiler::stacking_atoms();
                let plan = compiler::pass_plan(&atoms, &se, &p.optimized, count, seed, |q| {
                    compiler::stacking_item(&se, q, &atoms)
                })?;
                sim_check(
                    &src,
                    &tgt,
                    &plan,
                    || {
                        Box::new(StackingMatcher::new(
                            &se,
                            &p.codegen,
                            &compiler::stacking_atoms(),
                        )) as Box<dyn PassMatcher>
                    },
                    |s| Box::new(ProtectedEnv::new(seed ^ s)),
                )
            }
            "pipeline" => {
                let src = minic::sem_minic(&p.source, &se).map_err(|e| e.to_string())?;
                let tgt = miniasm::sem_miniasm(&p.asm, &se).map_err(|e| e.to_string())?;
                let atoms = scenarios::pipeline_atoms();
                let plan = compiler::pass_plan(&atoms, &se, &p.source, count, seed, |q| {
                    let low = compiler::stacking_item(&se, q, &compiler::stacking_atoms())?;
                    let mut queries = vec![Query::C(q.clone()); 4];
                    queries.push(low.queries.last().unwrap().clone());
                    let mut worlds =
                        compiler::c_pass_item(&compiler::promotion_atoms(), &se, q, 0)?.worlds;
                    worlds.extend(
                        compiler::c_pass_item(&compiler::constprop_atoms(), &se, q, 0)?.worlds,
                    );
                    worlds.extend(low.worlds);
                    Ok(refinekit::conv::ChainInstance {
                        atoms: atoms.clone(),
                        worlds,
                        queries,
                    })
                })?;
                sim_check(
                    &src,
                    &tgt,
                    &plan,
                    || {
                        Box::new(
                            scenarios::pipeline_matcher(&se, &p).expect("pipeline matcher"),
                        ) as Box<dyn PassMatcher>
                    },
                    |s| Box::new(ProtectedEnv::new(seed ^ s)),
                )
            }
            other => return Err(format!("unknown pass {other:?}")),
        };
        if args.json {
            println!("{}", outcome.to_json());
        } else {
            println!(
                "{pass}: {} passes, {} failures over {} items",
                outcome.passes(),
                outcome.failures().len(),
                outcome.items.len()
            );
            if let Some((clause, detail)) = outcome.first_failure() {
                println!("  first failure at clause {clause}: {detail}");
            }
        }
        Ok(outcome.ok())
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_refine_derive(args: &Args) -> ExitCode {
    let script = args.flag("script").unwrap_or("outgoing");
    let result = match script {
        "outgoing" => derive_rewrite(&outgoing_start(), &outgoing_script()),
        "incoming" => derive_rewrite(&incoming_start(), &incoming_script()),
        "pipeline" => derive_rewrite(&pipeline_start(), &pipeline_script()),
        "absorb" => derive_rewrite(&absorb_start(), &absorb_script()),
        other => {
            eprintln!("unknown script {other:?}");
            return ExitCode::from(2);
        }
    };
    match result {
        Ok(d) => {
            if args.json {
                println!("{}", d.to_json());
            } else {
                let chain_str = |c: &[refinekit::conv::ConvAtom]| {
                    c.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" . ")
                };
                println!("(1) {}", chain_str(&d.start));
                for (i, s) in d.steps.iter().enumerate() {
                    println!("    [{}] {}", s.laws.join(", "), s.label);
                    println!("({}) {}", i + 2, chain_str(&s.after));
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_run_example(args: &Args) -> ExitCode {
    let Some(name) = args.positional.first() else {
        return usage();
    };
    if name == "list" {
        for n in scenario_names() {
            println!("{n}");
        }
        return ExitCode::SUCCESS;
    }
    let names: Vec<&str> = if name == "all" { scenario_names() } else { vec![name.as_str()] };
    let mut all_ok = true;
    for n in names {
        match run_scenario(n) {
            Ok(report) => {
                all_ok &= report.ok();
                if args.json {
                    println!("{}", report.to_json());
                } else {
                    println!("{n}:");
                    for s in &report.steps {
                        println!(
                            "  {} {:45} {}",
                            if s.ok { "ok  " } else { "FAIL" },
                            s.name,
                            s.detail
                        );
                    }
                }
            }
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
        }
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_fmt(args: &Args) -> ExitCode {
    let Some(input) = args.flag("in") else { return usage() };
    match load_module(input) {
        Ok(AnyModule::C(m)) => {
            print!("{}", minic::print_module(&m));
            ExitCode::SUCCESS
        }
        Ok(AnyModule::Asm(m)) => {
            print!("{}", miniasm::print_module(&m));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
