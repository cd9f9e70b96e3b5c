//! Text-format checks across every bundled program, and the syntactic
//! linking edge cases.

use refinekit::lang::{miniasm, minic};
use refinekit::sem::LinkError;

const MC_SOURCES: &[(&str, &str)] = &[
    ("client.mc", include_str!("../programs/client.mc")),
    ("client_mr.mc", include_str!("../programs/client_mr.mc")),
    ("sum_f.mc", include_str!("../programs/sum_f.mc")),
];

const MA_SOURCES: &[(&str, &str)] = &[
    ("server.ma", include_str!("../programs/server.ma")),
    ("server_opt.ma", include_str!("../programs/server_opt.ma")),
    ("sum_g.ma", include_str!("../programs/sum_g.ma")),
];

#[test]
fn every_bundled_program_round_trips() {
    for (name, src) in MC_SOURCES {
        let m = minic::parse_module(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let printed = minic::print_module(&m);
        let again = minic::parse_module(&printed).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(m, again, "{name}");
    }
    for (name, src) in MA_SOURCES {
        let m = miniasm::parse_module(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let printed = miniasm::print_module(&m);
        let again = miniasm::parse_module(&printed).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(m, again, "{name}");
    }
}

#[test]
fn syntactic_linking_rejects_duplicates() {
    let a = miniasm::parse_module("func main:\n  Pret\n").unwrap();
    let b = miniasm::parse_module("func main:\n  Pret\n").unwrap();
    assert!(matches!(miniasm::syn_link(&a, &b), Err(LinkError::Duplicate(_))));

    let c = minic::parse_module("func main() -> void {\n  return\n}\n").unwrap();
    let d = minic::parse_module("func main() -> void {\n  return\n}\n").unwrap();
    assert!(matches!(minic::syn_link(&c, &d), Err(LinkError::Duplicate(_))));
}

#[test]
fn linking_with_the_empty_module_is_identity() {
    let server = miniasm::parse_module(MA_SOURCES[0].1).unwrap();
    let empty = miniasm::MiniAsmModule::default();
    assert_eq!(miniasm::syn_link(&server, &empty).unwrap(), server);

    let client = minic::parse_module(MC_SOURCES[0].1).unwrap();
    let empty = minic::MiniCModule::default();
    assert_eq!(minic::syn_link(&client, &empty).unwrap(), client);
}

#[test]
fn compiled_outputs_round_trip_too() {
    use refinekit::compiler::pipeline_compile;
    use refinekit::sem::SymbolTable;
    for (name, src) in MC_SOURCES {
        let m = minic::parse_module(src).unwrap();
        let se = SymbolTable::build(&m.decls()).unwrap();
        let p = pipeline_compile(&se, &m).unwrap();
        let printed = miniasm::print_module(&p.asm);
        let again = miniasm::parse_module(&printed).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(p.asm, again, "{name}");
    }
}
