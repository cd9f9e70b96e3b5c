//! Simulation conventions: expressions over convention atoms, their typed
//! composition, executable query/reply matchers for the C-level, Asm-level
//! and C-to-Asm conventions, and the semantic invariants for read-only
//! globals and well-typedness.
//!
//! A convention for a pass pairs a world with relations on queries and
//! replies. Composed conventions quantify existentially over middle queries
//! and replies; checkers never search for middles, which are supplied by
//! plan construction or by co-execution of the middle semantics.

pub mod laws;
pub mod plans;
pub mod simcheck;

use crate::inject::{mem_inj_check, out_of_reach, value_inject_check, CheckReport};
use crate::kmr::{injp_acc_check, kmr_acc_check, kmr_rel_check, InjpWorld, KmrTag};
use crate::mem::{mem_acc_witness, MemoryState, PermKind, Permission, Value};
use crate::sem::{
    AQuery, AReply, CQuery, CReply, IfaceKind, Query, Reg, RegSet, Reply, RetKind, Signature,
    SymbolTable, ValKind, CALLEE_SAVE_REGS,
};
use std::fmt;

/// Interface levels an atom may connect. Ltl and Mach exist only so the
/// derivation sequences type-check; they carry no executable queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    C,
    Ltl,
    Mach,
    Asm,
}

impl Level {
    pub fn iface(self) -> Option<IfaceKind> {
        match self {
            Level::C => Some(IfaceKind::C),
            Level::Asm => Some(IfaceKind::Asm),
            _ => None,
        }
    }

    fn short(self) -> &'static str {
        match self {
            Level::C => "c",
            Level::Ltl => "ltl",
            Level::Mach => "mach",
            Level::Asm => "asm",
        }
    }
}

/// One convention atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvAtom {
    /// A structural convention at one level parameterized by a KMR, such
    /// as `c_injp` or `asm_ext`.
    Kmr(Level, KmrTag),
    /// Read-only globals hold their initial values.
    Ro,
    /// Queries and replies respect the signature.
    Wt,
    /// Calling-convention steps between adjacent levels (symbolic only).
    Cl,
    Lm,
    Ma,
    /// The full C-to-Asm convention.
    CAinjp,
    /// Equality at a level.
    Id(Level),
}

impl ConvAtom {
    pub fn endpoints(&self) -> (Level, Level) {
        match self {
            ConvAtom::Kmr(l, _) => (*l, *l),
            ConvAtom::Ro | ConvAtom::Wt => (Level::C, Level::C),
            ConvAtom::Cl => (Level::C, Level::Ltl),
            ConvAtom::Lm => (Level::Ltl, Level::Mach),
            ConvAtom::Ma => (Level::Mach, Level::Asm),
            ConvAtom::CAinjp => (Level::C, Level::Asm),
            ConvAtom::Id(l) => (*l, *l),
        }
    }

    /// Atoms that have no executable matcher.
    pub fn symbolic_only(&self) -> bool {
        matches!(
            self,
            ConvAtom::Cl
                | ConvAtom::Lm
                | ConvAtom::Ma
                | ConvAtom::Kmr(Level::Ltl | Level::Mach, _)
                | ConvAtom::Id(Level::Ltl | Level::Mach)
        )
    }

    pub fn parse(s: &str) -> Option<ConvAtom> {
        let atom = match s {
            "ro" => ConvAtom::Ro,
            "wt" => ConvAtom::Wt,
            "CL" => ConvAtom::Cl,
            "LM" => ConvAtom::Lm,
            "MA" => ConvAtom::Ma,
            "CAinjp" => ConvAtom::CAinjp,
            "id_c" => ConvAtom::Id(Level::C),
            "id_asm" => ConvAtom::Id(Level::Asm),
            _ => {
                let (lvl, tag) = s.split_once('_')?;
                let level = match lvl {
                    "c" => Level::C,
                    "ltl" => Level::Ltl,
                    "mach" => Level::Mach,
                    "asm" => Level::Asm,
                    _ => return None,
                };
                let tag = match tag {
                    "injp" => KmrTag::Injp,
                    "inj" => KmrTag::Inj,
                    "ext" => KmrTag::Ext,
                    "id" => KmrTag::Id,
                    _ => return None,
                };
                ConvAtom::Kmr(level, tag)
            }
        };
        Some(atom)
    }
}

impl fmt::Display for ConvAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvAtom::Kmr(l, t) => write!(f, "{}_{}", l.short(), t),
            ConvAtom::Ro => write!(f, "ro"),
            ConvAtom::Wt => write!(f, "wt"),
            ConvAtom::Cl => write!(f, "CL"),
            ConvAtom::Lm => write!(f, "LM"),
            ConvAtom::Ma => write!(f, "MA"),
            ConvAtom::CAinjp => write!(f, "CAinjp"),
            ConvAtom::Id(l) => write!(f, "id_{}", l.short()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConvExpr {
    Atom(ConvAtom),
    Compose(Box<ConvExpr>, Box<ConvExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeMismatch {
    pub left: Level,
    pub right: Level,
}

impl fmt::Display for TypeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "endpoints do not chain: {:?} vs {:?}", self.left, self.right)
    }
}

impl std::error::Error for TypeMismatch {}

impl ConvExpr {
    pub fn atom(a: ConvAtom) -> ConvExpr {
        ConvExpr::Atom(a)
    }

    pub fn from_chain(atoms: &[ConvAtom]) -> ConvExpr {
        assert!(!atoms.is_empty());
        let mut it = atoms.iter();
        let mut e = ConvExpr::Atom(*it.next().unwrap());
        for a in it {
            e = ConvExpr::Compose(Box::new(e), Box::new(ConvExpr::Atom(*a)));
        }
        e
    }

    pub fn flatten(&self) -> Vec<ConvAtom> {
        match self {
            ConvExpr::Atom(a) => vec![*a],
            ConvExpr::Compose(l, r) => {
                let mut v = l.flatten();
                v.extend(r.flatten());
                v
            }
        }
    }

    pub fn endpoints(&self) -> Result<(Level, Level), TypeMismatch> {
        let atoms = self.flatten();
        let mut iter = atoms.iter();
        let (start, mut cur) = iter.next().unwrap().endpoints();
        for a in iter {
            let (l, r) = a.endpoints();
            if l != cur {
                return Err(TypeMismatch { left: cur, right: l });
            }
            cur = r;
        }
        Ok((start, cur))
    }
}

impl fmt::Display for ConvExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atoms = self.flatten();
        for (i, a) in atoms.iter().enumerate() {
            if i > 0 {
                write!(f, " . ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Typed composition: endpoints must chain.
pub fn compose_conv(r: &ConvExpr, s: &ConvExpr) -> Result<ConvExpr, TypeMismatch> {
    let (_, mid_l) = r.endpoints()?;
    let (mid_r, _) = s.endpoints()?;
    if mid_l != mid_r {
        return Err(TypeMismatch { left: mid_l, right: mid_r });
    }
    Ok(ConvExpr::Compose(Box::new(r.clone()), Box::new(s.clone())))
}

/// Per-atom world payloads.
#[derive(Debug, Clone)]
pub enum ConvWorld {
    Kmr(KmrTag, InjpWorld),
    Ro { se: SymbolTable, mem: MemoryState },
    Wt(Signature),
    CAinjp { w: InjpWorld, sg: Signature, rs: RegSet },
    Id,
}

/// Evolved-world witness for an atom's reply side, produced by the
/// checker's co-execution rather than searched for.
#[derive(Debug, Clone)]
pub enum ReplyWitness {
    Kmr(InjpWorld),
    CAinjp(InjpWorld),
    Trivial,
}

fn report_err(msg: impl Into<String>) -> CheckReport {
    let mut r = CheckReport::default();
    r.push("unsupported", msg.into());
    r
}

/// Argument values the Asm side passes for a signature: the first two in
/// RDI and RSI, the rest in stack cells `SP + 16 + 8k`.
pub fn get_args(sg: &Signature, rs: &RegSet, mem: &MemoryState) -> Result<Vec<Value>, String> {
    let mut out = Vec::new();
    for k in 0..sg.params.len() {
        match k {
            0 => out.push(rs.get(Reg::Rdi)),
            1 => out.push(rs.get(Reg::Rsi)),
            _ => {
                let Value::Ptr { b, o } = rs.get(Reg::Rsp) else {
                    return Err("stack pointer is not a pointer".to_string());
                };
                let off = o + 16 + 8 * (k as i64 - 2);
                out.push(mem.value_at(b, off));
            }
        }
    }
    Ok(out)
}

/// Stack positions holding outgoing arguments (the third and further).
pub fn outgoing_argument_cells(sg: &Signature, sp: &Value) -> Vec<(crate::mem::BlockId, i64)> {
    let Value::Ptr { b, o } = sp else { return Vec::new() };
    (2..sg.params.len()).map(|k| (*b, o + 16 + 8 * (k as i64 - 2))).collect()
}

/// The register the result of a call lands in.
pub fn get_result(_sg: &Signature, rs: &RegSet) -> Value {
    rs.get(Reg::Rax)
}

fn check_value_kind(v: &Value, k: ValKind) -> bool {
    matches!(
        (v, k),
        (Value::Undef, _) | (Value::Int { .. }, ValKind::Int) | (Value::Ptr { .. }, ValKind::Ptr)
    )
}

/// The C-to-Asm query relation: memories inject, the function value maps
/// to the PC, arguments land per the calling convention, and outgoing
/// argument slots are private to the source and freeable.
pub fn match_query_cainjp(w: &ConvWorld, qc: &CQuery, qa: &AQuery) -> CheckReport {
    let ConvWorld::CAinjp { w, sg, rs } = w else {
        return report_err("expected a CAinjp world");
    };
    let mut report = CheckReport::default();
    if *sg != qc.sg {
        report.push("signature", format!("world signature {} != query {}", sg, qc.sg));
    }
    if *rs != qa.rs {
        report.push("regset", "world registers differ from the query's".to_string());
    }
    let inj = mem_inj_check(&w.j, &qc.mem, &qa.mem);
    if !inj.ok() {
        report.push("mem-inj", format!("{inj}"));
    }
    if qc.vf == Value::Undef {
        report.push("vf-defined", "function value is undefined".to_string());
    }
    if !value_inject_check(&w.j, &qc.vf, &qa.rs.get(Reg::Pc)) {
        report.push(
            "pc",
            format!("vf {} does not inject to PC {}", qc.vf, qa.rs.get(Reg::Pc)),
        );
    }
    let sp = qa.rs.get(Reg::Rsp);
    if !matches!(sp, Value::Ptr { .. }) {
        report.push("sp-pointer", format!("SP is {sp}, not a pointer"));
    }
    match get_args(&qc.sg, &qa.rs, &qa.mem) {
        Ok(target_args) => {
            if target_args.len() != qc.args.len() {
                report.push("arity", "argument count mismatch".to_string());
            } else {
                for (i, (a1, a2)) in qc.args.iter().zip(&target_args).enumerate() {
                    if !value_inject_check(&w.j, a1, a2) {
                        report.push(
                            "args",
                            format!("argument {i}: {a1} does not inject to {a2}"),
                        );
                    }
                }
            }
        }
        Err(e) => report.push("args", e),
    }
    for (b, o) in outgoing_argument_cells(&qc.sg, &sp) {
        if !out_of_reach(&w.j, &qc.mem, b, o) {
            report.push("outgoing-out-of-reach", format!("slot ({b},{o}) is in reach"));
        }
        if !qa.mem.perm_at(b, o, PermKind::Cur, Permission::Freeable) {
            report.push("outgoing-freeable", format!("slot ({b},{o}) is not freeable"));
        }
    }
    report
}

/// The C-to-Asm reply relation, relative to the evolved world `j'` the
/// co-execution provides: accessibility from the query world, value in the
/// result register, SP and PC restored, callee-saves preserved.
pub fn match_reply_cainjp(
    w: &ConvWorld,
    witness: &InjpWorld,
    rc: &CReply,
    ra: &AReply,
) -> CheckReport {
    let ConvWorld::CAinjp { w, sg, rs } = w else {
        return report_err("expected a CAinjp world");
    };
    let mut report = CheckReport::default();
    if witness.m1 != rc.mem || witness.m2 != ra.mem {
        report.push("witness", "witness world memories differ from the replies".to_string());
    }
    let acc = injp_acc_check(w, witness);
    if !acc.ok() {
        report.push("injp-acc", format!("{acc}"));
    }
    let inj = mem_inj_check(&witness.j, &rc.mem, &ra.mem);
    if !inj.ok() {
        report.push("mem-inj", format!("{inj}"));
    }
    let res2 = get_result(sg, &ra.rs);
    let res_ok = match sg.ret {
        RetKind::Void => true,
        _ => value_inject_check(&witness.j, &rc.res, &res2),
    };
    if !res_ok {
        report.push("result", format!("{} does not inject to {}", rc.res, res2));
    }
    for (b, o) in outgoing_argument_cells(sg, &rs.get(Reg::Rsp)) {
        if !out_of_reach(&w.j, &w.m1, b, o) {
            report.push("outgoing-out-of-reach", format!("slot ({b},{o}) is in reach"));
        }
    }
    if ra.rs.get(Reg::Rsp) != rs.get(Reg::Rsp) {
        report.push(
            "sp-restored",
            format!("SP {} != original {}", ra.rs.get(Reg::Rsp), rs.get(Reg::Rsp)),
        );
    }
    if ra.rs.get(Reg::Pc) != rs.get(Reg::Ra) {
        report.push(
            "pc-ra",
            format!("PC {} != original RA {}", ra.rs.get(Reg::Pc), rs.get(Reg::Ra)),
        );
    }
    for r in CALLEE_SAVE_REGS {
        if ra.rs.get(r) != rs.get(r) {
            report.push(
                "callee-save",
                format!("{r} changed from {} to {}", rs.get(r), ra.rs.get(r)),
            );
        }
    }
    report
}

/// Query relation of one atom. Both queries and the world must agree with
/// the atom's endpoints.
pub fn match_query_atom(atom: &ConvAtom, w: &ConvWorld, q1: &Query, q2: &Query) -> CheckReport {
    match (atom, w) {
        (ConvAtom::Id(_), ConvWorld::Id) => {
            let mut r = CheckReport::default();
            if q1 != q2 {
                r.push("id", "queries differ".to_string());
            }
            r
        }
        (ConvAtom::Ro, ConvWorld::Ro { se, mem }) => {
            let mut r = CheckReport::default();
            if q1 != q2 {
                r.push("ro-eq", "queries differ".to_string());
            }
            if q1.mem() != mem {
                r.push("ro-world", "world memory differs from the query's".to_string());
            }
            if !se.ro_valid(q1.mem()) {
                r.push("ro-valid", "read-only globals do not hold initial values".to_string());
            }
            r
        }
        (ConvAtom::Wt, ConvWorld::Wt(sg)) => {
            let mut r = CheckReport::default();
            if q1 != q2 {
                r.push("wt-eq", "queries differ".to_string());
            }
            let Query::C(q) = q1 else {
                r.push("wt", "expected a C query".to_string());
                return r;
            };
            if q.sg != *sg {
                r.push("wt-sig", format!("signature {} != world {}", q.sg, sg));
            }
            if q.args.len() != sg.params.len() {
                r.push("wt-arity", "argument count mismatch".to_string());
            } else {
                for (i, (v, k)) in q.args.iter().zip(&sg.params).enumerate() {
                    if !check_value_kind(v, *k) {
                        r.push("wt-arg", format!("argument {i} has the wrong kind: {v}"));
                    }
                }
            }
            r
        }
        (ConvAtom::Kmr(level, tag), ConvWorld::Kmr(wtag, world)) => {
            let mut r = CheckReport::default();
            if tag != wtag {
                r.push("kmr", format!("world is for {wtag}, atom needs {tag}"));
                return r;
            }
            let rel = kmr_rel_check(*tag, world);
            if !rel.ok() {
                r.push("kmr-rel", format!("{rel}"));
            }
            match (level, q1, q2) {
                (Level::C, Query::C(a), Query::C(b)) => {
                    if a.mem != world.m1 || b.mem != world.m2 {
                        r.push("kmr-mem", "world memories differ from the queries".to_string());
                    }
                    if a.sg != b.sg {
                        r.push("kmr-sig", "signatures differ".to_string());
                    }
                    if !value_inject_check(&world.j, &a.vf, &b.vf) {
                        r.push("kmr-vf", format!("{} does not inject to {}", a.vf, b.vf));
                    }
                    if a.args.len() != b.args.len() {
                        r.push("kmr-arity", "argument count mismatch".to_string());
                    } else {
                        for (i, (x, y)) in a.args.iter().zip(&b.args).enumerate() {
                            if !value_inject_check(&world.j, x, y) {
                                r.push(
                                    "kmr-args",
                                    format!("argument {i}: {x} does not inject to {y}"),
                                );
                            }
                        }
                    }
                }
                (Level::Asm, Query::Asm(a), Query::Asm(b)) => {
                    if a.mem != world.m1 || b.mem != world.m2 {
                        r.push("kmr-mem", "world memories differ from the queries".to_string());
                    }
                    for reg in crate::sem::ALL_REGS {
                        if !value_inject_check(&world.j, &a.rs.get(reg), &b.rs.get(reg)) {
                            r.push(
                                "kmr-regs",
                                format!(
                                    "{reg}: {} does not inject to {}",
                                    a.rs.get(reg),
                                    b.rs.get(reg)
                                ),
                            );
                        }
                    }
                }
                _ => r.push("kmr-iface", "queries do not match the atom level".to_string()),
            }
            r
        }
        (ConvAtom::CAinjp, w @ ConvWorld::CAinjp { .. }) => match (q1, q2) {
            (Query::C(qc), Query::Asm(qa)) => match_query_cainjp(w, qc, qa),
            _ => report_err("CAinjp relates a C query to an Asm query"),
        },
        (a, _) if a.symbolic_only() => {
            report_err(format!("atom {a} is symbolic only and has no matcher"))
        }
        _ => report_err("world shape does not match the atom"),
    }
}

/// Reply relation of one atom given its evolved-world witness.
pub fn match_reply_atom(
    atom: &ConvAtom,
    w: &ConvWorld,
    witness: &ReplyWitness,
    r1: &Reply,
    r2: &Reply,
) -> CheckReport {
    match (atom, w) {
        (ConvAtom::Id(_), ConvWorld::Id) => {
            let mut r = CheckReport::default();
            if r1 != r2 {
                r.push("id", "replies differ".to_string());
            }
            r
        }
        (ConvAtom::Ro, ConvWorld::Ro { mem, .. }) => {
            let mut r = CheckReport::default();
            if r1 != r2 {
                r.push("ro-eq", "replies differ".to_string());
            }
            if let Some(msg) = mem_acc_witness(mem, r1.mem()) {
                r.push("ro-acc", msg);
            }
            r
        }
        (ConvAtom::Wt, ConvWorld::Wt(sg)) => {
            let mut r = CheckReport::default();
            if r1 != r2 {
                r.push("wt-eq", "replies differ".to_string());
            }
            let Reply::C(rep) = r1 else {
                r.push("wt", "expected a C reply".to_string());
                return r;
            };
            let ok = match sg.ret {
                RetKind::Void => rep.res == Value::Undef,
                RetKind::Int => check_value_kind(&rep.res, ValKind::Int),
                RetKind::Ptr => check_value_kind(&rep.res, ValKind::Ptr),
            };
            if !ok {
                r.push("wt-res", format!("result {} does not fit {}", rep.res, sg));
            }
            r
        }
        (ConvAtom::Kmr(level, tag), ConvWorld::Kmr(wtag, world)) => {
            let mut r = CheckReport::default();
            let ReplyWitness::Kmr(evolved) = witness else {
                r.push("witness", "expected a KMR witness".to_string());
                return r;
            };
            if tag != wtag {
                r.push("kmr", format!("world is for {wtag}, atom needs {tag}"));
                return r;
            }
            let acc = kmr_acc_check(*tag, world, evolved);
            if !acc.ok() {
                r.push("kmr-acc", format!("{acc}"));
            }
            let inj = mem_inj_check(&evolved.j, &evolved.m1, &evolved.m2);
            if !inj.ok() {
                r.push("kmr-rel", format!("{inj}"));
            }
            match (level, r1, r2) {
                (Level::C, Reply::C(a), Reply::C(b)) => {
                    if a.mem != evolved.m1 || b.mem != evolved.m2 {
                        r.push("kmr-mem", "witness memories differ from the replies".to_string());
                    }
                    if !value_inject_check(&evolved.j, &a.res, &b.res) {
                        r.push("kmr-res", format!("{} does not inject to {}", a.res, b.res));
                    }
                }
                (Level::Asm, Reply::Asm(a), Reply::Asm(b)) => {
                    if a.mem != evolved.m1 || b.mem != evolved.m2 {
                        r.push("kmr-mem", "witness memories differ from the replies".to_string());
                    }
                    for reg in crate::sem::ALL_REGS {
                        if !value_inject_check(&evolved.j, &a.rs.get(reg), &b.rs.get(reg)) {
                            r.push(
                                "kmr-regs",
                                format!(
                                    "{reg}: {} does not inject to {}",
                                    a.rs.get(reg),
                                    b.rs.get(reg)
                                ),
                            );
                        }
                    }
                }
                _ => r.push("kmr-iface", "replies do not match the atom level".to_string()),
            }
            r
        }
        (ConvAtom::CAinjp, w @ ConvWorld::CAinjp { .. }) => {
            let (ReplyWitness::CAinjp(evolved) | ReplyWitness::Kmr(evolved)) = witness else {
                return report_err("expected an evolved-world witness");
            };
            match (r1, r2) {
                (Reply::C(rc), Reply::Asm(ra)) => match_reply_cainjp(w, evolved, rc, ra),
                _ => report_err("CAinjp relates a C reply to an Asm reply"),
            }
        }
        (a, _) if a.symbolic_only() => {
            report_err(format!("atom {a} is symbolic only and has no matcher"))
        }
        _ => report_err("world shape does not match the atom"),
    }
}

/// A fully instantiated composed convention: one world per atom plus the
/// chain of queries including both endpoints and all middles.
#[derive(Debug, Clone)]
pub struct ChainInstance {
    pub atoms: Vec<ConvAtom>,
    pub worlds: Vec<ConvWorld>,
    pub queries: Vec<Query>,
}

impl ChainInstance {
    pub fn source_query(&self) -> &Query {
        self.queries.first().expect("nonempty chain")
    }

    pub fn target_query(&self) -> &Query {
        self.queries.last().expect("nonempty chain")
    }
}

pub fn match_query_chain(inst: &ChainInstance) -> CheckReport {
    let mut report = CheckReport::default();
    if inst.queries.len() != inst.atoms.len() + 1 || inst.worlds.len() != inst.atoms.len() {
        report.push("chain", "instance arity mismatch".to_string());
        return report;
    }
    for (i, atom) in inst.atoms.iter().enumerate() {
        let r = match_query_atom(atom, &inst.worlds[i], &inst.queries[i], &inst.queries[i + 1]);
        for v in r.violations {
            report.push(format!("{atom}[{i}].{}", v.clause), v.witness);
        }
    }
    report
}

pub fn match_reply_chain(
    inst: &ChainInstance,
    witnesses: &[ReplyWitness],
    replies: &[Reply],
) -> CheckReport {
    let mut report = CheckReport::default();
    if replies.len() != inst.atoms.len() + 1 || witnesses.len() != inst.atoms.len() {
        report.push("chain", "reply arity mismatch".to_string());
        return report;
    }
    for (i, atom) in inst.atoms.iter().enumerate() {
        let r =
            match_reply_atom(atom, &inst.worlds[i], &witnesses[i], &replies[i], &replies[i + 1]);
        for v in r.violations {
            report.push(format!("{atom}[{i}].{}", v.clause), v.witness);
        }
    }
    report
}

/// Build the reply chain for a convention with at most one bridging atom
/// (a KMR or CAinjp atom): invariant atoms copy the source reply, the
/// bridging atom maps to the target reply.
pub fn synthesize_reply_chain(
    atoms: &[ConvAtom],
    r1: &Reply,
    r2: &Reply,
) -> Result<Vec<Reply>, String> {
    let bridges: Vec<usize> = atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a, ConvAtom::Kmr(..) | ConvAtom::CAinjp))
        .map(|(i, _)| i)
        .collect();
    if bridges.len() > 1 {
        return Err("more than one bridging atom; middles must come from co-execution".into());
    }
    let bridge = bridges.first().copied().unwrap_or(atoms.len());
    let mut replies = Vec::with_capacity(atoms.len() + 1);
    for i in 0..=atoms.len() {
        if i <= bridge {
            replies.push(r1.clone());
        } else {
            replies.push(r2.clone());
        }
    }
    Ok(replies)
}

/// Same synthesis for queries.
pub fn synthesize_query_chain(
    atoms: &[ConvAtom],
    q1: &Query,
    q2: &Query,
) -> Result<Vec<Query>, String> {
    let bridges: Vec<usize> = atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a, ConvAtom::Kmr(..) | ConvAtom::CAinjp))
        .map(|(i, _)| i)
        .collect();
    if bridges.len() > 1 {
        return Err("more than one bridging atom; middles must come from co-execution".into());
    }
    let bridge = bridges.first().copied().unwrap_or(atoms.len());
    let mut queries = Vec::with_capacity(atoms.len() + 1);
    for i in 0..=atoms.len() {
        if i <= bridge {
            queries.push(q1.clone());
        } else {
            queries.push(q2.clone());
        }
    }
    Ok(queries)
}

/// The direct convention the pipeline derivations end in.
pub fn scc() -> ConvExpr {
    ConvExpr::from_chain(&[ConvAtom::Ro, ConvAtom::Wt, ConvAtom::CAinjp])
}
