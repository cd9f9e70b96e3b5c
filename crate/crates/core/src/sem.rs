//! Language interfaces, open labeled transition systems, semantic linking
//! and the trace runner.
//!
//! An open LTS accepts queries and produces replies at its incoming
//! interface and issues queries at its outgoing interface. Two systems over
//! the same interface can be linked: queries one of them issues for symbols
//! the other defines turn into internal control transfers with a pending
//! frame, everything else escapes to the environment.

use crate::json::{memory_to_json, value_to_json};
use crate::mem::{BlockId, MemoryState, Value};
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::fmt;

/// Parameter kinds of a function signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValKind {
    Int,
    Ptr,
}

/// Result kind of a function signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetKind {
    Int,
    Ptr,
    Void,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub params: Vec<ValKind>,
    pub ret: RetKind,
}

impl Signature {
    pub fn new(params: Vec<ValKind>, ret: RetKind) -> Signature {
        Signature { params, ret }
    }

    /// `int -> int`
    pub fn int_int() -> Signature {
        Signature::new(vec![ValKind::Int], RetKind::Int)
    }

    /// `(int, ptr) -> void`
    pub fn int_ptr_void() -> Signature {
        Signature::new(vec![ValKind::Int, ValKind::Ptr], RetKind::Void)
    }

    /// `ptr -> void`
    pub fn ptr_void() -> Signature {
        Signature::new(vec![ValKind::Ptr], RetKind::Void)
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match p {
                ValKind::Int => write!(f, "int")?,
                ValKind::Ptr => write!(f, "ptr")?,
            }
        }
        write!(f, ") -> ")?;
        match self.ret {
            RetKind::Int => write!(f, "int"),
            RetKind::Ptr => write!(f, "ptr"),
            RetKind::Void => write!(f, "void"),
        }
    }
}

/// A function call at the C-like interface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CQuery {
    pub vf: Value,
    pub sg: Signature,
    pub args: Vec<Value>,
    pub mem: MemoryState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CReply {
    pub res: Value,
    pub mem: MemoryState,
}

/// Machine registers of the register-machine interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Reg {
    Rdi,
    Rsi,
    Rax,
    Rbx,
    Rsp,
    Pc,
    Ra,
}

pub const ALL_REGS: [Reg; 7] = [Reg::Rdi, Reg::Rsi, Reg::Rax, Reg::Rbx, Reg::Rsp, Reg::Pc, Reg::Ra];

/// Registers an external call must preserve.
pub const CALLEE_SAVE_REGS: [Reg; 2] = [Reg::Rbx, Reg::Rsp];

impl Reg {
    pub fn name(&self) -> &'static str {
        match self {
            Reg::Rdi => "RDI",
            Reg::Rsi => "RSI",
            Reg::Rax => "RAX",
            Reg::Rbx => "RBX",
            Reg::Rsp => "RSP",
            Reg::Pc => "PC",
            Reg::Ra => "RA",
        }
    }

    pub fn parse(s: &str) -> Option<Reg> {
        ALL_REGS.iter().copied().find(|r| r.name() == s)
    }

    fn index(&self) -> usize {
        match self {
            Reg::Rdi => 0,
            Reg::Rsi => 1,
            Reg::Rax => 2,
            Reg::Rbx => 3,
            Reg::Rsp => 4,
            Reg::Pc => 5,
            Reg::Ra => 6,
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// A total register file; unset registers read `Undef`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegSet {
    regs: [Value; 7],
}

impl Default for RegSet {
    fn default() -> Self {
        RegSet { regs: [Value::Undef; 7] }
    }
}

impl RegSet {
    pub fn new() -> RegSet {
        RegSet::default()
    }

    pub fn get(&self, r: Reg) -> Value {
        self.regs[r.index()]
    }

    pub fn set(&mut self, r: Reg, v: Value) {
        self.regs[r.index()] = v;
    }

    pub fn with(mut self, r: Reg, v: Value) -> RegSet {
        self.set(r, v);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AQuery {
    pub rs: RegSet,
    pub mem: MemoryState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AReply {
    pub rs: RegSet,
    pub mem: MemoryState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IfaceKind {
    C,
    Asm,
}

impl fmt::Display for IfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IfaceKind::C => write!(f, "C"),
            IfaceKind::Asm => write!(f, "Asm"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    C(CQuery),
    Asm(AQuery),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    C(CReply),
    Asm(AReply),
}

impl Query {
    pub fn iface(&self) -> IfaceKind {
        match self {
            Query::C(_) => IfaceKind::C,
            Query::Asm(_) => IfaceKind::Asm,
        }
    }

    pub fn mem(&self) -> &MemoryState {
        match self {
            Query::C(q) => &q.mem,
            Query::Asm(q) => &q.mem,
        }
    }

    /// The function pointer a query targets: `vf` at C, `PC` at Asm.
    pub fn target(&self) -> Value {
        match self {
            Query::C(q) => q.vf,
            Query::Asm(q) => q.rs.get(Reg::Pc),
        }
    }
}

impl Reply {
    pub fn iface(&self) -> IfaceKind {
        match self {
            Reply::C(_) => IfaceKind::C,
            Reply::Asm(_) => IfaceKind::Asm,
        }
    }

    pub fn mem(&self) -> &MemoryState {
        match self {
            Reply::C(r) => &r.mem,
            Reply::Asm(r) => &r.mem,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymKind {
    Func,
    Var,
}

/// One symbol of a table: its block, kind, constness and initial data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolInfo {
    pub block: BlockId,
    pub kind: SymKind,
    pub read_only: bool,
    pub init: Vec<Value>,
}

/// A declaration before block assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymDecl {
    pub name: String,
    pub kind: SymKind,
    pub read_only: bool,
    pub init: Vec<Value>,
    /// Declarations without a body or data; mergeable with a definition.
    pub external: bool,
}

impl SymDecl {
    pub fn func(name: &str) -> SymDecl {
        SymDecl {
            name: name.to_string(),
            kind: SymKind::Func,
            read_only: false,
            init: Vec::new(),
            external: false,
        }
    }

    pub fn extern_func(name: &str) -> SymDecl {
        SymDecl { external: true, ..SymDecl::func(name) }
    }

    pub fn var(name: &str, read_only: bool, init: Vec<Value>) -> SymDecl {
        SymDecl { name: name.to_string(), kind: SymKind::Var, read_only, init, external: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkError {
    Duplicate(String),
    Inconsistent(String),
    InterfaceMismatch,
}

impl fmt::Display for LinkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkError::Duplicate(s) => write!(f, "duplicate definition of {s}"),
            LinkError::Inconsistent(s) => write!(f, "inconsistent declarations of {s}"),
            LinkError::InterfaceMismatch => write!(f, "language interfaces do not match"),
        }
    }
}

impl std::error::Error for LinkError {}

/// Maps symbol names to blocks and initial data. Blocks are assigned in
/// sorted name order starting at 1, so any two tables over the same
/// declarations agree.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolTable {
    by_name: BTreeMap<String, SymbolInfo>,
}

impl SymbolTable {
    /// Merge declarations into one table. Two non-external declarations of
    /// the same name conflict; an external declaration merges with anything
    /// of the same kind.
    pub fn build(decls: &[SymDecl]) -> Result<SymbolTable, LinkError> {
        let mut merged: BTreeMap<String, SymDecl> = BTreeMap::new();
        for d in decls {
            match merged.get_mut(&d.name) {
                None => {
                    merged.insert(d.name.clone(), d.clone());
                }
                Some(prev) => {
                    if prev.kind != d.kind {
                        return Err(LinkError::Inconsistent(d.name.clone()));
                    }
                    if !prev.external && !d.external {
                        return Err(LinkError::Duplicate(d.name.clone()));
                    }
                    if prev.external {
                        *prev = d.clone();
                    }
                }
            }
        }
        let mut by_name = BTreeMap::new();
        for (i, (name, d)) in merged.iter().enumerate() {
            by_name.insert(
                name.clone(),
                SymbolInfo {
                    block: (i + 1) as BlockId,
                    kind: d.kind,
                    read_only: d.read_only,
                    init: d.init.clone(),
                },
            );
        }
        Ok(SymbolTable { by_name })
    }

    pub fn lookup(&self, name: &str) -> Option<&SymbolInfo> {
        self.by_name.get(name)
    }

    pub fn block_of(&self, name: &str) -> Option<BlockId> {
        self.lookup(name).map(|s| s.block)
    }

    pub fn name_of(&self, b: BlockId) -> Option<&str> {
        self.by_name
            .iter()
            .find(|(_, s)| s.block == b)
            .map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SymbolInfo)> {
        self.by_name.iter().map(|(n, s)| (n.as_str(), s))
    }

    /// The memory every run starts from: one block per symbol. Variables
    /// get a cell per 8-byte slot initialized from their data; read-only
    /// variables are capped at `Readable`. Function blocks have a bare
    /// `Nonempty` footprint of one position.
    pub fn initial_memory(&self) -> MemoryState {
        use crate::mem::Permission;
        let mut m = MemoryState::empty();
        for info in self.by_name.values() {
            match info.kind {
                SymKind::Func => {
                    let (next, b) = m.alloc(0, 1).unwrap();
                    debug_assert_eq!(b, info.block);
                    m = next;
                    m = m
                        .set_perm(b, 0, Some((Permission::Nonempty, Permission::Nonempty)))
                        .unwrap();
                }
                SymKind::Var => {
                    let len = info.init.len().max(1) as i64;
                    let (next, b) = m.alloc(0, 8 * len).unwrap();
                    debug_assert_eq!(b, info.block);
                    m = next;
                    for (k, v) in info.init.iter().enumerate() {
                        m = m.store(b, 8 * k as i64, *v).unwrap();
                    }
                    let perm = if info.read_only {
                        (Permission::Readable, Permission::Readable)
                    } else {
                        (Permission::Writable, Permission::Writable)
                    };
                    for o in 0..8 * len {
                        m = m.set_perm(b, o, Some(perm)).unwrap();
                    }
                }
            }
        }
        m
    }

    /// Every read-only variable still holds its initial data, readable but
    /// not writable.
    pub fn ro_valid(&self, m: &MemoryState) -> bool {
        use crate::mem::{PermKind, Permission};
        for info in self.by_name.values() {
            if info.kind != SymKind::Var || !info.read_only {
                continue;
            }
            let b = info.block;
            for (k, v) in info.init.iter().enumerate() {
                let o = 8 * k as i64;
                if m.value_at(b, o) != *v {
                    return false;
                }
                if !m.perm_at(b, o, PermKind::Max, Permission::Readable)
                    || m.perm_at(b, o, PermKind::Max, Permission::Writable)
                    || !m.perm_at(b, o, PermKind::Cur, Permission::Readable)
                {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SemError {
    Stuck(String),
    BadQuery(String),
}

impl fmt::Display for SemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemError::Stuck(s) => write!(f, "stuck: {s}"),
            SemError::BadQuery(s) => write!(f, "bad query: {s}"),
        }
    }
}

impl std::error::Error for SemError {}

/// What a state can do next.
#[derive(Debug, Clone)]
pub enum Mode {
    /// An internal step is available.
    Step,
    /// Waiting on the environment with an outgoing query.
    External(Query),
    /// Finished with a reply.
    Final(Reply),
    /// No transition applies.
    Stuck(String),
}

/// States of every system in this crate, closed so that matchers and the
/// linking operator can inspect them structurally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LtsState {
    MiniC(crate::lang::minic::CState),
    MiniAsm(crate::lang::miniasm::AState),
    Spec(crate::specs::SpecState),
    Linked(Box<LinkedState>),
}

/// An open labeled transition system over the closed state type.
pub trait OpenLts {
    fn name(&self) -> String;
    fn incoming(&self) -> IfaceKind;
    fn outgoing(&self) -> IfaceKind;
    fn se(&self) -> &SymbolTable;
    /// Initial-query acceptance (membership is decidable for any query).
    fn accepts(&self, q: &Query) -> bool;
    fn init(&self, q: &Query) -> Result<LtsState, SemError>;
    fn mode(&self, s: &LtsState) -> Mode;
    fn step(&self, s: &LtsState) -> Result<LtsState, SemError>;
    fn resume(&self, s: &LtsState, r: &Reply) -> Result<LtsState, SemError>;
}

/// Composite state of two linked systems: the running child plus the stack
/// of suspended callers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkedState {
    pub active_side: usize,
    pub active: LtsState,
    pub pending: Vec<(usize, LtsState)>,
}

/// Semantic linking: the composite runs whichever side defines the incoming
/// query, transfers control on cross queries, and exposes everything
/// neither side accepts.
pub struct LinkedLts {
    pub left: Box<dyn OpenLts>,
    pub right: Box<dyn OpenLts>,
    se: SymbolTable,
}

pub fn link_sem(left: Box<dyn OpenLts>, right: Box<dyn OpenLts>) -> Result<LinkedLts, LinkError> {
    if left.incoming() != right.incoming()
        || left.outgoing() != right.outgoing()
        || left.incoming() != left.outgoing()
    {
        return Err(LinkError::InterfaceMismatch);
    }
    if left.se() != right.se() {
        return Err(LinkError::Inconsistent(
            "linked systems must share one symbol table".to_string(),
        ));
    }
    let se = left.se().clone();
    Ok(LinkedLts { left, right, se })
}

impl LinkedLts {
    fn side(&self, i: usize) -> &dyn OpenLts {
        if i == 0 {
            self.left.as_ref()
        } else {
            self.right.as_ref()
        }
    }

    fn accepting_side(&self, q: &Query) -> Option<usize> {
        if self.left.accepts(q) {
            Some(0)
        } else if self.right.accepts(q) {
            Some(1)
        } else {
            None
        }
    }
}

impl OpenLts for LinkedLts {
    fn name(&self) -> String {
        format!("{} (+) {}", self.left.name(), self.right.name())
    }

    fn incoming(&self) -> IfaceKind {
        self.left.incoming()
    }

    fn outgoing(&self) -> IfaceKind {
        self.left.outgoing()
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        self.left.accepts(q) || self.right.accepts(q)
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let side = self
            .accepting_side(q)
            .ok_or_else(|| SemError::BadQuery("neither side accepts".to_string()))?;
        let active = self.side(side).init(q)?;
        Ok(LtsState::Linked(Box::new(LinkedState { active_side: side, active, pending: Vec::new() })))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::Linked(ls) = s else {
            return Mode::Stuck("not a linked state".to_string());
        };
        match self.side(ls.active_side).mode(&ls.active) {
            Mode::Step => Mode::Step,
            Mode::External(q) => {
                if self.accepting_side(&q).is_some() {
                    Mode::Step // internal control transfer
                } else {
                    Mode::External(q)
                }
            }
            Mode::Final(r) => {
                if ls.pending.is_empty() {
                    Mode::Final(r)
                } else {
                    Mode::Step // internal return
                }
            }
            Mode::Stuck(msg) => Mode::Stuck(msg),
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::Linked(ls) = s else {
            return Err(SemError::Stuck("not a linked state".to_string()));
        };
        let mut ls = ls.clone();
        match self.side(ls.active_side).mode(&ls.active) {
            Mode::Step => {
                ls.active = self.side(ls.active_side).step(&ls.active)?;
            }
            Mode::External(q) => {
                let to = self.accepting_side(&q).ok_or_else(|| {
                    SemError::Stuck("external query escapes the composite".to_string())
                })?;
                let callee = self.side(to).init(&q)?;
                ls.pending.push((ls.active_side, ls.active));
                ls.active_side = to;
                ls.active = callee;
            }
            Mode::Final(r) => {
                let (side, suspended) = ls
                    .pending
                    .pop()
                    .ok_or_else(|| SemError::Stuck("nothing to return to".to_string()))?;
                ls.active = self.side(side).resume(&suspended, &r)?;
                ls.active_side = side;
            }
            Mode::Stuck(msg) => return Err(SemError::Stuck(msg)),
        }
        Ok(LtsState::Linked(ls))
    }

    fn resume(&self, s: &LtsState, r: &Reply) -> Result<LtsState, SemError> {
        let LtsState::Linked(ls) = s else {
            return Err(SemError::Stuck("not a linked state".to_string()));
        };
        let mut ls = ls.clone();
        ls.active = self.side(ls.active_side).resume(&ls.active, r)?;
        Ok(LtsState::Linked(ls))
    }
}

/// Boundary events of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    IncomingQuery(Query),
    OutgoingQuery(Query),
    OutgoingReply(Reply),
    IncomingReply(Reply),
}

impl TraceEvent {
    pub fn to_json(&self) -> Json {
        let (ev, payload) = match self {
            TraceEvent::IncomingQuery(q) => ("iq", query_to_json(q)),
            TraceEvent::OutgoingQuery(q) => ("oq", query_to_json(q)),
            TraceEvent::OutgoingReply(r) => ("or", reply_to_json(r)),
            TraceEvent::IncomingReply(r) => ("ir", reply_to_json(r)),
        };
        json!({ "ev": ev, "payload": payload })
    }
}

pub fn query_to_json(q: &Query) -> Json {
    match q {
        Query::C(q) => json!({
            "iface": "C",
            "vf": value_to_json(&q.vf),
            "sg": q.sg.to_string(),
            "args": q.args.iter().map(value_to_json).collect::<Vec<_>>(),
            "mem": memory_to_json(&q.mem),
        }),
        Query::Asm(q) => json!({
            "iface": "Asm",
            "rs": ALL_REGS
                .iter()
                .map(|r| (r.name().to_string(), value_to_json(&q.rs.get(*r))))
                .collect::<serde_json::Map<_, _>>(),
            "mem": memory_to_json(&q.mem),
        }),
    }
}

pub fn reply_to_json(r: &Reply) -> Json {
    match r {
        Reply::C(r) => json!({
            "iface": "C",
            "res": value_to_json(&r.res),
            "mem": memory_to_json(&r.mem),
        }),
        Reply::Asm(r) => json!({
            "iface": "Asm",
            "rs": ALL_REGS
                .iter()
                .map(|reg| (reg.name().to_string(), value_to_json(&r.rs.get(*reg))))
                .collect::<serde_json::Map<_, _>>(),
            "mem": memory_to_json(&r.mem),
        }),
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn final_reply(&self) -> Option<&Reply> {
        self.events.iter().rev().find_map(|e| match e {
            TraceEvent::IncomingReply(r) => Some(r),
            _ => None,
        })
    }

    pub fn outgoing_queries(&self) -> impl Iterator<Item = &Query> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::OutgoingQuery(q) => Some(q),
            _ => None,
        })
    }

    pub fn to_json_lines(&self) -> String {
        self.events
            .iter()
            .map(|e| e.to_json().to_string())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone)]
pub enum RunError {
    NotAccepted,
    Stuck(String),
    FuelExhausted,
    Env(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::NotAccepted => write!(f, "query not accepted"),
            RunError::Stuck(s) => write!(f, "stuck: {s}"),
            RunError::FuelExhausted => write!(f, "fuel exhausted"),
            RunError::Env(s) => write!(f, "environment error: {s}"),
        }
    }
}

impl std::error::Error for RunError {}

/// Deterministic environment: replies are a function of the outgoing query
/// and the boundary history so far.
pub trait EnvStrategy {
    fn reply(&mut self, q: &Query, history: &[TraceEvent]) -> Result<Reply, String>;
}

/// Drive an LTS from an incoming query to its final reply, consulting the
/// environment at external calls. Each internal step costs one unit of
/// fuel.
pub fn run_trace(
    lts: &dyn OpenLts,
    q: &Query,
    env: &mut dyn EnvStrategy,
    fuel: usize,
) -> Result<Trace, (RunError, Trace)> {
    let mut trace = Trace::default();
    if !lts.accepts(q) {
        return Err((RunError::NotAccepted, trace));
    }
    trace.events.push(TraceEvent::IncomingQuery(q.clone()));
    let mut state = match lts.init(q) {
        Ok(s) => s,
        Err(e) => return Err((RunError::Stuck(e.to_string()), trace)),
    };
    let mut fuel = fuel;
    loop {
        match lts.mode(&state) {
            Mode::Step => {
                if fuel == 0 {
                    return Err((RunError::FuelExhausted, trace));
                }
                fuel -= 1;
                state = match lts.step(&state) {
                    Ok(s) => s,
                    Err(e) => return Err((RunError::Stuck(e.to_string()), trace)),
                };
            }
            Mode::External(oq) => {
                trace.events.push(TraceEvent::OutgoingQuery(oq.clone()));
                let r = match env.reply(&oq, &trace.events) {
                    Ok(r) => r,
                    Err(e) => return Err((RunError::Env(e), trace)),
                };
                trace.events.push(TraceEvent::OutgoingReply(r.clone()));
                state = match lts.resume(&state, &r) {
                    Ok(s) => s,
                    Err(e) => return Err((RunError::Stuck(e.to_string()), trace)),
                };
            }
            Mode::Final(r) => {
                trace.events.push(TraceEvent::IncomingReply(r));
                return Ok(trace);
            }
            Mode::Stuck(msg) => return Err((RunError::Stuck(msg), trace)),
        }
    }
}

/// How a value looks through the observable projection: scalars survive,
/// pointers into global blocks become symbolic, other pointers collapse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObsValue {
    Undef,
    Int(i64),
    Global(String, i64),
    Dyn,
}

/// An event through the projection: a kind tag, the projected values and
/// the observable global cells.
type ObsEvent = (u8, Vec<ObsValue>, Vec<(String, Vec<ObsValue>)>);

/// Projects boundary events onto observables: symbolized values plus the
/// contents of a fixed set of named global cells.
#[derive(Debug, Clone)]
pub struct ObservableProjection {
    pub se: SymbolTable,
    pub symbols: Vec<String>,
}

impl ObservableProjection {
    pub fn new(se: &SymbolTable, symbols: &[&str]) -> ObservableProjection {
        ObservableProjection {
            se: se.clone(),
            symbols: symbols.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn value(&self, v: &Value) -> ObsValue {
        match v {
            Value::Undef => ObsValue::Undef,
            Value::Int { v } => ObsValue::Int(*v),
            Value::Ptr { b, o } => match self.se.name_of(*b) {
                Some(n) => ObsValue::Global(n.to_string(), *o),
                None => ObsValue::Dyn,
            },
        }
    }

    pub fn memory(&self, m: &MemoryState) -> Vec<(String, Vec<ObsValue>)> {
        self.symbols
            .iter()
            .filter_map(|name| {
                let info = self.se.lookup(name)?;
                let len = info.init.len().max(1);
                let vals = (0..len)
                    .map(|k| self.value(&m.value_at(info.block, 8 * k as i64)))
                    .collect();
                Some((name.clone(), vals))
            })
            .collect()
    }

    fn event(&self, e: &TraceEvent) -> ObsEvent {
        match e {
            TraceEvent::IncomingQuery(q) | TraceEvent::OutgoingQuery(q) => {
                let tag = if matches!(e, TraceEvent::IncomingQuery(_)) { 0 } else { 1 };
                let mut vals = vec![self.value(&q.target())];
                match q {
                    Query::C(q) => vals.extend(q.args.iter().map(|v| self.value(v))),
                    Query::Asm(q) => {
                        vals.push(self.value(&q.rs.get(Reg::Rdi)));
                        vals.push(self.value(&q.rs.get(Reg::Rsi)));
                    }
                }
                (tag, vals, self.memory(q.mem()))
            }
            TraceEvent::OutgoingReply(r) | TraceEvent::IncomingReply(r) => {
                let tag = if matches!(e, TraceEvent::OutgoingReply(_)) { 2 } else { 3 };
                let vals = match r {
                    Reply::C(r) => vec![self.value(&r.res)],
                    Reply::Asm(r) => vec![self.value(&r.rs.get(Reg::Rax))],
                };
                (tag, vals, self.memory(r.mem()))
            }
        }
    }
}

/// Structural equality of two traces up to the observable projection.
pub fn trace_equal(t1: &Trace, t2: &Trace, proj: &ObservableProjection) -> bool {
    if t1.events.len() != t2.events.len() {
        return false;
    }
    t1.events
        .iter()
        .zip(&t2.events)
        .all(|(a, b)| proj.event(a) == proj.event(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_table_assigns_sorted_blocks() {
        let se = SymbolTable::build(&[
            SymDecl::var("result", false, vec![Value::int(0)]),
            SymDecl::func("encrypt"),
            SymDecl::var("key", true, vec![Value::int(42)]),
        ])
        .unwrap();
        assert_eq!(se.block_of("encrypt"), Some(1));
        assert_eq!(se.block_of("key"), Some(2));
        assert_eq!(se.block_of("result"), Some(3));
        assert_eq!(se.name_of(2), Some("key"));
    }

    #[test]
    fn duplicate_definitions_rejected() {
        let err = SymbolTable::build(&[SymDecl::func("f"), SymDecl::func("f")]);
        assert!(matches!(err, Err(LinkError::Duplicate(_))));
        let ok = SymbolTable::build(&[SymDecl::extern_func("f"), SymDecl::func("f")]);
        assert!(ok.is_ok());
    }

    #[test]
    fn initial_memory_and_ro_valid() {
        let se = SymbolTable::build(&[
            SymDecl::var("key", true, vec![Value::int(42)]),
            SymDecl::var("result", false, vec![Value::int(0)]),
        ])
        .unwrap();
        let m = se.initial_memory();
        assert!(se.ro_valid(&m));
        let b = se.block_of("key").unwrap();
        assert_eq!(m.value_at(b, 0), Value::int(42));
        // A forged key value breaks validity.
        let mut bad = m.clone();
        bad.blocks.get_mut(&b).unwrap().cells.insert(0, Value::int(41));
        assert!(!se.ro_valid(&bad));
        // Writable result does not constrain validity.
        let rb = se.block_of("result").unwrap();
        let ok = m.store(rb, 0, Value::int(7)).unwrap();
        assert!(se.ro_valid(&ok));
    }
}
