//! Hand-coded specification systems: the big-step server spec, the
//! top-level client/server specs (single and multi-request), and the three
//! summation specs. Each follows its transition-set definition literally;
//! internal execution is big-step and interaction happens only at the
//! boundary.

use crate::mem::{BlockId, MemoryState, Value};
use crate::sem::{
    CQuery, CReply, IfaceKind, LtsState, Mode, OpenLts, Query, Reply, SemError, Signature,
    SymbolTable,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecState {
    Server(ServerState),
    TopCs(TopCsState),
    TopMr(TopMrState),
    SumAsm(SumAsmState),
    SumC(SumCState),
    SumTop(SumTopState),
}

fn stuck(msg: impl Into<String>) -> SemError {
    SemError::Stuck(msg.into())
}

fn int_of(v: Value, what: &str) -> Result<i64, SemError> {
    v.as_int().ok_or_else(|| stuck(format!("{what} is not an integer: {v}")))
}

// ---------------------------------------------------------------------
// Server spec: alloc a one-cell frame, store i XOR key, call back, free.
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerState {
    Calle { i: i64, vf: Value, mem: MemoryState },
    Callp { sp: BlockId, vf: Value, mem: MemoryState },
    Retp { sp: BlockId, mem: MemoryState },
    Rete { mem: MemoryState },
}

pub struct ServerSpec {
    se: SymbolTable,
}

impl ServerSpec {
    pub fn new(se: &SymbolTable) -> ServerSpec {
        ServerSpec { se: se.clone() }
    }

    fn encrypt_block(&self) -> BlockId {
        self.se.block_of("encrypt").expect("encrypt symbol")
    }

    fn key_block(&self) -> BlockId {
        self.se.block_of("key").expect("key symbol")
    }
}

impl OpenLts for ServerSpec {
    fn name(&self) -> String {
        "spec[server]".to_string()
    }

    fn incoming(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn outgoing(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        let Query::C(q) = q else { return false };
        q.vf == Value::ptr(self.encrypt_block(), 0)
            && q.sg == Signature::int_ptr_void()
            && q.args.len() == 2
            && q.args[0].as_int().is_some()
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let Query::C(q) = q else {
            return Err(SemError::BadQuery("expected a C query".to_string()));
        };
        if !self.accepts(&Query::C(q.clone())) {
            return Err(SemError::BadQuery("not a call to encrypt".to_string()));
        }
        let i = q.args[0].as_int().unwrap();
        Ok(LtsState::Spec(SpecState::Server(ServerState::Calle {
            i,
            vf: q.args[1],
            mem: q.mem.clone(),
        })))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::Spec(SpecState::Server(st)) = s else {
            return Mode::Stuck("not a server spec state".to_string());
        };
        match st {
            ServerState::Calle { .. } | ServerState::Retp { .. } => Mode::Step,
            ServerState::Callp { sp, vf, mem } => match vf {
                Value::Ptr { .. } => Mode::External(Query::C(CQuery {
                    vf: *vf,
                    sg: Signature::ptr_void(),
                    args: vec![Value::ptr(*sp, 0)],
                    mem: mem.clone(),
                })),
                other => Mode::Stuck(format!("callback is not a pointer: {other}")),
            },
            ServerState::Rete { mem } => {
                Mode::Final(Reply::C(CReply { res: Value::Undef, mem: mem.clone() }))
            }
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::Server(st)) = s else {
            return Err(stuck("not a server spec state"));
        };
        let next = match st {
            ServerState::Calle { i, vf, mem } => {
                let key = int_of(
                    mem.load(self.key_block(), 0).map_err(|e| stuck(e.to_string()))?,
                    "key",
                )?;
                let (mem, sp) = mem.alloc(0, 8).map_err(|e| stuck(e.to_string()))?;
                let mem =
                    mem.store(sp, 0, Value::int(i ^ key)).map_err(|e| stuck(e.to_string()))?;
                ServerState::Callp { sp, vf: *vf, mem }
            }
            ServerState::Retp { sp, mem } => {
                let mem = mem.free(*sp, 0, 8).map_err(|e| stuck(e.to_string()))?;
                ServerState::Rete { mem }
            }
            other => return Err(stuck(format!("no internal step in {other:?}"))),
        };
        Ok(LtsState::Spec(SpecState::Server(next)))
    }

    fn resume(&self, s: &LtsState, r: &Reply) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::Server(ServerState::Callp { sp, .. })) = s else {
            return Err(stuck("not waiting on the callback"));
        };
        let Reply::C(r) = r else {
            return Err(stuck("expected a C reply"));
        };
        Ok(LtsState::Spec(SpecState::Server(ServerState::Retp { sp: *sp, mem: r.mem.clone() })))
    }
}

// ---------------------------------------------------------------------
// Top-level client/server spec: request relays to encrypt which calls
// process; everything is internalized.
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopCsState {
    Callr { i: i64, mem: MemoryState },
    Calle { from_request: bool, i: i64, vf: Value, mem: MemoryState },
    Callp { free_frame: bool, rv: Option<i64>, sp: BlockId, off: i64, mem: MemoryState },
    Return { rv: Option<i64>, mem: MemoryState },
}

pub struct TopCsSpec {
    se: SymbolTable,
}

impl TopCsSpec {
    pub fn new(se: &SymbolTable) -> TopCsSpec {
        TopCsSpec { se: se.clone() }
    }

    fn block(&self, name: &str) -> BlockId {
        self.se.block_of(name).unwrap_or_else(|| panic!("missing symbol {name}"))
    }
}

impl OpenLts for TopCsSpec {
    fn name(&self) -> String {
        "spec[client-server]".to_string()
    }

    fn incoming(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn outgoing(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        let Query::C(q) = q else { return false };
        let request = Value::ptr(self.block("request"), 0);
        let encrypt = Value::ptr(self.block("encrypt"), 0);
        let process = Value::ptr(self.block("process"), 0);
        (q.vf == request
            && q.sg == Signature::int_int()
            && q.args.len() == 1
            && q.args[0].as_int().is_some())
            || (q.vf == encrypt
                && q.sg == Signature::int_ptr_void()
                && q.args.len() == 2
                && q.args[0].as_int().is_some())
            || (q.vf == process
                && q.sg == Signature::ptr_void()
                && q.args.len() == 1
                && q.args[0].as_ptr().is_some())
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let Query::C(q) = q else {
            return Err(SemError::BadQuery("expected a C query".to_string()));
        };
        let request = Value::ptr(self.block("request"), 0);
        let encrypt = Value::ptr(self.block("encrypt"), 0);
        let st = if q.vf == request {
            TopCsState::Callr { i: int_of(q.args[0], "argument")?, mem: q.mem.clone() }
        } else if q.vf == encrypt {
            TopCsState::Calle {
                from_request: false,
                i: int_of(q.args[0], "argument")?,
                vf: q.args[1],
                mem: q.mem.clone(),
            }
        } else {
            let (sp, off) = q.args[0].as_ptr().unwrap();
            TopCsState::Callp { free_frame: false, rv: None, sp, off, mem: q.mem.clone() }
        };
        Ok(LtsState::Spec(SpecState::TopCs(st)))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::Spec(SpecState::TopCs(st)) = s else {
            return Mode::Stuck("not a top-level spec state".to_string());
        };
        match st {
            TopCsState::Return { rv, mem } => {
                let res = match rv {
                    Some(i) => Value::int(*i),
                    None => Value::Undef,
                };
                Mode::Final(Reply::C(CReply { res, mem: mem.clone() }))
            }
            _ => Mode::Step,
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::TopCs(st)) = s else {
            return Err(stuck("not a top-level spec state"));
        };
        let next = match st {
            TopCsState::Callr { i, mem } => TopCsState::Calle {
                from_request: true,
                i: *i,
                vf: Value::ptr(self.block("process"), 0),
                mem: mem.clone(),
            },
            TopCsState::Calle { from_request, i, vf, mem } => {
                if *vf != Value::ptr(self.block("process"), 0) {
                    return Err(stuck(format!("unexpected callback {vf}")));
                }
                let key = int_of(
                    mem.load(self.block("key"), 0).map_err(|e| stuck(e.to_string()))?,
                    "key",
                )?;
                let (mem, sp) = mem.alloc(0, 8).map_err(|e| stuck(e.to_string()))?;
                let mem =
                    mem.store(sp, 0, Value::int(i ^ key)).map_err(|e| stuck(e.to_string()))?;
                TopCsState::Callp {
                    free_frame: true,
                    rv: if *from_request { Some(*i) } else { None },
                    sp,
                    off: 0,
                    mem,
                }
            }
            TopCsState::Callp { free_frame, rv, sp, off, mem } => {
                let v = mem.load(*sp, *off).map_err(|e| stuck(e.to_string()))?;
                let mem = mem
                    .store(self.block("result"), 0, v)
                    .map_err(|e| stuck(e.to_string()))?;
                let mem = if *free_frame {
                    mem.free(*sp, 0, 8).map_err(|e| stuck(e.to_string()))?
                } else {
                    mem
                };
                TopCsState::Return { rv: *rv, mem }
            }
            TopCsState::Return { .. } => return Err(stuck("no step at a return state")),
        };
        Ok(LtsState::Spec(SpecState::TopCs(next)))
    }

    fn resume(&self, _s: &LtsState, _r: &Reply) -> Result<LtsState, SemError> {
        Err(stuck("the top-level spec makes no external calls"))
    }
}

// ---------------------------------------------------------------------
// Multi-request top spec: request and encrypt call each other until the
// input array is exhausted; pending frames are freed on the way out.
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopMrState {
    Callr { r: Value, frames: Vec<BlockId>, mem: MemoryState },
    Calle { i: i64, frames: Vec<BlockId>, vf: Value, mem: MemoryState },
    Return { mem: MemoryState },
}

pub struct TopMrSpec {
    se: SymbolTable,
    n: i64,
}

impl TopMrSpec {
    pub fn new(se: &SymbolTable, n: i64) -> TopMrSpec {
        TopMrSpec { se: se.clone(), n }
    }

    fn block(&self, name: &str) -> BlockId {
        self.se.block_of(name).unwrap_or_else(|| panic!("missing symbol {name}"))
    }
}

impl OpenLts for TopMrSpec {
    fn name(&self) -> String {
        "spec[client-server-mr]".to_string()
    }

    fn incoming(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn outgoing(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        let Query::C(q) = q else { return false };
        let request = Value::ptr(self.block("request"), 0);
        let encrypt = Value::ptr(self.block("encrypt"), 0);
        (q.vf == request
            && q.sg == Signature::ptr_void()
            && q.args.len() == 1
            && q.args[0].as_ptr().is_some())
            || (q.vf == encrypt
                && q.sg == Signature::int_ptr_void()
                && q.args.len() == 2
                && q.args[0].as_int().is_some())
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let Query::C(q) = q else {
            return Err(SemError::BadQuery("expected a C query".to_string()));
        };
        let request = Value::ptr(self.block("request"), 0);
        let st = if q.vf == request {
            TopMrState::Callr { r: q.args[0], frames: Vec::new(), mem: q.mem.clone() }
        } else {
            TopMrState::Calle {
                i: int_of(q.args[0], "argument")?,
                frames: Vec::new(),
                vf: q.args[1],
                mem: q.mem.clone(),
            }
        };
        Ok(LtsState::Spec(SpecState::TopMr(st)))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::Spec(SpecState::TopMr(st)) = s else {
            return Mode::Stuck("not a multi-request spec state".to_string());
        };
        match st {
            TopMrState::Return { mem } => {
                Mode::Final(Reply::C(CReply { res: Value::Undef, mem: mem.clone() }))
            }
            _ => Mode::Step,
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::TopMr(st)) = s else {
            return Err(stuck("not a multi-request spec state"));
        };
        let b_i = self.block("i");
        let b_input = self.block("input");
        let b_result = self.block("result");
        let next = match st {
            TopMrState::Callr { r, frames, mem } => {
                let t = int_of(mem.load(b_i, 0).map_err(|e| stuck(e.to_string()))?, "i")?;
                let (rb, ro) = r
                    .as_ptr()
                    .ok_or_else(|| stuck(format!("request argument is not a pointer: {r}")))?;
                if t == 0 {
                    let v = mem.load(b_input, 0).map_err(|e| stuck(e.to_string()))?;
                    let mem =
                        mem.store(b_i, 0, Value::int(1)).map_err(|e| stuck(e.to_string()))?;
                    TopMrState::Calle {
                        i: int_of(v, "input[0]")?,
                        frames: frames.clone(),
                        vf: Value::ptr(self.block("request"), 0),
                        mem,
                    }
                } else if t < self.n {
                    let v = mem.load(rb, ro).map_err(|e| stuck(e.to_string()))?;
                    let mem = mem
                        .store(b_result, 8 * (t - 1), v)
                        .map_err(|e| stuck(e.to_string()))?;
                    let arg = mem.load(b_input, 8 * t).map_err(|e| stuck(e.to_string()))?;
                    let mem =
                        mem.store(b_i, 0, Value::int(t + 1)).map_err(|e| stuck(e.to_string()))?;
                    TopMrState::Calle {
                        i: int_of(arg, "input cell")?,
                        frames: frames.clone(),
                        vf: Value::ptr(self.block("request"), 0),
                        mem,
                    }
                } else {
                    let v = mem.load(rb, ro).map_err(|e| stuck(e.to_string()))?;
                    let mut mem = mem
                        .store(b_result, 8 * (t - 1), v)
                        .map_err(|e| stuck(e.to_string()))?;
                    for &f in frames {
                        mem = mem.free(f, 0, 8).map_err(|e| stuck(e.to_string()))?;
                    }
                    TopMrState::Return { mem }
                }
            }
            TopMrState::Calle { i, frames, vf, mem } => {
                if *vf != Value::ptr(self.block("request"), 0) {
                    return Err(stuck(format!("unexpected callback {vf}")));
                }
                let key = int_of(
                    mem.load(self.block("key"), 0).map_err(|e| stuck(e.to_string()))?,
                    "key",
                )?;
                let (mem, sp) = mem.alloc(0, 8).map_err(|e| stuck(e.to_string()))?;
                let mem =
                    mem.store(sp, 0, Value::int(i ^ key)).map_err(|e| stuck(e.to_string()))?;
                let mut frames = frames.clone();
                frames.push(sp);
                TopMrState::Callr { r: Value::ptr(sp, 0), frames, mem }
            }
            TopMrState::Return { .. } => return Err(stuck("no step at a return state")),
        };
        Ok(LtsState::Spec(SpecState::TopMr(next)))
    }

    fn resume(&self, _s: &LtsState, _r: &Reply) -> Result<LtsState, SemError> {
        Err(stuck("the multi-request spec makes no external calls"))
    }
}

// ---------------------------------------------------------------------
// Summation specs.
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SumAsmState {
    Callg { i: i64, mem: MemoryState },
    Callf { vf: Value, i: i64, mem: MemoryState },
    Returnf { i: i64, res: i64, mem: MemoryState },
    Returng { res: i64, mem: MemoryState },
}

/// Spec of the assembly summation module: `g` caches only the most recent
/// argument in `s[0], s[1]`.
pub struct SumAsmSpec {
    se: SymbolTable,
}

impl SumAsmSpec {
    pub fn new(se: &SymbolTable) -> SumAsmSpec {
        SumAsmSpec { se: se.clone() }
    }

    fn block(&self, name: &str) -> BlockId {
        self.se.block_of(name).unwrap_or_else(|| panic!("missing symbol {name}"))
    }
}

impl OpenLts for SumAsmSpec {
    fn name(&self) -> String {
        "spec[sum-asm]".to_string()
    }

    fn incoming(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn outgoing(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        let Query::C(q) = q else { return false };
        q.vf == Value::ptr(self.block("g"), 0)
            && q.sg == Signature::int_int()
            && q.args.len() == 1
            && q.args[0].as_int().is_some()
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let Query::C(q) = q else {
            return Err(SemError::BadQuery("expected a C query".to_string()));
        };
        if !self.accepts(&Query::C(q.clone())) {
            return Err(SemError::BadQuery("not a call to g".to_string()));
        }
        Ok(LtsState::Spec(SpecState::SumAsm(SumAsmState::Callg {
            i: q.args[0].as_int().unwrap(),
            mem: q.mem.clone(),
        })))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::Spec(SpecState::SumAsm(st)) = s else {
            return Mode::Stuck("not a sum-asm spec state".to_string());
        };
        match st {
            SumAsmState::Callg { .. } | SumAsmState::Returnf { .. } => Mode::Step,
            SumAsmState::Callf { vf, i, mem } => Mode::External(Query::C(CQuery {
                vf: *vf,
                sg: Signature::int_int(),
                args: vec![Value::int(i - 1)],
                mem: mem.clone(),
            })),
            SumAsmState::Returng { res, mem } => {
                Mode::Final(Reply::C(CReply { res: Value::int(*res), mem: mem.clone() }))
            }
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::SumAsm(st)) = s else {
            return Err(stuck("not a sum-asm spec state"));
        };
        let b_s = self.block("s");
        let next = match st {
            SumAsmState::Callg { i, mem } => {
                if *i == 0 {
                    SumAsmState::Returng { res: 0, mem: mem.clone() }
                } else {
                    let s0 =
                        int_of(mem.load(b_s, 0).map_err(|e| stuck(e.to_string()))?, "s[0]")?;
                    if *i == s0 {
                        let s1 =
                            int_of(mem.load(b_s, 8).map_err(|e| stuck(e.to_string()))?, "s[1]")?;
                        SumAsmState::Returng { res: s1, mem: mem.clone() }
                    } else {
                        SumAsmState::Callf {
                            vf: Value::ptr(self.block("f"), 0),
                            i: *i,
                            mem: mem.clone(),
                        }
                    }
                }
            }
            SumAsmState::Returnf { i, res, mem } => {
                let sum = i + res;
                let mem = mem
                    .store(b_s, 0, Value::int(*i))
                    .and_then(|m| m.store(b_s, 8, Value::int(sum)))
                    .map_err(|e| stuck(e.to_string()))?;
                SumAsmState::Returng { res: sum, mem }
            }
            other => return Err(stuck(format!("no internal step in {other:?}"))),
        };
        Ok(LtsState::Spec(SpecState::SumAsm(next)))
    }

    fn resume(&self, s: &LtsState, r: &Reply) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::SumAsm(SumAsmState::Callf { i, .. })) = s else {
            return Err(stuck("not waiting on f"));
        };
        let Reply::C(r) = r else {
            return Err(stuck("expected a C reply"));
        };
        Ok(LtsState::Spec(SpecState::SumAsm(SumAsmState::Returnf {
            i: *i,
            res: int_of(r.res, "reply of f")?,
            mem: r.mem.clone(),
        })))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SumCState {
    Callf { i: i64, mem: MemoryState },
    Callg { vg: Value, i: i64, mem: MemoryState },
    Returng { i: i64, sum: i64, mem: MemoryState },
    Returnf { sum: i64, mem: MemoryState },
}

/// Spec of the C summation module: `f` memoizes every argument.
pub struct SumCSpec {
    se: SymbolTable,
}

impl SumCSpec {
    pub fn new(se: &SymbolTable) -> SumCSpec {
        SumCSpec { se: se.clone() }
    }

    fn block(&self, name: &str) -> BlockId {
        self.se.block_of(name).unwrap_or_else(|| panic!("missing symbol {name}"))
    }
}

impl OpenLts for SumCSpec {
    fn name(&self) -> String {
        "spec[sum-c]".to_string()
    }

    fn incoming(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn outgoing(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        let Query::C(q) = q else { return false };
        q.vf == Value::ptr(self.block("f"), 0)
            && q.sg == Signature::int_int()
            && q.args.len() == 1
            && q.args[0].as_int().is_some()
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let Query::C(q) = q else {
            return Err(SemError::BadQuery("expected a C query".to_string()));
        };
        if !self.accepts(&Query::C(q.clone())) {
            return Err(SemError::BadQuery("not a call to f".to_string()));
        }
        Ok(LtsState::Spec(SpecState::SumC(SumCState::Callf {
            i: q.args[0].as_int().unwrap(),
            mem: q.mem.clone(),
        })))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::Spec(SpecState::SumC(st)) = s else {
            return Mode::Stuck("not a sum-c spec state".to_string());
        };
        match st {
            SumCState::Callf { .. } | SumCState::Returng { .. } => Mode::Step,
            SumCState::Callg { vg, i, mem } => Mode::External(Query::C(CQuery {
                vf: *vg,
                sg: Signature::int_int(),
                args: vec![Value::int(i - 1)],
                mem: mem.clone(),
            })),
            SumCState::Returnf { sum, mem } => {
                Mode::Final(Reply::C(CReply { res: Value::int(*sum), mem: mem.clone() }))
            }
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::SumC(st)) = s else {
            return Err(stuck("not a sum-c spec state"));
        };
        let b_m = self.block("memoized");
        let next = match st {
            SumCState::Callf { i, mem } => {
                if *i == 0 {
                    SumCState::Returnf { sum: 0, mem: mem.clone() }
                } else {
                    let c = int_of(
                        mem.load(b_m, 8 * i).map_err(|e| stuck(e.to_string()))?,
                        "memoized cell",
                    )?;
                    if c != 0 {
                        SumCState::Returnf { sum: c, mem: mem.clone() }
                    } else {
                        SumCState::Callg {
                            vg: Value::ptr(self.block("g"), 0),
                            i: *i,
                            mem: mem.clone(),
                        }
                    }
                }
            }
            SumCState::Returng { i, sum, mem } => {
                let total = sum + i;
                let mem = mem
                    .store(b_m, 8 * i, Value::int(total))
                    .map_err(|e| stuck(e.to_string()))?;
                SumCState::Returnf { sum: total, mem }
            }
            other => return Err(stuck(format!("no internal step in {other:?}"))),
        };
        Ok(LtsState::Spec(SpecState::SumC(next)))
    }

    fn resume(&self, s: &LtsState, r: &Reply) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::SumC(SumCState::Callg { i, .. })) = s else {
            return Err(stuck("not waiting on g"));
        };
        let Reply::C(r) = r else {
            return Err(stuck("expected a C reply"));
        };
        Ok(LtsState::Spec(SpecState::SumC(SumCState::Returng {
            i: *i,
            sum: int_of(r.res, "reply of g")?,
            mem: r.mem.clone(),
        })))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SumTopState {
    Callf { i: i64, mem: MemoryState },
    Callg { i: i64, mem: MemoryState },
    Return { res: i64, mem: MemoryState },
}

/// Top-level summation spec: one big step computing the sum with both
/// caches updated exactly as the mutual recursion would.
pub struct SumTopSpec {
    se: SymbolTable,
}

impl SumTopSpec {
    pub fn new(se: &SymbolTable) -> SumTopSpec {
        SumTopSpec { se: se.clone() }
    }

    fn block(&self, name: &str) -> BlockId {
        self.se.block_of(name).unwrap_or_else(|| panic!("missing symbol {name}"))
    }

    fn eval_f(&self, i: i64, mem: MemoryState) -> Result<(i64, MemoryState), SemError> {
        let b_m = self.block("memoized");
        if i == 0 {
            return Ok((0, mem));
        }
        let c = int_of(mem.load(b_m, 8 * i).map_err(|e| stuck(e.to_string()))?, "memoized")?;
        if c != 0 {
            return Ok((c, mem));
        }
        let (r, mem) = self.eval_g(i - 1, mem)?;
        let sum = r + i;
        let mem = mem.store(b_m, 8 * i, Value::int(sum)).map_err(|e| stuck(e.to_string()))?;
        Ok((sum, mem))
    }

    fn eval_g(&self, i: i64, mem: MemoryState) -> Result<(i64, MemoryState), SemError> {
        let b_s = self.block("s");
        if i == 0 {
            return Ok((0, mem));
        }
        let s0 = int_of(mem.load(b_s, 0).map_err(|e| stuck(e.to_string()))?, "s[0]")?;
        if i == s0 {
            let s1 = int_of(mem.load(b_s, 8).map_err(|e| stuck(e.to_string()))?, "s[1]")?;
            return Ok((s1, mem));
        }
        let (r, mem) = self.eval_f(i - 1, mem)?;
        let sum = r + i;
        let mem = mem
            .store(b_s, 0, Value::int(i))
            .and_then(|m| m.store(b_s, 8, Value::int(sum)))
            .map_err(|e| stuck(e.to_string()))?;
        Ok((sum, mem))
    }
}

impl OpenLts for SumTopSpec {
    fn name(&self) -> String {
        "spec[sum-top]".to_string()
    }

    fn incoming(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn outgoing(&self) -> IfaceKind {
        IfaceKind::C
    }

    fn se(&self) -> &SymbolTable {
        &self.se
    }

    fn accepts(&self, q: &Query) -> bool {
        let Query::C(q) = q else { return false };
        (q.vf == Value::ptr(self.block("f"), 0) || q.vf == Value::ptr(self.block("g"), 0))
            && q.sg == Signature::int_int()
            && q.args.len() == 1
            && q.args[0].as_int().is_some()
    }

    fn init(&self, q: &Query) -> Result<LtsState, SemError> {
        let Query::C(q) = q else {
            return Err(SemError::BadQuery("expected a C query".to_string()));
        };
        if !self.accepts(&Query::C(q.clone())) {
            return Err(SemError::BadQuery("not a call to f or g".to_string()));
        }
        let i = q.args[0].as_int().unwrap();
        let st = if q.vf == Value::ptr(self.block("f"), 0) {
            SumTopState::Callf { i, mem: q.mem.clone() }
        } else {
            SumTopState::Callg { i, mem: q.mem.clone() }
        };
        Ok(LtsState::Spec(SpecState::SumTop(st)))
    }

    fn mode(&self, s: &LtsState) -> Mode {
        let LtsState::Spec(SpecState::SumTop(st)) = s else {
            return Mode::Stuck("not a sum-top spec state".to_string());
        };
        match st {
            SumTopState::Return { res, mem } => {
                Mode::Final(Reply::C(CReply { res: Value::int(*res), mem: mem.clone() }))
            }
            _ => Mode::Step,
        }
    }

    fn step(&self, s: &LtsState) -> Result<LtsState, SemError> {
        let LtsState::Spec(SpecState::SumTop(st)) = s else {
            return Err(stuck("not a sum-top spec state"));
        };
        let next = match st {
            SumTopState::Callf { i, mem } => {
                let (res, mem) = self.eval_f(*i, mem.clone())?;
                SumTopState::Return { res, mem }
            }
            SumTopState::Callg { i, mem } => {
                let (res, mem) = self.eval_g(*i, mem.clone())?;
                SumTopState::Return { res, mem }
            }
            SumTopState::Return { .. } => return Err(stuck("no step at a return state")),
        };
        Ok(LtsState::Spec(SpecState::SumTop(next)))
    }

    fn resume(&self, _s: &LtsState, _r: &Reply) -> Result<LtsState, SemError> {
        Err(stuck("the top-level spec makes no external calls"))
    }
}

#[derive(Debug, Clone)]
pub struct UnknownSpec(pub String);

impl std::fmt::Display for UnknownSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown spec {:?}", self.0)
    }
}

impl std::error::Error for UnknownSpec {}

/// Construct a bundled spec by name over a symbol table that provides the
/// globals the spec reads.
pub fn build_spec(name: &str, se: &SymbolTable) -> Result<Box<dyn OpenLts>, UnknownSpec> {
    match name {
        "server" => Ok(Box::new(ServerSpec::new(se))),
        "client-server" => Ok(Box::new(TopCsSpec::new(se))),
        "client-server-mr" => Ok(Box::new(TopMrSpec::new(se, 10))),
        "sum-asm" => Ok(Box::new(SumAsmSpec::new(se))),
        "sum-c" => Ok(Box::new(SumCSpec::new(se))),
        "sum-top" => Ok(Box::new(SumTopSpec::new(se))),
        other => Err(UnknownSpec(other.to_string())),
    }
}
