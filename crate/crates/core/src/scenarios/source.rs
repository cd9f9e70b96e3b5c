//! Source-level refinement matchers (spec against linked C-level
//! semantics), the compressor that re-expresses a composed pipeline
//! relation at the direct convention, and the matcher combinator for
//! horizontal composition of linked systems.

use crate::conv::simcheck::PassMatcher;
use crate::conv::{ChainInstance, ConvAtom, ConvWorld, Level, ReplyWitness};
use crate::inject::{compose_inj, mem_inj_check, Meminj};
use crate::kmr::InjpWorld;
use crate::lang::minic::{CControl, CState};
use crate::mem::BlockId;
use crate::sem::{LtsState, Mode, Query, Reply, SymbolTable};
use crate::specs::{ServerState, SpecState, SumAsmState, SumCState};

fn bridging_world(inst: &ChainInstance) -> Result<InjpWorld, String> {
    inst.worlds
        .iter()
        .find_map(|w| match w {
            ConvWorld::Kmr(_, w) => Some(w.clone()),
            ConvWorld::CAinjp { w, .. } => Some(w.clone()),
            _ => None,
        })
        .ok_or_else(|| "incoming convention carries no injection world".to_string())
}

fn witness_for(atoms: &[ConvAtom], world: InjpWorld) -> Vec<ReplyWitness> {
    atoms
        .iter()
        .map(|a| match a {
            ConvAtom::Kmr(..) => ReplyWitness::Kmr(world.clone()),
            ConvAtom::CAinjp => ReplyWitness::CAinjp(world.clone()),
            _ => ReplyWitness::Trivial,
        })
        .collect()
}

fn c_outgoing_instance(
    atoms: &[ConvAtom],
    se: &SymbolTable,
    world: InjpWorld,
    q1: &Query,
    q2: &Query,
) -> Result<ChainInstance, String> {
    let sg = match q1 {
        Query::C(q) => q.sg.clone(),
        _ => return Err("expected a C query".to_string()),
    };
    let worlds = atoms
        .iter()
        .map(|a| match a {
            ConvAtom::Ro => Ok(ConvWorld::Ro { se: se.clone(), mem: q1.mem().clone() }),
            ConvAtom::Wt => Ok(ConvWorld::Wt(sg.clone())),
            ConvAtom::Kmr(Level::C, tag) => Ok(ConvWorld::Kmr(*tag, world.clone())),
            other => Err(format!("unsupported outgoing atom {other}")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let queries = crate::conv::synthesize_query_chain(atoms, q1, q2)?;
    Ok(ChainInstance { atoms: atoms.to_vec(), worlds, queries })
}

/// Shared skeleton of the C-level spec matchers: phase checks are supplied
/// per spec; injection and boundary bookkeeping is common.
pub struct CLevelSpecMatcher {
    pub se: SymbolTable,
    pub atoms: Vec<ConvAtom>,
    pub j_env: Meminj,
    /// Pairs of (spec block, implementation block) for blocks both sides
    /// allocate, discovered at phase checks.
    pub pairs: Vec<(BlockId, BlockId)>,
    pub relate: RelateFn,
}

pub type RelateFn = fn(&mut CLevelSpecMatcher, &LtsState, &LtsState) -> Result<(), String>;

impl CLevelSpecMatcher {
    pub fn with_pairs(&self) -> Meminj {
        let mut j = self.j_env.clone();
        for &(a, b) in &self.pairs {
            j.insert(a, (b, 0));
        }
        j
    }

    pub fn mem_related(
        &self,
        m1: &crate::mem::MemoryState,
        m2: &crate::mem::MemoryState,
    ) -> Result<(), String> {
        let inj = mem_inj_check(&self.with_pairs(), m1, m2);
        if inj.ok() {
            Ok(())
        } else {
            Err(format!("memories unrelated: {inj}"))
        }
    }
}

impl PassMatcher for CLevelSpecMatcher {
    fn init(&mut self, inst: &ChainInstance, _s1: &LtsState, _s2: &LtsState) -> Result<(), String> {
        self.j_env = bridging_world(inst)?.j;
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        (self.relate)(self, s1, s2)
    }

    fn outgoing(
        &mut self,
        _s1: &LtsState,
        _s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let world = InjpWorld::new(self.with_pairs(), q1.mem().clone(), q2.mem().clone());
        c_outgoing_instance(&self.atoms, &self.se, world, q1, q2)
    }

    fn after_external(
        &mut self,
        evolved: &[InjpWorld],
        _replies: &[Reply],
        _s1: &LtsState,
        _s2: &LtsState,
    ) -> Result<(), String> {
        if let Some(w) = evolved.first() {
            self.j_env = w.j.clone();
        }
        Ok(())
    }

    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String> {
        let world = InjpWorld::new(self.with_pairs(), r1.mem().clone(), r2.mem().clone());
        let replies = crate::conv::synthesize_reply_chain(&self.atoms, r1, r2)?;
        Ok((witness_for(&self.atoms, world), replies))
    }
}

fn linked_parts(s: &LtsState) -> Result<(usize, &LtsState, usize), String> {
    let LtsState::Linked(ls) = s else {
        return Err("expected a linked state".to_string());
    };
    Ok((ls.active_side, &ls.active, ls.pending.len()))
}

fn running_minic(s: &LtsState) -> Option<&CState> {
    match s {
        LtsState::MiniC(c) => Some(c),
        _ => None,
    }
}

/// The client/server top spec against the linked C-level composition of
/// the client module and the server spec.
pub fn source_cs_matcher(se: &SymbolTable, atoms: &[ConvAtom]) -> CLevelSpecMatcher {
    fn relate(m: &mut CLevelSpecMatcher, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        use crate::specs::TopCsState as T;
        let LtsState::Spec(SpecState::TopCs(st)) = s1 else {
            return Err("expected the top-level spec".to_string());
        };
        let (side, active, _) = linked_parts(s2)?;
        match st {
            T::Callr { i, mem } => {
                let Some(c) = running_minic(active) else {
                    return Err("client not active".to_string());
                };
                if side != 0
                    || c.frames.last().map(|f| (f.func.as_str(), f.pc)) != Some(("request", 0))
                {
                    return Err("not at the request entry".to_string());
                }
                // The argument landed in the parameter's block.
                let f = c.frames.last().unwrap();
                if let Some(&b) = f.local_blocks.get("i") {
                    if c.mem.value_at(b, 0) != crate::mem::Value::int(*i) {
                        return Err("argument value differs".to_string());
                    }
                }
                m.mem_related(mem, &c.mem)
            }
            T::Calle { i, mem, .. } => {
                let LtsState::Spec(SpecState::Server(ServerState::Calle {
                    i: i2, mem: m2, ..
                })) = active
                else {
                    return Err("server spec not active at its entry".to_string());
                };
                if side != 1 || i2 != i {
                    return Err("server entered with a different argument".to_string());
                }
                m.mem_related(mem, m2)
            }
            T::Callp { sp, mem, .. } => {
                // The client runs process; the server spec is suspended
                // and holds the implementation-side frame.
                let Some(c) = running_minic(active) else {
                    return Err("client not active".to_string());
                };
                if side != 0
                    || c.frames.last().map(|f| (f.func.as_str(), f.pc)) != Some(("process", 0))
                {
                    return Err("not at the process entry".to_string());
                }
                let LtsState::Linked(ls) = s2 else { unreachable!() };
                let sp_impl = ls.pending.iter().rev().find_map(|(_, st)| match st {
                    LtsState::Spec(SpecState::Server(ServerState::Callp { sp, .. })) => {
                        Some(*sp)
                    }
                    _ => None,
                });
                let Some(sp_impl) = sp_impl else {
                    return Err("server spec frame not found".to_string());
                };
                if !m.pairs.iter().any(|&(a, _)| a == *sp) {
                    m.pairs.push((*sp, sp_impl));
                }
                m.mem_related(mem, &c.mem)
            }
            T::Return { mem, .. } => {
                let Some(c) = running_minic(active) else {
                    return Err("client not active".to_string());
                };
                m.mem_related(mem, &c.mem)
            }
        }
    }
    CLevelSpecMatcher {
        se: se.clone(),
        atoms: atoms.to_vec(),
        j_env: Meminj::empty(),
        pairs: Vec::new(),
        relate,
    }
}

/// The memoizing summation spec against the C module implementing it.
pub fn sum_c_matcher(se: &SymbolTable, atoms: &[ConvAtom]) -> CLevelSpecMatcher {
    fn relate(m: &mut CLevelSpecMatcher, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let LtsState::Spec(SpecState::SumC(st)) = s1 else {
            return Err("expected the summation spec".to_string());
        };
        let LtsState::MiniC(c) = s2 else {
            return Err("expected a C-level state".to_string());
        };
        match st {
            SumCState::Callf { mem, .. } => {
                if !matches!(c.control, CControl::Run)
                    || c.frames.last().map(|f| (f.func.as_str(), f.pc)) != Some(("f", 0))
                {
                    return Err("not at the entry".to_string());
                }
                m.mem_related(mem, &c.mem)
            }
            SumCState::Callg { mem, .. } => {
                if !matches!(c.control, CControl::AtExternal { .. }) {
                    return Err("implementation not at the external call".to_string());
                }
                m.mem_related(mem, &c.mem)
            }
            SumCState::Returng { mem, .. } | SumCState::Returnf { mem, .. } => {
                if !matches!(c.control, CControl::Run) {
                    return Err("implementation finished early".to_string());
                }
                m.mem_related(mem, &c.mem)
            }
        }
    }
    CLevelSpecMatcher {
        se: se.clone(),
        atoms: atoms.to_vec(),
        j_env: Meminj::empty(),
        pairs: Vec::new(),
        relate,
    }
}

/// The one-step summation spec against the linked pair of C-level specs.
pub fn sum_source_top_matcher(se: &SymbolTable, atoms: &[ConvAtom]) -> CLevelSpecMatcher {
    fn relate(m: &mut CLevelSpecMatcher, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        use crate::specs::SumTopState as T;
        let LtsState::Spec(SpecState::SumTop(st)) = s1 else {
            return Err("expected the top-level summation spec".to_string());
        };
        let (_, active, pending) = linked_parts(s2)?;
        match st {
            T::Callf { i, mem } => {
                let LtsState::Spec(SpecState::SumC(SumCState::Callf { i: i2, mem: m2 })) =
                    active
                else {
                    return Err("C spec not active at its entry".to_string());
                };
                if i2 != i || pending != 0 {
                    return Err("entered with a different argument".to_string());
                }
                m.mem_related(mem, m2)
            }
            T::Callg { i, mem } => {
                let LtsState::Spec(SpecState::SumAsm(SumAsmState::Callg { i: i2, mem: m2 })) =
                    active
                else {
                    return Err("machine spec not active at its entry".to_string());
                };
                if i2 != i || pending != 0 {
                    return Err("entered with a different argument".to_string());
                }
                m.mem_related(mem, m2)
            }
            T::Return { mem, .. } => {
                let m2 = match active {
                    LtsState::Spec(SpecState::SumC(SumCState::Returnf { mem, .. })) => mem,
                    LtsState::Spec(SpecState::SumAsm(SumAsmState::Returng { mem, .. })) => mem,
                    _ => return Err("no returning spec active".to_string()),
                };
                if pending != 0 {
                    return Err("pending frames remain".to_string());
                }
                m.mem_related(mem, m2)
            }
        }
    }
    CLevelSpecMatcher {
        se: se.clone(),
        atoms: atoms.to_vec(),
        j_env: Meminj::empty(),
        pairs: Vec::new(),
        relate,
    }
}

// ---------------------------------------------------------------------
// Direct-convention compression of a composed pipeline relation.
// ---------------------------------------------------------------------

/// Wraps the vertically paired pipeline matcher so the pair can be checked
/// at the direct convention: incoming direct worlds expand to the composed
/// chain, outgoing composed chains compress by composing their injections.
/// This is the executable counterpart of rewriting the composed conventions
/// into the direct one.
pub struct DirectPipelineMatcher {
    pub inner: Box<dyn PassMatcher>,
    pub se: SymbolTable,
    /// The composed chain the inner matcher expects.
    pub inner_atoms: Vec<ConvAtom>,
    pub direct_atoms: Vec<ConvAtom>,
    /// Pre-call worlds of the last outgoing chain, used to split the
    /// environment's evolution back onto the legs.
    last_out: Option<ChainInstance>,
}

impl DirectPipelineMatcher {
    pub fn new(
        inner: Box<dyn PassMatcher>,
        se: &SymbolTable,
        inner_atoms: Vec<ConvAtom>,
        direct_atoms: Vec<ConvAtom>,
    ) -> DirectPipelineMatcher {
        DirectPipelineMatcher {
            inner,
            se: se.clone(),
            inner_atoms,
            direct_atoms,
            last_out: None,
        }
    }
}

impl DirectPipelineMatcher {
    fn expand(&self, inst: &ChainInstance) -> Result<ChainInstance, String> {
        let world = bridging_world(inst)?;
        let q1 = inst.source_query().clone();
        let q2 = inst.target_query().clone();
        let (sg, rs) = match (&q1, &q2) {
            (Query::C(qc), Query::Asm(qa)) => (qc.sg.clone(), qa.rs.clone()),
            _ => return Err("expected a C query against a machine query".to_string()),
        };
        let id_world = || {
            let m = q1.mem().clone();
            InjpWorld::new(Meminj::identity_on(&m), m.clone(), m)
        };
        let mut worlds = Vec::new();
        let mut queries = vec![q1.clone()];
        for atom in &self.inner_atoms {
            match atom {
                ConvAtom::Ro => {
                    worlds.push(ConvWorld::Ro { se: self.se.clone(), mem: q1.mem().clone() });
                    queries.push(q1.clone());
                }
                ConvAtom::Wt => {
                    worlds.push(ConvWorld::Wt(sg.clone()));
                    queries.push(q1.clone());
                }
                ConvAtom::Kmr(Level::C, tag) => {
                    worlds.push(ConvWorld::Kmr(*tag, id_world()));
                    queries.push(q1.clone());
                }
                ConvAtom::CAinjp => {
                    worlds.push(ConvWorld::CAinjp {
                        w: world.clone(),
                        sg: sg.clone(),
                        rs: rs.clone(),
                    });
                    queries.push(q2.clone());
                }
                other => return Err(format!("cannot expand atom {other}")),
            }
        }
        Ok(ChainInstance { atoms: self.inner_atoms.clone(), worlds, queries })
    }

    fn compress(&self, inst: &ChainInstance) -> Result<ChainInstance, String> {
        // Compose every injection world left to right.
        let mut j: Option<Meminj> = None;
        let mut sg = None;
        let mut rs = None;
        for w in &inst.worlds {
            match w {
                ConvWorld::Kmr(_, w) => {
                    j = Some(match j {
                        None => w.j.clone(),
                        Some(prev) => compose_inj(&prev, &w.j),
                    });
                }
                ConvWorld::CAinjp { w, sg: s, rs: r } => {
                    j = Some(match j {
                        None => w.j.clone(),
                        Some(prev) => compose_inj(&prev, &w.j),
                    });
                    sg = Some(s.clone());
                    rs = Some(r.clone());
                }
                _ => {}
            }
        }
        let q1 = inst.source_query().clone();
        let q2 = inst.target_query().clone();
        let j = j.ok_or("no injection worlds to compose")?;
        let world = InjpWorld::new(j, q1.mem().clone(), q2.mem().clone());
        let sg = sg.ok_or("no direct-convention world in the chain")?;
        let rs = rs.ok_or("no register file in the chain")?;
        let worlds = self
            .direct_atoms
            .iter()
            .map(|a| match a {
                ConvAtom::Ro => Ok(ConvWorld::Ro { se: self.se.clone(), mem: q1.mem().clone() }),
                ConvAtom::Wt => Ok(ConvWorld::Wt(sg.clone())),
                ConvAtom::CAinjp => Ok(ConvWorld::CAinjp {
                    w: world.clone(),
                    sg: sg.clone(),
                    rs: rs.clone(),
                }),
                other => Err(format!("unsupported direct atom {other}")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let queries = crate::conv::synthesize_query_chain(&self.direct_atoms, &q1, &q2)?;
        Ok(ChainInstance { atoms: self.direct_atoms.clone(), worlds, queries })
    }
}

impl PassMatcher for DirectPipelineMatcher {
    fn init(&mut self, inst: &ChainInstance, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let expanded = self.expand(inst)?;
        self.inner.init(&expanded, s1, s2)
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        self.inner.related(s1, s2)
    }

    fn outgoing(
        &mut self,
        s1: &LtsState,
        s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let composed = self.inner.outgoing(s1, s2, q1, q2)?;
        self.last_out = Some(composed.clone());
        self.compress(&composed)
    }

    fn after_external(
        &mut self,
        evolved: &[InjpWorld],
        replies: &[Reply],
        s1: &LtsState,
        s2: &LtsState,
    ) -> Result<(), String> {
        // Split the direct evolution back onto the composed legs: each leg
        // keeps its own pre-call injection, the environment's fresh pairs
        // decompose as identities on the C legs and as the real pair on
        // the lowering leg, and the middles adopt the source reply.
        let Some(direct) = evolved.first() else {
            return Err("no evolved world".to_string());
        };
        let r1 = replies.first().ok_or("no replies")?;
        let r2 = replies.last().ok_or("no replies")?;
        let out = self.last_out.take().ok_or("no outgoing chain captured")?;
        let precall: Vec<&InjpWorld> = out
            .worlds
            .iter()
            .filter_map(|w| match w {
                ConvWorld::Kmr(_, w) => Some(w),
                ConvWorld::CAinjp { w, .. } => Some(w),
                _ => None,
            })
            .collect();
        let composed_precall = precall
            .iter()
            .map(|w| w.j.clone())
            .reduce(|a, b| compose_inj(&a, &b))
            .ok_or("no pre-call worlds")?;
        let fresh: Vec<(crate::mem::BlockId, (crate::mem::BlockId, i64))> = direct
            .j
            .iter()
            .filter(|(b, _)| composed_precall.get(*b).is_none())
            .collect();

        let mut inner_evolved = Vec::new();
        let mut inner_replies = vec![r1.clone()];
        let mut leg = 0usize;
        for atom in &self.inner_atoms {
            match atom {
                ConvAtom::Kmr(..) => {
                    let mut j = precall[leg].j.clone();
                    for &(bs, _) in &fresh {
                        j.insert(bs, (bs, 0));
                    }
                    inner_evolved.push(InjpWorld::new(
                        j,
                        direct.m1.clone(),
                        direct.m1.clone(),
                    ));
                    inner_replies.push(r1.clone());
                    leg += 1;
                }
                ConvAtom::CAinjp => {
                    let mut j = precall[leg].j.clone();
                    for &(bs, t) in &fresh {
                        j.insert(bs, t);
                    }
                    inner_evolved.push(InjpWorld::new(
                        j,
                        direct.m1.clone(),
                        direct.m2.clone(),
                    ));
                    inner_replies.push(r2.clone());
                    leg += 1;
                }
                _ => inner_replies.push(r1.clone()),
            }
        }
        self.inner.after_external(&inner_evolved, &inner_replies, s1, s2)
    }

    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String> {
        let (inner_witnesses, _) = self.inner.final_witness(r1, r2)?;
        // Compose the injections of the inner witnesses.
        let mut j: Option<Meminj> = None;
        for w in &inner_witnesses {
            if let ReplyWitness::Kmr(w) | ReplyWitness::CAinjp(w) = w {
                j = Some(match j {
                    None => w.j.clone(),
                    Some(prev) => compose_inj(&prev, &w.j),
                });
            }
        }
        let j = j.ok_or("no injection witnesses to compose")?;
        let world = InjpWorld::new(j, r1.mem().clone(), r2.mem().clone());
        let replies = crate::conv::synthesize_reply_chain(&self.direct_atoms, r1, r2)?;
        Ok((witness_for(&self.direct_atoms, world), replies))
    }
}

// ---------------------------------------------------------------------
// Horizontal composition.
// ---------------------------------------------------------------------

/// Composes matchers for two linked systems sharing one convention. Each
/// entry into a side gets a fresh matcher instance (modules may be
/// re-entered through callbacks and recursion), kept on a stack mirroring
/// the composites' pending frames. Transfers hand the captured boundary
/// instance to the callee's new matcher; returns check the junction
/// replies against the callee's incoming instance and feed the evolution
/// to the suspended caller.
pub struct HorizontalMatcher {
    factories: [Box<dyn Fn() -> Box<dyn PassMatcher>>; 2],
    stack: Vec<Incarnation>,
    captured_out: Option<ChainInstance>,
    fed_return: bool,
}

struct Incarnation {
    side: usize,
    matcher: Box<dyn PassMatcher>,
    inst: ChainInstance,
}

impl HorizontalMatcher {
    pub fn new(
        left: Box<dyn Fn() -> Box<dyn PassMatcher>>,
        right: Box<dyn Fn() -> Box<dyn PassMatcher>>,
    ) -> Self {
        HorizontalMatcher {
            factories: [left, right],
            stack: Vec::new(),
            captured_out: None,
            fed_return: false,
        }
    }

    fn top(&mut self) -> Result<&mut Incarnation, String> {
        self.stack.last_mut().ok_or_else(|| "no active incarnation".to_string())
    }
}

impl PassMatcher for HorizontalMatcher {
    fn init(&mut self, inst: &ChainInstance, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let (side1, a1, _) = linked_parts(s1)?;
        let (side2, a2, _) = linked_parts(s2)?;
        if side1 != side2 {
            return Err("the two compositions start on different sides".to_string());
        }
        let mut matcher = (self.factories[side1])();
        matcher.init(inst, a1, a2)?;
        self.stack.push(Incarnation { side: side1, matcher, inst: inst.clone() });
        Ok(())
    }

    fn related(&mut self, s1: &LtsState, s2: &LtsState) -> Result<(), String> {
        let (side1, a1, p1) = linked_parts(s1)?;
        let (side2, a2, p2) = linked_parts(s2)?;
        if side1 != side2 {
            return Err("active sides differ".to_string());
        }
        if p1 != p2 {
            return Err("pending depths differ".to_string());
        }
        // A transfer pushed a pending frame: enter a fresh incarnation of
        // the callee side with the captured boundary instance.
        if p1 + 1 == self.stack.len() + 1 {
            let inst = self
                .captured_out
                .take()
                .ok_or("transfer without a captured boundary")?;
            let mut matcher = (self.factories[side1])();
            matcher.init(&inst, a1, a2)?;
            self.stack.push(Incarnation { side: side1, matcher, inst });
            self.fed_return = false;
        }
        // Returns popped pending frames: drop finished incarnations.
        while p1 + 1 < self.stack.len() {
            self.stack.pop();
            self.fed_return = false;
        }
        let depth = self.stack.len();
        let top = self.top()?;
        if top.side != side1 {
            return Err(format!(
                "active side {side1} does not match the tracked incarnation {}",
                top.side
            ));
        }

        // Junction return point: the active children finished and a caller
        // waits. Verify the junction replies against the callee's incoming
        // instance and feed the evolution to the caller; with no caller the
        // composite is about to finish and the driver's final check takes
        // over.
        if let Some(r1) = child_reply(a1) {
            if depth == 1 {
                return Ok(());
            }
            if let Some(r2) = child_reply(a2) {
                if !self.fed_return {
                    let (witnesses, replies) = {
                        let top = self.top()?;
                        let (w, r) = top.matcher.final_witness(&r1, &r2)?;
                        let check = crate::conv::match_reply_chain(&top.inst, &w, &r);
                        if !check.ok() {
                            return Err(format!("junction replies unrelated: {check}"));
                        }
                        (w, r)
                    };
                    let evolved: Vec<InjpWorld> = witnesses
                        .iter()
                        .filter_map(|w| match w {
                            ReplyWitness::Kmr(w) | ReplyWitness::CAinjp(w) => Some(w.clone()),
                            _ => None,
                        })
                        .collect();
                    let caller = &mut self.stack[depth - 2];
                    caller.matcher.after_external(&evolved, &replies, a1, a2)?;
                    self.fed_return = true;
                }
                return Ok(());
            }
            // The target children are still unwinding; not aligned yet.
            return Err("target children have not finished the call".to_string());
        }

        let top = self.top()?;
        top.matcher.related(a1, a2)?;

        // Capture a boundary about to transfer inward.
        if let Some((q1, q2)) = child_queries(a1, a2) {
            let top = self.top()?;
            let inst = top.matcher.outgoing(a1, a2, &q1, &q2)?;
            let check = crate::conv::match_query_chain(&inst);
            if !check.ok() {
                return Err(format!("junction queries unrelated: {check}"));
            }
            self.captured_out = Some(inst);
        }
        Ok(())
    }

    fn outgoing(
        &mut self,
        s1: &LtsState,
        s2: &LtsState,
        q1: &Query,
        q2: &Query,
    ) -> Result<ChainInstance, String> {
        let (_, a1, _) = linked_parts(s1)?;
        let (_, a2, _) = linked_parts(s2)?;
        let top = self.top()?;
        top.matcher.outgoing(a1, a2, q1, q2)
    }

    fn after_external(
        &mut self,
        evolved: &[InjpWorld],
        replies: &[Reply],
        s1: &LtsState,
        s2: &LtsState,
    ) -> Result<(), String> {
        let (_, a1, _) = linked_parts(s1)?;
        let (_, a2, _) = linked_parts(s2)?;
        let top = self.top()?;
        top.matcher.after_external(evolved, replies, a1, a2)
    }

    fn final_witness(
        &mut self,
        r1: &Reply,
        r2: &Reply,
    ) -> Result<(Vec<ReplyWitness>, Vec<Reply>), String> {
        let bottom = self.stack.first_mut().ok_or("no active incarnation")?;
        bottom.matcher.final_witness(r1, r2)
    }
}

fn child_mode_hint(s: &LtsState) -> Mode {
    match s {
        LtsState::MiniC(c) => match &c.control {
            CControl::AtExternal { q, .. } => Mode::External(Query::C(q.clone())),
            _ => Mode::Step,
        },
        LtsState::MiniAsm(a) => match a.control {
            crate::lang::miniasm::AControl::AtExternal => Mode::External(Query::Asm(
                crate::sem::AQuery { rs: a.rs.clone(), mem: a.mem.clone() },
            )),
            _ => Mode::Step,
        },
        LtsState::Spec(SpecState::Server(ServerState::Callp { sp, vf, mem })) => {
            Mode::External(Query::C(crate::sem::CQuery {
                vf: *vf,
                sg: crate::sem::Signature::ptr_void(),
                args: vec![crate::mem::Value::ptr(*sp, 0)],
                mem: mem.clone(),
            }))
        }
        LtsState::Spec(SpecState::SumC(SumCState::Callg { vg, i, mem })) => {
            Mode::External(Query::C(crate::sem::CQuery {
                vf: *vg,
                sg: crate::sem::Signature::int_int(),
                args: vec![crate::mem::Value::int(i - 1)],
                mem: mem.clone(),
            }))
        }
        LtsState::Spec(SpecState::SumAsm(SumAsmState::Callf { vf, i, mem })) => {
            Mode::External(Query::C(crate::sem::CQuery {
                vf: *vf,
                sg: crate::sem::Signature::int_int(),
                args: vec![crate::mem::Value::int(i - 1)],
                mem: mem.clone(),
            }))
        }
        _ => Mode::Step,
    }
}

fn child_queries(a1: &LtsState, a2: &LtsState) -> Option<(Query, Query)> {
    match (child_mode_hint(a1), child_mode_hint(a2)) {
        (Mode::External(q1), Mode::External(q2)) => Some((q1, q2)),
        _ => None,
    }
}

fn child_reply(s: &LtsState) -> Option<Reply> {
    match s {
        LtsState::MiniC(c) => match &c.control {
            CControl::Done { res } => {
                Some(Reply::C(crate::sem::CReply { res: *res, mem: c.mem.clone() }))
            }
            _ => None,
        },
        LtsState::MiniAsm(a) => match a.control {
            crate::lang::miniasm::AControl::Done => Some(Reply::Asm(crate::sem::AReply {
                rs: a.rs.clone(),
                mem: a.mem.clone(),
            })),
            _ => None,
        },
        LtsState::Spec(SpecState::Server(ServerState::Rete { mem })) => {
            Some(Reply::C(crate::sem::CReply { res: crate::mem::Value::Undef, mem: mem.clone() }))
        }
        LtsState::Spec(SpecState::SumC(SumCState::Returnf { sum, mem })) => {
            Some(Reply::C(crate::sem::CReply {
                res: crate::mem::Value::int(*sum),
                mem: mem.clone(),
            }))
        }
        LtsState::Spec(SpecState::SumAsm(SumAsmState::Returng { res, mem })) => {
            Some(Reply::C(crate::sem::CReply {
                res: crate::mem::Value::int(*res),
                mem: mem.clone(),
            }))
        }
        _ => None,
    }
}
