//! Abstract memory slot inference.
//!
//! A transient slot is the set of program points at which the free memory
//! pointer has been read since it was last pushed forward. The analysis
//! tracks the set of such sets at every program point; the slots that are
//! eventually made permanent (or are live at a halting instruction) form
//! the global table of allocated abstract slots.

use crate::asm::FmpAccess;
use crate::cfg::{Cfg, ProgramPoint};
use crate::fixpoint::{self, Domain, InstrCtx, Solution, SolveLimits, SolveOrder};
use std::collections::{BTreeMap, BTreeSet};

pub type PointSet = BTreeSet<ProgramPoint>;

/// Identifier of an allocated abstract slot; rendered as `s0`, `s1`, ...
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotId(pub u32);

impl std::fmt::Display for SlotId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl std::fmt::Debug for SlotId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self}")
    }
}

/// The per-program-point abstract state: every inner set is one transient
/// slot's accumulated free-memory-pointer reads. The initial state is the
/// singleton containing the empty set.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SlotState {
    pub open: BTreeSet<PointSet>,
}

impl SlotState {
    pub fn initial() -> Self {
        let mut open = BTreeSet::new();
        open.insert(PointSet::new());
        SlotState { open }
    }
}

/// True for the instructions that make transient slots permanent: a fused
/// `MSTORE 0x40`, or anything that ends execution (RETURN, REVERT, STOP,
/// SELFDESTRUCT, and INVALID which aborts like REVERT).
pub fn closes_slots(fused: Option<FmpAccess>, instr: &crate::asm::Instruction) -> bool {
    fused == Some(FmpAccess::Store) || instr.is_halt()
}

/// The three-case transfer function: a fused `MLOAD 0x40` extends every
/// transient slot with the current point, a closing instruction resets the
/// state, anything else passes it through.
pub fn slot_transfer(ctx: &InstrCtx<'_>, state: &SlotState) -> SlotState {
    if ctx.fused == Some(FmpAccess::Load) {
        let open = state
            .open
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.insert(ctx.pp);
                s
            })
            .collect();
        SlotState { open }
    } else if closes_slots(ctx.fused, ctx.instr) {
        SlotState::initial()
    } else {
        state.clone()
    }
}

pub struct SlotDomain;

impl Domain for SlotDomain {
    type Value = SlotState;

    fn bottom(&self) -> SlotState {
        SlotState::initial()
    }

    fn join(&self, a: &SlotState, b: &SlotState) -> SlotState {
        SlotState { open: a.open.union(&b.open).cloned().collect() }
    }

    fn leq(&self, a: &SlotState, b: &SlotState) -> bool {
        a.open.is_subset(&b.open)
    }

    fn transfer(&self, ctx: &InstrCtx<'_>, state: &SlotState) -> SlotState {
        slot_transfer(ctx, state)
    }
}

pub fn run_slot_analysis(cfg: &Cfg) -> Result<Solution<SlotState>, fixpoint::SolveError> {
    fixpoint::solve(cfg, &SlotDomain)
}

pub fn run_slot_analysis_with(
    cfg: &Cfg,
    order: SolveOrder,
    limits: &SolveLimits,
) -> Result<Solution<SlotState>, fixpoint::SolveError> {
    fixpoint::solve_with(cfg, &SlotDomain, order, limits)
}

/// The allocated abstract slots and the point -> ids reverse index.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AbstractSlotTable {
    slots: Vec<PointSet>,
    index: BTreeMap<ProgramPoint, BTreeSet<SlotId>>,
}

impl AbstractSlotTable {
    /// Build a table from explicit point sets (test support).
    pub fn from_sets(sets: Vec<PointSet>) -> Self {
        let mut t = AbstractSlotTable::default();
        for s in sets {
            t.add(s);
        }
        t
    }

    fn add(&mut self, s: PointSet) {
        if s.is_empty() || self.slots.contains(&s) {
            return;
        }
        let id = SlotId(self.slots.len() as u32);
        for &pp in &s {
            self.index.entry(pp).or_default().insert(id);
        }
        self.slots.push(s);
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn points(&self, id: SlotId) -> &PointSet {
        &self.slots[id.0 as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (SlotId, &PointSet)> {
        self.slots.iter().enumerate().map(|(i, s)| (SlotId(i as u32), s))
    }

    /// Ids of the slots whose point set contains `pp`.
    pub fn get_slots(&self, pp: ProgramPoint) -> BTreeSet<SlotId> {
        self.index.get(&pp).cloned().unwrap_or_default()
    }

    /// The id of an exact point set, if allocated.
    pub fn id_of(&self, points: &PointSet) -> Option<SlotId> {
        self.slots.iter().position(|s| s == points).map(|i| SlotId(i as u32))
    }

    pub fn sets(&self) -> BTreeSet<PointSet> {
        self.slots.iter().cloned().collect()
    }
}

/// Collect the allocated abstract slots: the union, over every point whose
/// instruction closes transient slots, of the inner sets live just before
/// it. Empty sets denote "no transient slot" and are discarded. Ids are
/// assigned in lexicographic order of the point sets, which is
/// deterministic across runs.
pub fn collect_slots(sol: &Solution<SlotState>, cfg: &Cfg) -> AbstractSlotTable {
    let mut sets: BTreeSet<PointSet> = BTreeSet::new();
    for node in &cfg.nodes {
        for at in &node.instrs {
            let pp = ProgramPoint::new(at.pc, node.clone);
            let instr = &cfg.dis().instrs[at.dis_idx as usize];
            if !closes_slots(at.fused, instr) {
                continue;
            }
            if let Some(state) = sol.pre(pp) {
                for s in &state.open {
                    if !s.is_empty() {
                        sets.insert(s.clone());
                    }
                }
            }
        }
    }
    let mut table = AbstractSlotTable::default();
    for s in sets {
        table.add(s);
    }
    table
}
