//! Slot access analysis: propagates abstract-slot base references through
//! the operand stack and through memory (slot-to-slot pointers).
//!
//! The abstract state maps stack positions and slot ids to sets of slot
//! ids. Stack positions are 1-based from the bottom: the key of the
//! topmost element before executing an instruction equals the stack
//! height at that point (`Cfg::top`), so a fused `MLOAD 0x40` leaves its
//! result exactly at key `top(pp)`.

use crate::asm::FmpAccess;
use crate::cfg::Cfg;
use crate::fixpoint::{self, Domain, InstrCtx, Solution, SolveLimits, SolveOrder};
use crate::opcode::Opcode;
use crate::slot::{AbstractSlotTable, SlotId};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum AccessKey {
    /// 1-based stack position from the bottom.
    Stack(u32),
    /// A memory location inside an abstract slot.
    Slot(SlotId),
}

/// The mapping pi. Absent keys read as the empty set; empty sets are never
/// stored, which keeps equality and ordering canonical.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct AccessState {
    entries: BTreeMap<AccessKey, BTreeSet<SlotId>>,
}

static EMPTY: BTreeSet<SlotId> = BTreeSet::new();

impl AccessState {
    pub fn new() -> Self {
        AccessState::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (AccessKey, BTreeSet<SlotId>)>) -> Self {
        let mut s = AccessState::new();
        for (k, v) in entries {
            s.set(k, v);
        }
        s
    }

    pub fn get(&self, k: AccessKey) -> &BTreeSet<SlotId> {
        self.entries.get(&k).unwrap_or(&EMPTY)
    }

    pub fn stack(&self, pos: u32) -> &BTreeSet<SlotId> {
        self.get(AccessKey::Stack(pos))
    }

    pub fn slot(&self, id: SlotId) -> &BTreeSet<SlotId> {
        self.get(AccessKey::Slot(id))
    }

    fn set(&mut self, k: AccessKey, v: BTreeSet<SlotId>) {
        if v.is_empty() {
            self.entries.remove(&k);
        } else {
            self.entries.insert(k, v);
        }
    }

    fn remove(&mut self, k: AccessKey) -> BTreeSet<SlotId> {
        self.entries.remove(&k).unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AccessKey, &BTreeSet<SlotId>)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Keywise set union.
pub fn join_access(a: &AccessState, b: &AccessState) -> AccessState {
    let mut out = a.clone();
    for (k, v) in &b.entries {
        let merged: BTreeSet<SlotId> = out.get(*k).union(v).copied().collect();
        out.set(*k, merged);
    }
    out
}

/// True iff every entry of `a` is included in the matching entry of `b`.
pub fn leq_access(a: &AccessState, b: &AccessState) -> bool {
    a.entries.iter().all(|(k, v)| v.is_subset(b.get(*k)))
}

/// The transfer function. `t` is the stack height before the instruction;
/// consumed stack entries disappear, results carry no slots except for the
/// fused `MLOAD 0x40` (which produces its slot's baseref) and ADD/SUB
/// (base + offset arithmetic preserves the operands' slots).
pub fn access_transfer(
    ctx: &InstrCtx<'_>,
    state: &AccessState,
    table: &AbstractSlotTable,
) -> AccessState {
    let t = ctx.height;
    let op = ctx.instr.op;
    let mut out = state.clone();

    // (1) MLOAD 0x40: the result position holds the slots allocated here.
    if ctx.fused == Some(FmpAccess::Load) {
        debug_assert!(t >= 1);
        out.set(AccessKey::Stack(t), table.get_slots(ctx.pp));
        return out;
    }
    // Fused MSTORE 0x40 is the free-memory-pointer update, not a slot
    // write: it just consumes its two operands (case 6 below).
    if !ctx.instr.truncated && ctx.fused.is_none() {
        match op {
            // (2) MLOAD: dereference through slot keys.
            Opcode::MLOAD => {
                debug_assert!(t >= 1);
                let addr = out.remove(AccessKey::Stack(t));
                let mut loaded = BTreeSet::new();
                for s in addr {
                    loaded.extend(out.slot(s).iter().copied());
                }
                out.set(AccessKey::Stack(t), loaded);
                return out;
            }
            // (3) MSTORE: every slot the address may point to gains the
            // value's slots; both operands leave the stack.
            Opcode::MSTORE => {
                debug_assert!(t >= 2);
                let targets = out.remove(AccessKey::Stack(t));
                let value = out.remove(AccessKey::Stack(t - 1));
                for s in targets {
                    let merged: BTreeSet<SlotId> =
                        out.slot(s).union(&value).copied().collect();
                    out.set(AccessKey::Slot(s), merged);
                }
                return out;
            }
            _ => {}
        }
        // (4) SWAPi exchanges two entries.
        if let Some(i) = op.swap_depth() {
            let i = i as u32;
            debug_assert!(t > i);
            let a = out.remove(AccessKey::Stack(t));
            let b = out.remove(AccessKey::Stack(t - i));
            out.set(AccessKey::Stack(t), b);
            out.set(AccessKey::Stack(t - i), a);
            return out;
        }
        // (5) DUPi copies one entry to the new top.
        if let Some(i) = op.dup_depth() {
            let i = i as u32;
            debug_assert!(t >= i);
            let v = out.stack(t - i + 1).clone();
            out.set(AccessKey::Stack(t + 1), v);
            return out;
        }
    }
    // (6) otherwise: consumed operand entries disappear. ADD and SUB
    // compute baseref +/- offset, so their result keeps the operands'
    // slots; every other result carries nothing.
    let n = ctx.instr.pops() as u32;
    debug_assert!(t >= n, "stack underflow at {}: height {t}, needs {n}", ctx.pp);
    let keep = if matches!(op, Opcode::ADD | Opcode::SUB) && !ctx.instr.truncated {
        let mut u = out.stack(t).clone();
        u.extend(out.stack(t - 1).iter().copied());
        Some(u)
    } else {
        None
    };
    for x in (t - n + 1)..=t {
        out.remove(AccessKey::Stack(x));
    }
    if let Some(u) = keep {
        out.set(AccessKey::Stack(t - 1), u);
    }
    out
}

pub struct AccessDomain<'a> {
    pub table: &'a AbstractSlotTable,
}

impl Domain for AccessDomain<'_> {
    type Value = AccessState;

    fn bottom(&self) -> AccessState {
        AccessState::new()
    }

    fn join(&self, a: &AccessState, b: &AccessState) -> AccessState {
        join_access(a, b)
    }

    fn leq(&self, a: &AccessState, b: &AccessState) -> bool {
        leq_access(a, b)
    }

    fn transfer(&self, ctx: &InstrCtx<'_>, state: &AccessState) -> AccessState {
        access_transfer(ctx, state, self.table)
    }
}

pub fn run_access_analysis(
    cfg: &Cfg,
    table: &AbstractSlotTable,
) -> Result<Solution<AccessState>, fixpoint::SolveError> {
    fixpoint::solve(cfg, &AccessDomain { table })
}

pub fn run_access_analysis_with(
    cfg: &Cfg,
    table: &AbstractSlotTable,
    order: SolveOrder,
    limits: &SolveLimits,
) -> Result<Solution<AccessState>, fixpoint::SolveError> {
    fixpoint::solve_with(cfg, &AccessDomain { table }, order, limits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::Instruction;
    use crate::cfg::ProgramPoint;
    use crate::slot::PointSet;

    fn sid(n: u32) -> SlotId {
        SlotId(n)
    }

    fn ids(ns: &[u32]) -> BTreeSet<SlotId> {
        ns.iter().map(|&n| sid(n)).collect()
    }

    fn st(entries: &[(AccessKey, &[u32])]) -> AccessState {
        AccessState::from_entries(entries.iter().map(|(k, v)| (*k, ids(v))))
    }

    fn stack(p: u32) -> AccessKey {
        AccessKey::Stack(p)
    }

    fn slotk(n: u32) -> AccessKey {
        AccessKey::Slot(sid(n))
    }

    fn instr(op: Opcode) -> Instruction {
        Instruction { pc: 0, op, push_bytes: vec![], truncated: false, fused: None }
    }

    fn ctx<'a>(i: &'a Instruction, height: u32, fused: Option<FmpAccess>) -> InstrCtx<'a> {
        InstrCtx { pp: ProgramPoint::new(i.pc, 0), instr: i, height, fused }
    }

    #[test]
    fn join_unions_entries() {
        // {3 -> {s8}} joined with {3 -> {s4}} gives {3 -> {s4, s8}}.
        let a = st(&[(stack(3), &[8])]);
        let b = st(&[(stack(3), &[4])]);
        assert_eq!(join_access(&a, &b), st(&[(stack(3), &[4, 8])]));
        // Joining with the empty state and with itself changes nothing.
        assert_eq!(join_access(&a, &AccessState::new()), a);
        assert_eq!(join_access(&a, &a), a);
    }

    #[test]
    fn leq_is_keywise_inclusion() {
        assert!(leq_access(&st(&[(stack(3), &[4])]), &st(&[(stack(3), &[4, 8])])));
        assert!(!leq_access(&st(&[(stack(3), &[4, 8])]), &st(&[(stack(3), &[4])])));
        assert!(leq_access(&AccessState::new(), &st(&[(stack(3), &[4])])));
    }

    #[test]
    fn fused_load_sets_result_position() {
        // A stack of size 7 before the PUSH: the fused MLOAD sees height 8
        // and adds the entry 8 -> its slots.
        let pp = ProgramPoint::new(0x178, 2);
        let mut points = PointSet::new();
        points.insert(pp);
        let table = AbstractSlotTable::from_sets(vec![points]);
        let i = Instruction { pc: 0x178, ..instr(Opcode::MLOAD) };
        let cx = InstrCtx { pp, instr: &i, height: 8, fused: Some(FmpAccess::Load) };
        let before = st(&[(stack(3), &[3]), (stack(4), &[4])]);
        let after = access_transfer(&cx, &before, &table);
        assert_eq!(
            after,
            st(&[(stack(3), &[3]), (stack(4), &[4]), (stack(8), &[0])])
        );
    }

    #[test]
    fn mstore_moves_value_into_slot_entry() {
        let table = AbstractSlotTable::default();
        let i = instr(Opcode::MSTORE);
        // First write: address points to s10, value holds s11.
        let before = st(&[
            (stack(2), &[9]),
            (stack(6), &[10]),
            (stack(8), &[10]),
            (stack(9), &[11]),
            (stack(10), &[10]),
        ]);
        let after = access_transfer(&ctx(&i, 10, None), &before, &table);
        assert_eq!(
            after,
            st(&[(stack(2), &[9]), (stack(6), &[10]), (stack(8), &[10]), (slotk(10), &[11])])
        );
        // Second write: the slot entry accumulates s13 next to s11.
        let before = st(&[
            (stack(2), &[9]),
            (stack(5), &[10]),
            (stack(7), &[13]),
            (stack(8), &[13]),
            (stack(9), &[10]),
            (slotk(10), &[11]),
        ]);
        let after = access_transfer(&ctx(&i, 9, None), &before, &table);
        assert_eq!(
            after,
            st(&[
                (stack(2), &[9]),
                (stack(5), &[10]),
                (stack(7), &[13]),
                (slotk(10), &[11, 13]),
            ])
        );
    }

    #[test]
    fn mload_dereferences_slot_keys() {
        let table = AbstractSlotTable::default();
        let i = instr(Opcode::MLOAD);
        let before = st(&[(stack(3), &[10]), (slotk(10), &[11, 13])]);
        let after = access_transfer(&ctx(&i, 3, None), &before, &table);
        assert_eq!(after, st(&[(stack(3), &[11, 13]), (slotk(10), &[11, 13])]));
        // Reading a generic value: the operand entry just disappears.
        let before = st(&[(slotk(10), &[11])]);
        let after = access_transfer(&ctx(&i, 3, None), &before, &table);
        assert_eq!(after, st(&[(slotk(10), &[11])]));
    }

    #[test]
    fn mstore_unknown_address_drops_operands() {
        let table = AbstractSlotTable::default();
        let i = instr(Opcode::MSTORE);
        let before = st(&[(stack(2), &[4])]); // value holds s4, address unknown
        let after = access_transfer(&ctx(&i, 3, None), &before, &table);
        assert!(after.is_empty());
    }

    #[test]
    fn swap_and_dup_shuffle_entries() {
        let table = AbstractSlotTable::default();
        let swap1 = instr(Opcode::SWAP1);
        let before = st(&[(stack(5), &[1])]);
        let after = access_transfer(&ctx(&swap1, 5, None), &before, &table);
        assert_eq!(after, st(&[(stack(4), &[1])]));

        let dup2 = instr(Opcode::DUP2);
        let before = st(&[(stack(4), &[1])]);
        let after = access_transfer(&ctx(&dup2, 5, None), &before, &table);
        assert_eq!(after, st(&[(stack(4), &[1]), (stack(6), &[1])]));
    }

    #[test]
    fn add_and_sub_propagate_slots_into_result() {
        let table = AbstractSlotTable::default();
        for op in [Opcode::ADD, Opcode::SUB] {
            let i = instr(op);
            let before = st(&[(stack(4), &[7])]);
            let after = access_transfer(&ctx(&i, 4, None), &before, &table);
            assert_eq!(after, st(&[(stack(3), &[7])]), "{op}");
        }
        // Other arithmetic drops them.
        let i = instr(Opcode::MUL);
        let before = st(&[(stack(4), &[7])]);
        let after = access_transfer(&ctx(&i, 4, None), &before, &table);
        assert!(after.is_empty());
    }

    #[test]
    fn consumed_operands_disappear_slot_entries_persist() {
        let table = AbstractSlotTable::default();
        let i = instr(Opcode::CALL); // pops 7, pushes a success flag
        let before = st(&[(stack(16), &[7]), (stack(12), &[7]), (stack(9), &[2]), (slotk(7), &[3])]);
        let after = access_transfer(&ctx(&i, 16, None), &before, &table);
        assert_eq!(after, st(&[(stack(9), &[2]), (slotk(7), &[3])]));
    }

    #[test]
    fn fused_store_consumes_without_writing() {
        let table = AbstractSlotTable::default();
        let i = instr(Opcode::MSTORE);
        let before = st(&[(stack(2), &[5]), (slotk(9), &[1])]);
        let after = access_transfer(&ctx(&i, 2, Some(FmpAccess::Store)), &before, &table);
        assert_eq!(after, st(&[(slotk(9), &[1])]));
    }

    #[test]
    fn contract_without_pointer_loads_has_empty_states() {
        use crate::asm::{disassemble, fuse_fmp_accesses};
        use crate::cfg::{Cfg, CfgLimits};
        // PUSH1 7; PUSH1 0; MSTORE; STOP -- memory traffic but no slots.
        let dis = fuse_fmp_accesses(disassemble(&[0x60, 0x07, 0x60, 0x00, 0x52, 0x00]));
        let cfg = Cfg::build(dis, &CfgLimits::default()).unwrap();
        let table = AbstractSlotTable::default();
        let sol = run_access_analysis(&cfg, &table).unwrap();
        assert!(sol.pre.values().all(|s| s.is_empty()));
        assert!(sol.post.values().all(|s| s.is_empty()));
    }
}
