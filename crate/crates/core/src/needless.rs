//! Read/write access maps and needless-write inference: a write to a slot
//! with no reachable subsequent read of that slot can be removed.

use crate::access::AccessState;
use crate::asm::FmpAccess;
use crate::cfg::{Cfg, ProgramPoint};
use crate::fixpoint::Solution;
use crate::opcode::Opcode;
use crate::slot::{AbstractSlotTable, SlotId};
use std::collections::{BTreeMap, BTreeSet};

/// Per-program-point sets of slots possibly read / written. Points whose
/// instruction touches no memory (or whose operand address is unknown)
/// are simply absent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessMaps {
    pub reads: BTreeMap<ProgramPoint, BTreeSet<SlotId>>,
    pub writes: BTreeMap<ProgramPoint, BTreeSet<SlotId>>,
}

impl AccessMaps {
    pub fn reads_at(&self, pp: ProgramPoint) -> Option<&BTreeSet<SlotId>> {
        self.reads.get(&pp)
    }

    pub fn writes_at(&self, pp: ProgramPoint) -> Option<&BTreeSet<SlotId>> {
        self.writes.get(&pp)
    }

    /// Slots whose contents are read somewhere. Entries at fused
    /// `MLOAD 0x40` points are the allocations themselves (they read the
    /// pointer word, not the slot), so they do not count here.
    pub fn slots_read_as_data(&self, cfg: &Cfg) -> BTreeSet<SlotId> {
        self.reads
            .iter()
            .filter(|(pp, _)| cfg.fused(**pp).ok().flatten() != Some(FmpAccess::Load))
            .flat_map(|(_, set)| set.iter().copied())
            .collect()
    }
}

/// Build the R/W maps from the access-analysis fixpoint. The operand at
/// depth d from the top sits at 1-based position top(pp) - d. A fused
/// `MLOAD 0x40` reads the slots it allocates; a fused `MSTORE 0x40` is
/// free-memory-pointer bookkeeping and never appears in either map.
pub fn compute_rw_maps(
    cfg: &Cfg,
    sol: &Solution<AccessState>,
    table: &AbstractSlotTable,
) -> AccessMaps {
    let mut maps = AccessMaps::default();
    for node in &cfg.nodes {
        for at in &node.instrs {
            let pp = ProgramPoint::new(at.pc, node.clone);
            let instr = &cfg.dis().instrs[at.dis_idx as usize];
            if instr.truncated {
                continue;
            }
            match at.fused {
                Some(FmpAccess::Load) => {
                    let slots = table.get_slots(pp);
                    if !slots.is_empty() {
                        maps.reads.insert(pp, slots);
                    }
                    continue;
                }
                Some(FmpAccess::Store) => continue,
                None => {}
            }
            let Some(pre) = sol.pre(pp) else { continue };
            let t = at.height;
            if let Some(d) = instr.op.mem_read_pos() {
                let set = pre.stack(t - d as u32);
                if !set.is_empty() {
                    maps.reads.insert(pp, set.clone());
                }
            }
            if let Some(d) = instr.op.mem_write_pos() {
                let set = pre.stack(t - d as u32);
                if !set.is_empty() {
                    maps.writes.insert(pp, set.clone());
                }
            }
        }
    }
    maps
}

/// Literal evaluation of the write-leak condition: some point reads `s`
/// and is reachable from `pw`.
pub fn exists_read(pw: ProgramPoint, s: SlotId, maps: &AccessMaps, cfg: &Cfg) -> bool {
    maps.reads.iter().any(|(pr, set)| {
        set.contains(&s) && cfg.reachable(pw, *pr).unwrap_or(false)
    })
}

/// A write access that is never read afterwards.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Finding {
    pub point: ProgramPoint,
    pub slot: SlotId,
    pub opcode: Opcode,
    /// True when the slot has no read anywhere, i.e. every write to it is
    /// needless and the whole allocation is dead.
    pub whole_slot_dead: bool,
}

/// Compute the needless-write set, ordered by (point, slot).
pub fn infer_needless(maps: &AccessMaps, cfg: &Cfg) -> Vec<Finding> {
    let mut needless: Vec<(ProgramPoint, SlotId)> = Vec::new();
    let mut writes_per_slot: BTreeMap<SlotId, usize> = BTreeMap::new();
    for (pw, slots) in &maps.writes {
        for &s in slots {
            *writes_per_slot.entry(s).or_default() += 1;
            if !exists_read(*pw, s, maps, cfg) {
                needless.push((*pw, s));
            }
        }
    }
    // A slot is dead as a whole when its contents are never read and
    // every write to it is needless.
    let data_reads = maps.slots_read_as_data(cfg);
    let mut needless_per_slot: BTreeMap<SlotId, usize> = BTreeMap::new();
    for (_, s) in &needless {
        *needless_per_slot.entry(*s).or_default() += 1;
    }
    let mut findings: Vec<Finding> = needless
        .into_iter()
        .map(|(pw, s)| {
            let opcode = cfg
                .instr(pw)
                .map(|(i, _)| if i.truncated { Opcode::INVALID } else { i.op })
                .unwrap_or(Opcode::INVALID);
            let whole = !data_reads.contains(&s)
                && needless_per_slot.get(&s) == writes_per_slot.get(&s);
            Finding { point: pw, slot: s, opcode, whole_slot_dead: whole }
        })
        .collect();
    findings.sort();
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{disassemble, fuse_fmp_accesses};
    use crate::builder::ProgramBuilder;
    use crate::cfg::CfgLimits;
    use crate::slot::{collect_slots, run_slot_analysis};

    fn analyze(code: &[u8]) -> (Cfg, AbstractSlotTable, AccessMaps) {
        let dis = fuse_fmp_accesses(disassemble(code));
        let cfg = Cfg::build(dis, &CfgLimits::default()).unwrap();
        let slot_sol = run_slot_analysis(&cfg).unwrap();
        let table = collect_slots(&slot_sol, &cfg);
        let access_sol = crate::access::run_access_analysis(&cfg, &table).unwrap();
        let maps = compute_rw_maps(&cfg, &access_sol, &table);
        (cfg, table, maps)
    }

    /// fmp init; alloc one slot; write a word; optionally read it back;
    /// then STOP.
    fn write_then(read_back: bool) -> Vec<u8> {
        let mut b = ProgramBuilder::new();
        b.init_fmp(0x80);
        b.push(0x40u64).op(Opcode::MLOAD); // [base]
        b.op(Opcode::DUP1).push(0x20u64).op(Opcode::ADD); // [base, nfp]
        b.push(0x40u64).op(Opcode::MSTORE); // [base], slot permanent
        b.push(0u64).op(Opcode::DUP2).op(Opcode::MSTORE); // write base[0]
        if read_back {
            b.op(Opcode::DUP1).op(Opcode::MLOAD).op(Opcode::POP);
        }
        b.op(Opcode::STOP);
        b.build()
    }

    #[test]
    fn unread_write_is_flagged() {
        let (cfg, table, maps) = analyze(&write_then(false));
        let findings = infer_needless(&maps, &cfg);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].opcode, Opcode::MSTORE);
        assert!(findings[0].whole_slot_dead);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn write_then_read_in_same_block_is_clean() {
        let (cfg, _table, maps) = analyze(&write_then(true));
        let findings = infer_needless(&maps, &cfg);
        assert!(findings.is_empty(), "{findings:?}");
    }

    #[test]
    fn write_in_terminal_block_without_reads_is_flagged() {
        // Write into a slot and RETURN a different region (the zero page),
        // so nothing reads the slot.
        let mut b = ProgramBuilder::new();
        b.init_fmp(0x80);
        b.push(0x40u64).op(Opcode::MLOAD); // [base]
        b.push(7u64).op(Opcode::DUP2).op(Opcode::MSTORE); // write base[0]
        b.op(Opcode::POP);
        b.push(0x20u64).push(0u64).op(Opcode::RETURN); // returns memory [0, 0x20)
        let (cfg, _t, maps) = analyze(&b.build());
        let findings = infer_needless(&maps, &cfg);
        assert_eq!(findings.len(), 1);
    }

    #[test]
    fn crossed_slots_only_unread_one_is_flagged() {
        // Two slots; write both; read only the first.
        let mut b = ProgramBuilder::new();
        b.init_fmp(0x80);
        // slot A
        b.push(0x40u64).op(Opcode::MLOAD);
        b.op(Opcode::DUP1).push(0x20u64).op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
        // slot B
        b.push(0x40u64).op(Opcode::MLOAD);
        b.op(Opcode::DUP1).push(0x20u64).op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
        // stack: [A, B]
        b.push(1u64).op(Opcode::DUP3).op(Opcode::MSTORE); // A[0] = 1
        b.push(2u64).op(Opcode::DUP2).op(Opcode::MSTORE); // B[0] = 2
        b.op(Opcode::POP); // drop B
        b.op(Opcode::MLOAD).op(Opcode::POP); // read A
        b.op(Opcode::STOP);
        let (cfg, table, maps) = analyze(&b.build());
        assert_eq!(table.len(), 2);
        let findings = infer_needless(&maps, &cfg);
        assert_eq!(findings.len(), 1, "{findings:?}");
        assert!(findings[0].whole_slot_dead);
    }

    #[test]
    fn loop_read_protects_write_via_cycle() {
        // Loop: the write happens in the body, the read sits at the head;
        // the read is reachable from the write through the back edge.
        let mut b = ProgramBuilder::new();
        b.init_fmp(0x80);
        b.push(0x40u64).op(Opcode::MLOAD); // [base]
        b.op(Opcode::DUP1).push(0x20u64).op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
        b.push(2u64); // [base, i]
        let head = b.label();
        b.dest(head);
        b.op(Opcode::DUP2).op(Opcode::MLOAD).op(Opcode::POP); // read base
        b.push(9u64).op(Opcode::DUP3).op(Opcode::MSTORE); // write base[0]
        b.push(1u64).op(Opcode::SWAP1).op(Opcode::SUB); // i -= 1
        b.op(Opcode::DUP1);
        b.jumpi(head);
        b.op(Opcode::STOP);
        let (cfg, _t, maps) = analyze(&b.build());
        let findings = infer_needless(&maps, &cfg);
        assert!(findings.is_empty(), "{findings:?}");
        // Sanity: exists_read through the cycle.
        let (pw, s) = maps
            .writes
            .iter()
            .flat_map(|(p, ss)| ss.iter().map(move |s| (*p, *s)))
            .next()
            .unwrap();
        assert!(exists_read(pw, s, &maps, &cfg));
    }

    #[test]
    fn unknown_address_writes_are_never_flagged() {
        // A write through a constant address carries no slot identity, so
        // it cannot appear in the needless set even though nothing reads
        // it back.
        let mut b = ProgramBuilder::new();
        b.init_fmp(0x80);
        b.push(7u64).push(0x200u64).op(Opcode::MSTORE);
        b.op(Opcode::STOP);
        let (cfg, table, maps) = analyze(&b.build());
        assert!(table.is_empty());
        assert!(maps.writes.is_empty());
        assert!(infer_needless(&maps, &cfg).is_empty());
    }

    #[test]
    fn rw_maps_skip_fused_store_and_plain_ops() {
        let (cfg, _t, maps) = analyze(&write_then(true));
        for pp in maps.writes.keys() {
            let (instr, at) = cfg.instr(*pp).unwrap();
            assert_eq!(instr.op, Opcode::MSTORE);
            assert_eq!(at.fused, None);
        }
        // The fused loads count as reads of their own slots.
        let fused_reads = maps
            .reads
            .iter()
            .filter(|(pp, _)| cfg.fused(**pp).unwrap() == Some(FmpAccess::Load))
            .count();
        assert_eq!(fused_reads, 1);
    }
}
