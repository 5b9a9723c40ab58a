//! Hand-assembled fixture contracts exercising the allocation idiom:
//! slot reservation through the free memory pointer, transient call
//! scratch slots, struct returns, and in-loop allocation. Each fixture
//! exposes the pcs of its interesting instructions so tests can assert
//! exact slot sets and findings without magic numbers.

use crate::builder::ProgramBuilder;
use crate::opcode::Opcode;
use crate::oracle::{CallStub, StubTable};
use primitive_types::U256;

#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub code: Vec<u8>,
    pub calldata_variants: Vec<Vec<u8>>,
    pub stubs: StubTable,
}

fn default_stubs() -> StubTable {
    let mut stubs = StubTable {
        default: CallStub { success: true, return_data: vec![0u8; 32] },
        ..StubTable::default()
    };
    stubs.by_callee.insert(
        U256::from(0xCA11u64),
        CallStub { success: true, return_data: vec![0x42u8; 32] },
    );
    stubs
}

/// A contract that allocates a two-word struct, fills it, then copies it
/// into a fresh return slot and returns that. Two slots, no needless
/// writes.
pub struct SimpleReturn {
    pub fixture: Fixture,
    pub load_local: u32,
    pub load_ret: u32,
}

pub fn simple_return() -> SimpleReturn {
    let mut b = ProgramBuilder::new();
    b.init_fmp(0x80);
    // local struct L, 0x40 bytes
    b.push(0x40u64);
    let load_local = b.pc();
    b.op(Opcode::MLOAD); // [L]
    b.op(Opcode::DUP1).push(0x40u64).op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
    b.push(0x2Au64).op(Opcode::DUP2).op(Opcode::MSTORE); // L[0] = 42
    b.push(0x07u64).op(Opcode::DUP2).push(0x20u64).op(Opcode::ADD).op(Opcode::MSTORE);
    // return slot R (transient, closed by RETURN)
    b.push(0x40u64);
    let load_ret = b.pc();
    b.op(Opcode::MLOAD); // [L, R]
    // R[0] = L[0]; R[0x20] = L[0x20]
    b.op(Opcode::DUP2).op(Opcode::MLOAD);
    b.op(Opcode::DUP2).op(Opcode::MSTORE);
    b.op(Opcode::DUP2).push(0x20u64).op(Opcode::ADD).op(Opcode::MLOAD);
    b.op(Opcode::DUP2).push(0x20u64).op(Opcode::ADD).op(Opcode::MSTORE);
    b.push(0x40u64).op(Opcode::DUP2).op(Opcode::RETURN);
    SimpleReturn {
        fixture: Fixture {
            name: "running1",
            code: b.build(),
            calldata_variants: vec![vec![]],
            stubs: default_stubs(),
        },
        load_local,
        load_ret,
    }
}

/// Pcs of the interesting instructions of the shared-allocator fixture.
#[derive(Clone, Copy, Debug)]
pub struct AllocPairLabels {
    /// Inside the shared allocation subroutine (three clones).
    pub alloc_load: u32,
    pub alloc_fmp_store: u32,
    pub alloc_w0: u32,
    pub alloc_w1: u32,
    pub alloc_w2: u32,
    /// The external-call sequence (one clone).
    pub call_load1: u32,
    pub call_arg_store: u32,
    pub call_load2: u32,
    pub staticcall: u32,
    pub call_load3: u32,
    pub call_fmp_store: u32,
    pub result_load: u32,
    /// The shared return block.
    pub ret_load1: u32,
    pub ret_store: u32,
    pub ret_load2: u32,
    pub return_pc: u32,
    pub then_read: u32,
}

/// Clone indices of the allocation subroutine, in discovery order: the
/// first call allocates the dead returns-struct of the public function,
/// the second the local struct that may be returned, the third the dead
/// returns-struct of the private helper.
pub const CLONE_DEAD_A: u32 = 0;
pub const CLONE_LIVE_B: u32 = 1;
pub const CLONE_DEAD_C: u32 = 2;

#[derive(Clone, Copy, Debug, Default)]
pub struct AllocPairOptions {
    /// Append a reachable read of the first dead slot (the clone-0
    /// returns-struct) in the return block.
    pub read_dead_a: bool,
    /// Append a reachable read of the second dead slot (the clone-2
    /// returns-struct) on the call path.
    pub read_dead_c: bool,
}

pub struct AllocPair {
    pub fixture: Fixture,
    pub labels: AllocPairLabels,
}

/// The main fixture: a shared allocation subroutine called from three
/// sites (so it is cloned per calling context), an external call through
/// a transient scratch slot that is read three times before being made
/// permanent, and a return slot loaded twice. Exactly five abstract
/// slots; the clone-0 and clone-2 struct initializations are needless
/// (six findings), the clone-1 ones are read on the non-call path.
pub fn alloc_pair() -> AllocPair {
    alloc_pair_with(AllocPairOptions::default())
}

pub fn alloc_pair_with(opts: AllocPairOptions) -> AllocPair {
    let mut b = ProgramBuilder::new();
    let alloc = b.label();
    let ret1 = b.label();
    let ret2 = b.label();
    let ret3 = b.label();
    let elsebr = b.label();
    let retblk = b.label();

    b.init_fmp(0x80);
    // slot A: returns-struct of the public function, never used
    b.push_label(ret1);
    b.jump(alloc);
    b.dest(ret1); // [a]
    // slot B: local struct, read on the then-path
    b.push_label(ret2);
    b.jump(alloc);
    b.dest(ret2); // [a, b]
    b.op(Opcode::CALLDATASIZE);
    b.jumpi(elsebr);
    // then-path: read the local struct, keep heights aligned
    b.op(Opcode::DUP1);
    let then_read = b.pc();
    b.op(Opcode::MLOAD); // [a, b, v]
    b.jump(retblk);

    b.dest(elsebr); // [a, b]
    // slot C: returns-struct of the private helper, never used
    b.push_label(ret3);
    b.jump(alloc);
    b.dest(ret3); // [a, b, c]
    // transient scratch slot D for the external call
    b.push(0x40u64);
    let call_load1 = b.pc();
    b.op(Opcode::MLOAD); // [a, b, c, m]
    b.push(0xB04DD20Bu64).op(Opcode::DUP2);
    let call_arg_store = b.pc();
    b.op(Opcode::MSTORE); // selector into the scratch slot
    b.push(0x20u64); // retSize
    b.push(0x40u64);
    let call_load2 = b.pc();
    b.op(Opcode::MLOAD); // retOffset: same transient slot
    b.push(0x04u64); // argsSize
    b.op(Opcode::DUP4); // argsOffset = m
    b.push(0xCA11u64);
    b.op(Opcode::GAS);
    let staticcall = b.pc();
    b.op(Opcode::STATICCALL); // [a, b, c, m, ok]
    b.op(Opcode::POP);
    b.push(0x40u64);
    let call_load3 = b.pc();
    b.op(Opcode::MLOAD);
    b.op(Opcode::RETURNDATASIZE).op(Opcode::ADD);
    b.push(0x40u64);
    let call_fmp_store = b.pc();
    b.op(Opcode::MSTORE); // scratch slot made permanent  [a, b, c, m]
    let result_load = b.pc();
    b.op(Opcode::MLOAD); // read the call result  [a, b, c, res]
    if opts.read_dead_c {
        b.op(Opcode::DUP2).op(Opcode::MLOAD).op(Opcode::POP);
    }
    b.op(Opcode::SWAP1).op(Opcode::POP); // drop c  [a, b, res]
    b.jump(retblk);

    b.dest(retblk); // [a, b, src]
    if opts.read_dead_a {
        b.op(Opcode::DUP3).op(Opcode::MLOAD).op(Opcode::POP);
    }
    // slot E: the return slot, loaded twice, closed by RETURN
    b.push(0x40u64);
    let ret_load1 = b.pc();
    b.op(Opcode::MLOAD); // [a, b, src, r]
    b.op(Opcode::SWAP1).op(Opcode::DUP2);
    let ret_store = b.pc();
    b.op(Opcode::MSTORE); // r[0] = src  [a, b, r]
    b.push(0x20u64).op(Opcode::ADD); // [a, b, end]
    b.push(0x40u64);
    let ret_load2 = b.pc();
    b.op(Opcode::MLOAD); // [a, b, end, r]
    b.op(Opcode::DUP1).op(Opcode::SWAP2); // [a, b, r, r, end]
    b.op(Opcode::SUB).op(Opcode::SWAP1); // [a, b, 0x20, r]
    let return_pc = b.pc();
    b.op(Opcode::RETURN);

    // The shared allocator: leaves a fresh baseref in place of the return
    // address and initializes three fields to zero.
    b.dest(alloc); // [.., ret]
    b.push(0x40u64);
    let alloc_load = b.pc();
    b.op(Opcode::MLOAD); // [.., ret, base]
    b.op(Opcode::DUP1).push(0x60u64).op(Opcode::ADD);
    b.push(0x40u64);
    let alloc_fmp_store = b.pc();
    b.op(Opcode::MSTORE); // [.., ret, base]
    b.push(0u64).op(Opcode::DUP2);
    let alloc_w0 = b.pc();
    b.op(Opcode::MSTORE); // base[0x00] = 0
    b.push(0u64).op(Opcode::DUP2).push(0x20u64).op(Opcode::ADD);
    let alloc_w1 = b.pc();
    b.op(Opcode::MSTORE); // base[0x20] = 0
    b.push(0u64).op(Opcode::DUP2).push(0x40u64).op(Opcode::ADD);
    let alloc_w2 = b.pc();
    b.op(Opcode::MSTORE); // base[0x40] = 0
    b.op(Opcode::SWAP1).op(Opcode::JUMP); // return with [.., base]

    AllocPair {
        fixture: Fixture {
            name: "running2",
            code: b.build(),
            calldata_variants: vec![vec![], vec![0x01]],
            stubs: default_stubs(),
        },
        labels: AllocPairLabels {
            alloc_load,
            alloc_fmp_store,
            alloc_w0,
            alloc_w1,
            alloc_w2,
            call_load1,
            call_arg_store,
            call_load2,
            staticcall,
            call_load3,
            call_fmp_store,
            result_load,
            ret_load1,
            ret_store,
            ret_load2,
            return_pc,
            then_read,
        },
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoopLabels {
    pub load_arr: u32,
    pub load_elem: u32,
    pub load_call: u32,
    pub load_copy: u32,
    pub arr_store_elem: u32,
    pub arr_store_copy: u32,
    pub ptr_read: u32,
    pub return_pc: u32,
}

pub struct LoopFixture {
    pub fixture: Fixture,
    pub labels: LoopLabels,
}

/// A bounded loop that allocates one struct per iteration, stores its
/// pointer into a pre-allocated array slot, performs an external call
/// through a transient scratch slot, copies the result into a second
/// per-iteration struct and stores that pointer too. After the loop the
/// array is dereferenced, so nothing is needless; the array's slot entry
/// accumulates both per-iteration slots.
pub fn loop_fixture() -> LoopFixture {
    let mut b = ProgramBuilder::new();
    let head = b.label();
    b.init_fmp(0x80);
    // array slot: length word plus two element pointers
    b.push(0x40u64);
    let load_arr = b.pc();
    b.op(Opcode::MLOAD); // [A]
    b.op(Opcode::DUP1).push(0x60u64).op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
    b.push(2u64).op(Opcode::DUP2).op(Opcode::MSTORE); // A[0] = len
    b.push(0u64); // [A, i]
    b.dest(head);
    // element struct
    b.push(0x40u64);
    let load_elem = b.pc();
    b.op(Opcode::MLOAD); // [A, i, B]
    b.op(Opcode::DUP1).push(0x20u64).op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
    b.push(0u64).op(Opcode::DUP2).op(Opcode::MSTORE); // B[0] = 0
    // A[1 + i] = B
    b.op(Opcode::DUP1).op(Opcode::DUP3);
    b.push(0x20u64).op(Opcode::MUL);
    b.op(Opcode::DUP5).op(Opcode::ADD);
    b.push(0x20u64).op(Opcode::ADD);
    let arr_store_elem = b.pc();
    b.op(Opcode::MSTORE); // [A, i, B]
    b.op(Opcode::POP); // [A, i]
    // external call through a transient scratch slot
    b.push(0x40u64);
    let load_call = b.pc();
    b.op(Opcode::MLOAD); // [A, i, C]
    b.push(0xB04DD20Bu64).op(Opcode::DUP2).op(Opcode::MSTORE);
    b.push(0x20u64); // retSize
    b.op(Opcode::DUP2); // retOffset = C
    b.push(0x04u64); // argsSize
    b.op(Opcode::DUP4); // argsOffset = C
    b.push(0xCA11u64);
    b.op(Opcode::GAS);
    b.op(Opcode::STATICCALL); // [A, i, C, ok]
    b.op(Opcode::POP);
    b.op(Opcode::DUP1).op(Opcode::RETURNDATASIZE).op(Opcode::ADD);
    b.push(0x40u64).op(Opcode::MSTORE); // C permanent  [A, i, C]
    // copy struct
    b.push(0x40u64);
    let load_copy = b.pc();
    b.op(Opcode::MLOAD); // [A, i, C, D]
    b.op(Opcode::DUP1).push(0x20u64).op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
    b.op(Opcode::DUP2).op(Opcode::MLOAD); // [A, i, C, D, val] -- reads the call result
    b.op(Opcode::DUP2).op(Opcode::MSTORE); // D[0] = val  [A, i, C, D]
    // A[1 + i] = D
    b.op(Opcode::DUP1).op(Opcode::DUP4);
    b.push(0x20u64).op(Opcode::MUL);
    b.op(Opcode::DUP6).op(Opcode::ADD);
    b.push(0x20u64).op(Opcode::ADD);
    let arr_store_copy = b.pc();
    b.op(Opcode::MSTORE); // [A, i, C, D]
    b.op(Opcode::POP).op(Opcode::POP); // [A, i]
    // i += 1; loop while 2 > i
    b.push(1u64).op(Opcode::ADD);
    b.op(Opcode::DUP1).push(2u64).op(Opcode::GT);
    b.jumpi(head);
    // [A, i]
    b.op(Opcode::POP); // [A]
    b.op(Opcode::DUP1).op(Opcode::MLOAD).op(Opcode::POP); // read A[0]
    b.op(Opcode::DUP1).push(0x20u64).op(Opcode::ADD);
    let ptr_read = b.pc();
    b.op(Opcode::MLOAD); // [A, ptr] -- the entry holding {elem, copy}
    b.op(Opcode::MLOAD).op(Opcode::POP); // dereference into the structs
    b.push(0x60u64).op(Opcode::DUP2);
    let return_pc = b.pc();
    b.op(Opcode::RETURN);

    LoopFixture {
        fixture: Fixture {
            name: "running3",
            code: b.build(),
            calldata_variants: vec![vec![]],
            stubs: default_stubs(),
        },
        labels: LoopLabels {
            load_arr,
            load_elem,
            load_call,
            load_copy,
            arr_store_elem,
            arr_store_copy,
            ptr_read,
            return_pc,
        },
    }
}

/// All shipped fixtures.
pub fn all() -> Vec<Fixture> {
    vec![simple_return().fixture, alloc_pair().fixture, loop_fixture().fixture]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{execute, ExecLimits, Outcome};

    #[test]
    fn fixtures_execute_cleanly_on_all_calldata_variants() {
        for f in all() {
            for cd in &f.calldata_variants {
                let trace = execute(&f.code, cd, &f.stubs, &ExecLimits::default());
                assert!(
                    matches!(trace.outcome, Outcome::Returned(_)),
                    "{} with {} calldata bytes: {:?}",
                    f.name,
                    cd.len(),
                    trace.outcome
                );
            }
        }
    }

    #[test]
    fn mutated_fixtures_execute_cleanly() {
        for opts in [
            AllocPairOptions { read_dead_a: true, read_dead_c: false },
            AllocPairOptions { read_dead_a: false, read_dead_c: true },
            AllocPairOptions { read_dead_a: true, read_dead_c: true },
        ] {
            let f = alloc_pair_with(opts).fixture;
            for cd in &f.calldata_variants {
                let trace = execute(&f.code, cd, &f.stubs, &ExecLimits::default());
                assert!(
                    matches!(trace.outcome, Outcome::Returned(_)),
                    "{opts:?}: {:?}",
                    trace.outcome
                );
            }
        }
    }
}
