//! Print the disassembly and oracle trace of one generated program:
//! `cargo run -p deadmem --example dbg_seed -- <seed>`

use deadmem::asm::disassemble;
use deadmem::generator::generate;
use deadmem::oracle::{execute, ExecLimits};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .expect("usage: dbg_seed <seed>")
        .parse()
        .expect("seed must be a number");
    let g = generate(seed);
    let dis = disassemble(&g.code);
    for i in &dis.instrs {
        let imm = if i.push_bytes.is_empty() {
            String::new()
        } else {
            format!(" 0x{}", hex::encode(&i.push_bytes))
        };
        println!("0x{:X}: {}{}", i.pc, i.mnemonic(), imm);
    }
    println!("calldata: 0x{}", hex::encode(&g.calldata));
    let trace = execute(&g.code, &g.calldata, &g.stubs, &ExecLimits::default());
    for (k, s) in trace.steps.iter().enumerate() {
        println!(
            "step {k}: pc 0x{:X} {} h={} reads {:?} writes {:?} fmp={:?}",
            s.pc,
            s.op,
            s.height_before,
            s.mem_reads,
            s.mem_writes,
            s.freeptr_after.map(|v| format!("{v:#x}"))
        );
    }
    println!("outcome: {:?}", trace.outcome);
}
