//! Quick scaling probe: a wide dispatcher over many allocating bodies.

use deadmem::builder::ProgramBuilder;
use deadmem::opcode::Opcode;
use deadmem::pipeline::{analyze, AnalyzeConfig};
use std::time::Instant;

fn main() {
    let n_funcs = 100;
    let mut b = ProgramBuilder::new();
    let alloc = b.label();
    let fallback = b.label();
    let bodies: Vec<_> = (0..n_funcs).map(|_| b.label()).collect();
    let rets: Vec<_> = (0..n_funcs).map(|_| b.label()).collect();

    b.init_fmp(0x80);
    b.push(0u64).op(Opcode::CALLDATALOAD).push(224u64).op(Opcode::SHR);
    for (i, body) in bodies.iter().enumerate() {
        b.op(Opcode::DUP1).push(0x1000_0000u64 + i as u64).op(Opcode::EQ);
        b.jumpi(*body);
    }
    b.jump(fallback);
    for (i, body) in bodies.iter().enumerate() {
        b.dest(*body);
        b.op(Opcode::POP);
        b.push_label(rets[i]);
        b.jump(alloc);
        b.dest(rets[i]); // [base]
        b.push(0x42u64).op(Opcode::DUP2).op(Opcode::MSTORE);
        if i % 2 == 0 {
            // live: the slot itself is returned
            b.push(0x20u64).op(Opcode::DUP2).op(Opcode::RETURN);
        } else {
            // dead: the zero page is returned instead
            b.op(Opcode::POP);
            b.push(0x20u64).push(0u64).op(Opcode::RETURN);
        }
    }
    b.dest(fallback);
    b.push(0u64).push(0u64).op(Opcode::REVERT);
    b.dest(alloc);
    b.push(0x40u64).op(Opcode::MLOAD);
    b.op(Opcode::DUP1).push(0x20u64).op(Opcode::ADD).push(0x40u64).op(Opcode::MSTORE);
    b.op(Opcode::SWAP1).op(Opcode::JUMP);
    let code = b.build();

    let config = AnalyzeConfig { max_clones: 128, ..AnalyzeConfig::default() };
    let t0 = Instant::now();
    let analysis = analyze(&code, &config).unwrap();
    println!(
        "{} bytes, {} blocks, {} nodes, {} slots, {} findings in {:?}",
        code.len(),
        analysis.cfg.block_count(),
        analysis.cfg.nodes.len(),
        analysis.table.len(),
        analysis.findings.len(),
        t0.elapsed()
    );
}
