//! Regenerate the shipped fixture corpus under fixtures/ from the
//! builders: `cargo run -p deadmem --example gen_fixtures`. The
//! fixtures_sync test keeps the files honest.

use deadmem::fixtures;
use deadmem::pipeline::{ExpectedShape, FixtureDescriptor, StubEntry};
use std::path::Path;

fn main() {
    let dir = Path::new("fixtures");
    std::fs::create_dir_all(dir).expect("fixtures dir");
    let expected = [("running1", 2usize, 0usize), ("running2", 5, 6), ("running3", 4, 0)];
    for f in fixtures::all() {
        std::fs::write(
            dir.join(format!("{}.hex", f.name)),
            format!("0x{}\n", hex::encode(&f.code)),
        )
        .expect("write hex");
        let (_, slots, findings) =
            expected.iter().find(|(n, _, _)| *n == f.name).expect("known fixture");
        let desc = FixtureDescriptor {
            name: f.name.to_string(),
            bytecode: format!("0x{}", hex::encode(&f.code)),
            calldata: f
                .calldata_variants
                .iter()
                .map(|c| format!("0x{}", hex::encode(c)))
                .collect(),
            stubs: f
                .stubs
                .by_callee
                .iter()
                .map(|(addr, stub)| StubEntry {
                    callee: format!("{addr:#x}"),
                    success: stub.success,
                    return_data: format!("0x{}", hex::encode(&stub.return_data)),
                })
                .collect(),
            expected: Some(ExpectedShape { slots: Some(*slots), findings: Some(*findings) }),
        };
        let json = serde_json::to_string_pretty(&desc).expect("serialize descriptor");
        std::fs::write(dir.join(format!("{}.json", f.name)), json + "\n").expect("write json");
    }
    println!("fixtures written");
}
