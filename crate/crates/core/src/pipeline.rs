//! End-to-end analysis pipeline, report shapes, corpus runner and
//! rendering. All stages run per contract with a shared deadline; any
//! stage failure becomes a diagnostic status, never a crash.

use crate::access::{run_access_analysis_with, AccessState};
use crate::asm::{disassemble, fuse_fmp_accesses, parse_input, strip_metadata};
use crate::cfg::{Cfg, CfgError, CfgLimits, ProgramPoint};
use crate::fixpoint::{Solution, SolveError, SolveLimits, SolveOrder};
use crate::needless::{compute_rw_maps, infer_needless, AccessMaps, Finding};
use crate::oracle::{self, check_access_soundness, check_needless_soundness, check_slot_soundness, CallStub, StubTable};
use crate::slot::{collect_slots, run_slot_analysis_with, AbstractSlotTable, SlotState};
use primitive_types::U256;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug)]
pub struct AnalyzeConfig {
    pub max_clones: u32,
    pub timeout: Option<Duration>,
    pub solve_order: SolveOrder,
    /// When false, reports carry wall_ms = 0 so that repeated runs are
    /// byte-identical.
    pub record_timing: bool,
    pub strip_metadata: bool,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            max_clones: 64,
            timeout: Some(Duration::from_secs(120)),
            solve_order: SolveOrder::Fifo,
            record_timing: true,
            strip_metadata: true,
        }
    }
}

/// The rich in-memory result of one analysis.
pub struct Analysis {
    pub cfg: Cfg,
    pub slot_sol: Solution<SlotState>,
    pub table: AbstractSlotTable,
    pub access_sol: Solution<AccessState>,
    pub maps: AccessMaps,
    pub findings: Vec<Finding>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AnalyzeError {
    #[error("{0}")]
    Cfg(#[from] CfgError),
    #[error("{0}")]
    Solve(#[from] SolveError),
}

impl AnalyzeError {
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            AnalyzeError::Cfg(CfgError::Timeout) | AnalyzeError::Solve(SolveError::Timeout)
        )
    }
}

/// Run the full pipeline: strip metadata, disassemble, mark
/// free-memory-pointer accesses, build the cloned CFG, solve both
/// analyses, derive R/W maps and the needless-write set.
pub fn analyze(code: &[u8], config: &AnalyzeConfig) -> Result<Analysis, AnalyzeError> {
    let deadline = config.timeout.map(|t| Instant::now() + t);
    let code = if config.strip_metadata { strip_metadata(code) } else { code };
    let dis = fuse_fmp_accesses(disassemble(code));
    let cfg = Cfg::build(dis, &CfgLimits { max_clones: config.max_clones, deadline })?;
    let limits = SolveLimits { deadline, ..SolveLimits::default() };
    let slot_sol = run_slot_analysis_with(&cfg, config.solve_order, &limits)?;
    let table = collect_slots(&slot_sol, &cfg);
    let access_sol = run_access_analysis_with(&cfg, &table, config.solve_order, &limits)?;
    let maps = compute_rw_maps(&cfg, &access_sol, &table);
    let findings = infer_needless(&maps, &cfg);
    Ok(Analysis { cfg, slot_sol, table, access_sol, maps, findings })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    CfgFailed { reason: String },
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub id: String,
    pub points: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingEntry {
    pub pc: String,
    pub clone: u32,
    pub opcode: String,
    pub slot: String,
    pub whole_slot_dead: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub blocks: usize,
    pub clones: usize,
    pub slots: usize,
    pub findings: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: u32,
    pub contract_id: String,
    pub status: Status,
    pub slots: Vec<SlotEntry>,
    pub findings: Vec<FindingEntry>,
    pub stats: Stats,
}

pub const SCHEMA_VERSION: u32 = 1;

fn fmt_pc(pc: u32) -> String {
    format!("0x{pc:X}")
}

fn fmt_point(pp: ProgramPoint) -> String {
    pp.to_string()
}

/// Analyze and package the outcome as a report; failures become statuses.
pub fn analyze_contract(code: &[u8], contract_id: &str, config: &AnalyzeConfig) -> AnalysisReport {
    let start = Instant::now();
    let outcome = analyze(code, config);
    let wall_ms = if config.record_timing { start.elapsed().as_millis() as u64 } else { 0 };
    match outcome {
        Ok(analysis) => {
            let slots = analysis
                .table
                .iter()
                .map(|(id, points)| SlotEntry {
                    id: id.to_string(),
                    points: points.iter().map(|pp| fmt_point(*pp)).collect(),
                })
                .collect::<Vec<_>>();
            let findings = analysis
                .findings
                .iter()
                .map(|f| FindingEntry {
                    pc: fmt_pc(f.point.pc),
                    clone: f.point.clone,
                    opcode: f.opcode.mnemonic().to_string(),
                    slot: f.slot.to_string(),
                    whole_slot_dead: f.whole_slot_dead,
                })
                .collect::<Vec<_>>();
            AnalysisReport {
                schema: SCHEMA_VERSION,
                contract_id: contract_id.to_string(),
                status: Status::Ok,
                stats: Stats {
                    blocks: analysis.cfg.block_count(),
                    clones: analysis.cfg.nodes.len(),
                    slots: slots.len(),
                    findings: findings.len(),
                    wall_ms,
                },
                slots,
                findings,
            }
        }
        Err(e) => {
            let status = if e.is_timeout() {
                Status::Timeout
            } else {
                Status::CfgFailed { reason: e.to_string() }
            };
            AnalysisReport {
                schema: SCHEMA_VERSION,
                contract_id: contract_id.to_string(),
                status,
                slots: Vec::new(),
                findings: Vec::new(),
                stats: Stats { blocks: 0, clones: 0, slots: 0, findings: 0, wall_ms },
            }
        }
    }
}

// ---------------------------------------------------------------------
// Fixture descriptors and oracle checking
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StubEntry {
    /// Callee address as hex.
    pub callee: String,
    pub success: bool,
    pub return_data: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExpectedShape {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub findings: Option<usize>,
}

/// A corpus entry with execution context for the oracle checkers and
/// optional expected analysis shape for regression.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FixtureDescriptor {
    pub name: String,
    pub bytecode: String,
    #[serde(default)]
    pub calldata: Vec<String>,
    #[serde(default)]
    pub stubs: Vec<StubEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedShape>,
}

#[derive(Debug, thiserror::Error)]
pub enum DescriptorError {
    #[error("bad descriptor json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad hex in descriptor: {0}")]
    Hex(String),
}

impl FixtureDescriptor {
    pub fn from_json(data: &[u8]) -> Result<Self, DescriptorError> {
        Ok(serde_json::from_slice(data)?)
    }

    pub fn code(&self) -> Result<Vec<u8>, DescriptorError> {
        parse_input(self.bytecode.as_bytes()).map_err(|e| DescriptorError::Hex(e.to_string()))
    }

    pub fn calldata_variants(&self) -> Result<Vec<Vec<u8>>, DescriptorError> {
        if self.calldata.is_empty() {
            return Ok(vec![Vec::new()]);
        }
        self.calldata
            .iter()
            .map(|c| parse_input(c.as_bytes()).map_err(|e| DescriptorError::Hex(e.to_string())))
            .collect()
    }

    pub fn stub_table(&self) -> Result<StubTable, DescriptorError> {
        let mut table = StubTable::default();
        for s in &self.stubs {
            let callee =
                parse_input(s.callee.as_bytes()).map_err(|e| DescriptorError::Hex(e.to_string()))?;
            let data = parse_input(s.return_data.as_bytes())
                .map_err(|e| DescriptorError::Hex(e.to_string()))?;
            table.by_callee.insert(
                U256::from_big_endian(&callee),
                CallStub { success: s.success, return_data: data },
            );
        }
        Ok(table)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub traces: usize,
    pub checked: usize,
    pub violations: Vec<String>,
}

/// Execute every calldata variant and run the three soundness checkers
/// against the analysis results.
pub fn oracle_check(
    code: &[u8],
    calldata_variants: &[Vec<u8>],
    stubs: &StubTable,
    analysis: &Analysis,
) -> OracleSummary {
    let mut summary = OracleSummary::default();
    let mut traces = Vec::new();
    for cd in calldata_variants {
        traces.push(oracle::execute(code, cd, stubs, &oracle::ExecLimits::default()));
    }
    summary.traces = traces.len();
    for trace in &traces {
        let r = check_slot_soundness(trace, &analysis.cfg, &analysis.table);
        summary.checked += r.checked;
        summary.violations.extend(r.violations);
        let r = check_access_soundness(trace, &analysis.cfg, &analysis.table, &analysis.access_sol);
        summary.checked += r.checked;
        summary.violations.extend(r.violations);
    }
    let r = check_needless_soundness(&traces, &analysis.cfg, &analysis.table, &analysis.findings);
    summary.checked += r.checked;
    summary.violations.extend(r.violations);
    summary
}

// ---------------------------------------------------------------------
// Corpus runner
// ---------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub report: AnalysisReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regressions: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusTotals {
    pub contracts: usize,
    pub ok: usize,
    pub failed: usize,
    pub slots: usize,
    pub findings: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub schema: u32,
    pub rows: Vec<CorpusRow>,
    pub totals: CorpusTotals,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CorpusOptions {
    pub oracle_check: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus directory: {0}")]
    Io(#[from] std::io::Error),
}

/// Analyze every `.hex`/`.bin`/`.json` file of a directory, in filename
/// order; contracts are analyzed in parallel but reported in input
/// order. Per-file errors are isolated into their row.
pub fn run_corpus(
    dir: &Path,
    config: &AnalyzeConfig,
    opts: &CorpusOptions,
) -> Result<CorpusSummary, CorpusError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("hex") | Some("bin") | Some("json"))
        })
        .collect();
    files.sort();

    let rows: Vec<CorpusRow> = files.par_iter().map(|path| run_one(path, config, opts)).collect();

    let mut totals = CorpusTotals { contracts: rows.len(), ..CorpusTotals::default() };
    for row in &rows {
        match row.report.status {
            Status::Ok => totals.ok += 1,
            _ => totals.failed += 1,
        }
        totals.slots += row.report.stats.slots;
        totals.findings += row.report.stats.findings;
        totals.wall_ms += row.report.stats.wall_ms;
    }
    Ok(CorpusSummary { schema: SCHEMA_VERSION, rows, totals })
}

fn run_one(path: &Path, config: &AnalyzeConfig, opts: &CorpusOptions) -> CorpusRow {
    let id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let data = match std::fs::read(path) {
        Ok(d) => d,
        Err(e) => return failed_row(&id, format!("unreadable file: {e}")),
    };
    let is_descriptor = path.extension().and_then(|e| e.to_str()) == Some("json");
    if is_descriptor {
        let desc = match FixtureDescriptor::from_json(&data) {
            Ok(d) => d,
            Err(e) => return failed_row(&id, e.to_string()),
        };
        let code = match desc.code() {
            Ok(c) => c,
            Err(e) => return failed_row(&id, e.to_string()),
        };
        let report = analyze_contract(&code, &id, config);
        let mut row = CorpusRow { report, oracle: None, regressions: Vec::new() };
        if let Some(expected) = &desc.expected {
            if let Some(n) = expected.slots {
                if row.report.stats.slots != n {
                    row.regressions
                        .push(format!("expected {n} slots, got {}", row.report.stats.slots));
                }
            }
            if let Some(n) = expected.findings {
                if row.report.stats.findings != n {
                    row.regressions
                        .push(format!("expected {n} findings, got {}", row.report.stats.findings));
                }
            }
        }
        if opts.oracle_check && row.report.status == Status::Ok {
            match (desc.calldata_variants(), desc.stub_table(), analyze(&code, config)) {
                (Ok(variants), Ok(stubs), Ok(analysis)) => {
                    row.oracle = Some(oracle_check(&code, &variants, &stubs, &analysis));
                }
                _ => row.regressions.push("oracle check setup failed".to_string()),
            }
        }
        row
    } else {
        let code = match parse_input(&data) {
            Ok(c) => c,
            Err(e) => return failed_row(&id, e.to_string()),
        };
        CorpusRow {
            report: analyze_contract(&code, &id, config),
            oracle: None,
            regressions: Vec::new(),
        }
    }
}

fn failed_row(id: &str, reason: String) -> CorpusRow {
    CorpusRow {
        report: AnalysisReport {
            schema: SCHEMA_VERSION,
            contract_id: id.to_string(),
            status: Status::CfgFailed { reason },
            slots: Vec::new(),
            findings: Vec::new(),
            stats: Stats { blocks: 0, clones: 0, slots: 0, findings: 0, wall_ms: 0 },
        },
        oracle: None,
        regressions: Vec::new(),
    }
}

// ---------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

pub fn render_report(report: &AnalysisReport, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Text => {
            let mut out = String::new();
            text_report(&mut out, report);
            out
        }
    }
}

pub fn render_summary(summary: &CorpusSummary, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
            s.push('\n');
            s
        }
        Format::Text => {
            let mut out = String::new();
            for row in &summary.rows {
                text_report(&mut out, &row.report);
                if let Some(oracle) = &row.oracle {
                    out.push_str(&format!(
                        "  oracle: {} traces, {} checks, {} violations\n",
                        oracle.traces,
                        oracle.checked,
                        oracle.violations.len()
                    ));
                    for v in &oracle.violations {
                        out.push_str(&format!("    violation: {v}\n"));
                    }
                }
                for r in &row.regressions {
                    out.push_str(&format!("  regression: {r}\n"));
                }
            }
            let t = &summary.totals;
            out.push_str(&format!(
                "total: {} contracts ({} ok, {} failed), {} slots, {} findings, {} ms\n",
                t.contracts, t.ok, t.failed, t.slots, t.findings, t.wall_ms
            ));
            out
        }
    }
}

fn text_report(out: &mut String, report: &AnalysisReport) {
    use std::fmt::Write;
    let status = match &report.status {
        Status::Ok => "ok".to_string(),
        Status::CfgFailed { reason } => format!("cfg-failed ({reason})"),
        Status::Timeout => "timeout".to_string(),
    };
    let _ = writeln!(
        out,
        "{}: {status}, {} blocks, {} nodes, {} slots, {} findings, {} ms",
        report.contract_id,
        report.stats.blocks,
        report.stats.clones,
        report.stats.slots,
        report.stats.findings,
        report.stats.wall_ms
    );
    if !report.slots.is_empty() {
        let _ = writeln!(out, "  slots:");
        for s in &report.slots {
            let _ = writeln!(out, "    {} = {{{}}}", s.id, s.points.join(", "));
        }
    }
    if !report.findings.is_empty() {
        let _ = writeln!(out, "  needless writes (grouped by pc):");
        let mut by_pc: BTreeMap<&str, Vec<&FindingEntry>> = BTreeMap::new();
        for f in &report.findings {
            by_pc.entry(f.pc.as_str()).or_default().push(f);
        }
        for (pc, entries) in by_pc {
            for f in entries {
                let dead = if f.whole_slot_dead { "  [whole slot dead]" } else { "" };
                let _ = writeln!(out, "    {pc}  {}  slot {}  clone {}{dead}", f.opcode, f.slot, f.clone);
            }
        }
    }
}
