//! File formats: basic-block documents, instruction-attribute databases,
//! and per-microarchitecture configuration files. All files are UTF-8 JSON.
//!
//! A block document lists instructions with their layout and pipeline
//! attributes. Attributes may be given inline or resolved from an
//! instruction database via the optional `form` key; inline values win
//! field by field.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::model::{BasicBlock, BlockError, Instruction, MicroArchConfig, PortUsageEntry, ValueId};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error{}: {message}", at.as_ref().map(|p| format!(" in {}", p)).unwrap_or_default())]
    Parse { at: Option<String>, message: String },
    #[error("instruction {index}: unknown form '{form}' and required fields are not inline")]
    UnknownInstructionForm { index: usize, form: String },
    #[error("instruction {index}: missing required field '{field}'")]
    MissingField { index: usize, field: &'static str },
    #[error("instruction {index}: {reason}")]
    InvalidInstruction { index: usize, reason: String },
    #[error("basic block has no instructions")]
    EmptyBlock,
    #[error("configuration error: {0}")]
    Config(String),
}

fn parse_error(message: impl fmt::Display) -> IoError {
    IoError::Parse {
        at: None,
        message: message.to_string(),
    }
}

fn read_file(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn with_path(err: IoError, path: &Path) -> IoError {
    match err {
        IoError::Parse { message, .. } => IoError::Parse {
            at: Some(path.display().to_string()),
            message,
        },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Block documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    #[serde(default)]
    pub base_address: u64,
    pub instructions: Vec<InstrDoc>,
}

/// One instruction entry of a block document. Every attribute is optional
/// here; resolution fills the gaps from the instruction database and the
/// documented defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InstrDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_bytes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opcode_offset: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub has_lcp: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requires_complex_decoder: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_available_simple_decoders: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_fusible_with_next: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_branch: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub may_be_eliminated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fused_domain_uops: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub issue_uops: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispatch_uops: Option<Vec<Vec<u8>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reads: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub writes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latencies: Option<BTreeMap<String, u32>>,
}

/// Parses a block document without resolving it.
pub fn parse_block_doc(json: &str) -> Result<BlockDoc, IoError> {
    serde_json::from_str(json).map_err(parse_error)
}

/// Parses and resolves a block from a JSON string.
pub fn load_block_from_str(
    json: &str,
    db: &InstructionDb,
    cfg: &MicroArchConfig,
) -> Result<BasicBlock, IoError> {
    resolve_block(&parse_block_doc(json)?, db, cfg)
}

/// Loads a block file, resolving instruction attributes against `db`.
pub fn load_block(
    path: &Path,
    db: &InstructionDb,
    cfg: &MicroArchConfig,
) -> Result<BasicBlock, IoError> {
    load_block_from_str(&read_file(path)?, db, cfg).map_err(|e| with_path(e, path))
}

/// Resolves a parsed block document into a validated [`BasicBlock`].
pub fn resolve_block(
    doc: &BlockDoc,
    db: &InstructionDb,
    cfg: &MicroArchConfig,
) -> Result<BasicBlock, IoError> {
    let mut instructions = Vec::with_capacity(doc.instructions.len());
    for (index, entry) in doc.instructions.iter().enumerate() {
        instructions.push(resolve_instruction(index, entry, db, cfg)?);
    }
    BasicBlock::new(instructions, doc.base_address).map_err(|err| match err {
        BlockError::EmptyBlock => IoError::EmptyBlock,
        BlockError::InvalidInstruction { index, reason } => {
            IoError::InvalidInstruction { index, reason }
        }
        other @ BlockError::BaseAddressTooLarge { .. } => IoError::Parse {
            at: None,
            message: other.to_string(),
        },
    })
}

fn resolve_instruction(
    index: usize,
    entry: &InstrDoc,
    db: &InstructionDb,
    cfg: &MicroArchConfig,
) -> Result<Instruction, IoError> {
    let record = entry.form.as_deref().and_then(|f| db.records.get(f));

    let length_bytes = entry.length_bytes.ok_or(IoError::MissingField {
        index,
        field: "length_bytes",
    })?;
    let fused_domain_uops = entry
        .fused_domain_uops
        .or_else(|| record.and_then(|r| r.fused_domain_uops))
        .ok_or_else(|| match &entry.form {
            Some(form) if !db.records.contains_key(form) => IoError::UnknownInstructionForm {
                index,
                form: form.clone(),
            },
            _ => IoError::MissingField {
                index,
                field: "fused_domain_uops",
            },
        })?;

    let dispatch_doc = entry
        .dispatch_uops
        .clone()
        .or_else(|| record.and_then(|r| r.dispatch_uops.clone()))
        .unwrap_or_default();
    let mut dispatch_uops = Vec::with_capacity(dispatch_doc.len());
    for ports in &dispatch_doc {
        let entry = PortUsageEntry::new(ports).ok_or_else(|| IoError::InvalidInstruction {
            index,
            reason: format!(
                "invalid dispatch uop port set {:?} (non-empty, ports < 64)",
                ports
            ),
        })?;
        dispatch_uops.push(entry);
    }

    let reads: Vec<ValueId> = entry
        .reads
        .clone()
        .or_else(|| record.and_then(|r| r.reads.clone()))
        .unwrap_or_default()
        .iter()
        .map(|s| ValueId::parse(s))
        .collect();
    let writes: Vec<ValueId> = entry
        .writes
        .clone()
        .or_else(|| record.and_then(|r| r.writes.clone()))
        .unwrap_or_default()
        .iter()
        .map(|s| ValueId::parse(s))
        .collect();

    let latency_doc = entry
        .latencies
        .clone()
        .or_else(|| record.and_then(|r| r.latencies.clone()))
        .unwrap_or_default();
    let mut latencies = BTreeMap::new();
    for (key, cycles) in &latency_doc {
        let (src, dst) = key
            .split_once("->")
            .ok_or_else(|| IoError::InvalidInstruction {
                index,
                reason: format!("latency key '{}' is not of the form 'src->dst'", key),
            })?;
        latencies.insert((ValueId::parse(src), ValueId::parse(dst)), *cycles);
    }

    Ok(Instruction {
        length_bytes,
        opcode_offset: entry.opcode_offset.unwrap_or(0),
        has_lcp: entry
            .has_lcp
            .or_else(|| record.and_then(|r| r.has_lcp))
            .unwrap_or(false),
        requires_complex_decoder: entry
            .requires_complex_decoder
            .or_else(|| record.and_then(|r| r.requires_complex_decoder))
            .unwrap_or(false),
        n_available_simple_decoders: entry
            .n_available_simple_decoders
            .or_else(|| record.and_then(|r| r.n_available_simple_decoders))
            .unwrap_or(cfg.n_decoders - 1),
        macro_fusible_with_next: entry
            .macro_fusible_with_next
            .or_else(|| record.and_then(|r| r.macro_fusible_with_next))
            .unwrap_or(false),
        is_branch: entry
            .is_branch
            .or_else(|| record.and_then(|r| r.is_branch))
            .unwrap_or(false),
        may_be_eliminated: entry
            .may_be_eliminated
            .or_else(|| record.and_then(|r| r.may_be_eliminated))
            .unwrap_or(false),
        fused_domain_uops,
        issue_uops: entry
            .issue_uops
            .or_else(|| record.and_then(|r| r.issue_uops))
            .unwrap_or(fused_domain_uops),
        dispatch_uops,
        reads,
        writes,
        latencies,
    })
}

/// Serializes a block back into a fully inline document.
pub fn serialize_block(block: &BasicBlock) -> BlockDoc {
    let instructions = block
        .instructions()
        .iter()
        .map(|i| InstrDoc {
            form: None,
            length_bytes: Some(i.length_bytes),
            opcode_offset: Some(i.opcode_offset),
            has_lcp: Some(i.has_lcp),
            requires_complex_decoder: Some(i.requires_complex_decoder),
            n_available_simple_decoders: Some(i.n_available_simple_decoders),
            macro_fusible_with_next: Some(i.macro_fusible_with_next),
            is_branch: Some(i.is_branch),
            may_be_eliminated: Some(i.may_be_eliminated),
            fused_domain_uops: Some(i.fused_domain_uops),
            issue_uops: Some(i.issue_uops),
            dispatch_uops: Some(i.dispatch_uops.iter().map(|u| u.port_set.ports()).collect()),
            reads: Some(i.reads.iter().map(|v| v.name.clone()).collect()),
            writes: Some(i.writes.iter().map(|v| v.name.clone()).collect()),
            latencies: Some(
                i.latencies
                    .iter()
                    .map(|((src, dst), &cycles)| (format!("{}->{}", src, dst), cycles))
                    .collect(),
            ),
        })
        .collect();
    BlockDoc {
        base_address: block.base_address(),
        instructions,
    }
}

/// Serializes a block to a JSON string.
pub fn block_to_json(block: &BasicBlock) -> String {
    serde_json::to_string_pretty(&serialize_block(block)).expect("block serialization")
}

// ---------------------------------------------------------------------------
// Instruction database
// ---------------------------------------------------------------------------

/// Attribute record of one instruction form: the instruction fields minus
/// the per-instance layout (`length_bytes`, `opcode_offset`).
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DbRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub has_lcp: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requires_complex_decoder: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_available_simple_decoders: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_fusible_with_next: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_branch: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub may_be_eliminated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fused_domain_uops: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub issue_uops: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispatch_uops: Option<Vec<Vec<u8>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reads: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub writes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latencies: Option<BTreeMap<String, u32>>,
}

/// Instruction-attribute database: a map from form name to attribute record.
/// Duplicate forms keep the last record; a warning is recorded for each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstructionDb {
    pub records: BTreeMap<String, DbRecord>,
    pub warnings: Vec<String>,
}

impl InstructionDb {
    pub fn empty() -> InstructionDb {
        InstructionDb::default()
    }
}

impl<'de> Deserialize<'de> for InstructionDb {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: Deserializer<'de>,
    {
        struct DbVisitor;

        impl<'de> Visitor<'de> for DbVisitor {
            type Value = InstructionDb;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from instruction form to attribute record")
            }

            fn visit_map<A>(self, mut access: A) -> Result<Self::Value, A::Error>
            where
                A: MapAccess<'de>,
            {
                let mut db = InstructionDb::default();
                while let Some((form, record)) = access.next_entry::<String, DbRecord>()? {
                    if db.records.insert(form.clone(), record).is_some() {
                        db.warnings.push(format!(
                            "duplicate form '{}', keeping the last record",
                            form
                        ));
                    }
                }
                Ok(db)
            }
        }

        deserializer.deserialize_map(DbVisitor)
    }
}

pub fn parse_instruction_db(json: &str) -> Result<InstructionDb, IoError> {
    serde_json::from_str(json).map_err(parse_error)
}

pub fn load_instruction_db(path: &Path) -> Result<InstructionDb, IoError> {
    parse_instruction_db(&read_file(path)?).map_err(|e| with_path(e, path))
}

// ---------------------------------------------------------------------------
// Measurements
// ---------------------------------------------------------------------------

/// One row of a measurements file: a block path and the measured throughput
/// as written (a decimal string, normally with two fractional digits).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementRow {
    pub block: String,
    pub measured: String,
}

/// Parses a measurements CSV with header "block,measured".
pub fn parse_measurements(text: &str) -> Result<Vec<MeasurementRow>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    {
        let headers = reader.headers().map_err(parse_error)?;
        if headers.len() < 2 || &headers[0] != "block" || &headers[1] != "measured" {
            return Err(parse_error(format!(
                "measurements CSV must start with header 'block,measured', found {:?}",
                headers
            )));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(parse_error)?;
        if record.len() < 2 {
            return Err(parse_error(format!("short measurements row {:?}", record)));
        }
        rows.push(MeasurementRow {
            block: record[0].to_string(),
            measured: record[1].to_string(),
        });
    }
    Ok(rows)
}

/// Loads a measurements CSV from disk.
pub fn load_measurements(path: &Path) -> Result<Vec<MeasurementRow>, IoError> {
    parse_measurements(&read_file(path)?).map_err(|e| with_path(e, path))
}

// ---------------------------------------------------------------------------
// Microarchitecture configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    name: String,
    n_decoders: u32,
    predecode_width: u32,
    issue_width: u32,
    dsb_width: u32,
    idq_width: u32,
    lsd_enabled: bool,
    lsd_unroll: BTreeMap<u32, u32>,
    jcc_erratum: bool,
    macro_fusible_on_last_decoder: bool,
}

pub fn parse_arch_config(json: &str) -> Result<MicroArchConfig, IoError> {
    let doc: ConfigDoc = serde_json::from_str(json).map_err(|e| IoError::Config(e.to_string()))?;
    let cfg = MicroArchConfig {
        name: doc.name,
        n_decoders: doc.n_decoders,
        predecode_width: doc.predecode_width,
        issue_width: doc.issue_width,
        dsb_width: doc.dsb_width,
        idq_width: doc.idq_width,
        lsd_enabled: doc.lsd_enabled,
        lsd_unroll: doc.lsd_unroll,
        jcc_erratum: doc.jcc_erratum,
        macro_fusible_on_last_decoder: doc.macro_fusible_on_last_decoder,
    };
    cfg.validate().map_err(|e| IoError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn load_arch_config(path: &Path) -> Result<MicroArchConfig, IoError> {
    parse_arch_config(&read_file(path)?).map_err(|e| with_path(e, path))
}
