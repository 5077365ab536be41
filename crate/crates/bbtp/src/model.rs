//! Core data model: annotated instructions, basic blocks, microarchitecture
//! configurations, and per-component results.
//!
//! Everything here is immutable after construction and safe to share across
//! threads. [`BasicBlock::new`] validates the per-instruction invariants and
//! derives the quantities every predictor consumes: macro-fusion pairs, byte
//! offsets, and uop totals.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::rational::Rat;

/// Maximum length of an x86 instruction in bytes.
pub const MAX_INSTRUCTION_BYTES: u32 = 15;

/// Kind of architectural value an instruction reads or writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueKind {
    Register,
    Flag,
}

/// An architectural value (register or flag) in canonical form.
///
/// Sub-registers are canonicalized to their widest alias (e.g. `EAX` and
/// `AL` both become `RAX`), so dependence tracking treats partial-register
/// accesses as touching the full register.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValueId {
    pub kind: ValueKind,
    pub name: String,
}

impl ValueId {
    /// Builds a canonical value from a raw register/flag name.
    pub fn parse(raw: &str) -> ValueId {
        let upper = raw.trim().to_ascii_uppercase();
        if is_flag_name(&upper) {
            ValueId {
                kind: ValueKind::Flag,
                name: upper,
            }
        } else {
            ValueId {
                kind: ValueKind::Register,
                name: canonical_register_name(&upper),
            }
        }
    }

    pub fn register(name: &str) -> ValueId {
        ValueId {
            kind: ValueKind::Register,
            name: canonical_register_name(&name.to_ascii_uppercase()),
        }
    }

    pub fn flag(name: &str) -> ValueId {
        ValueId {
            kind: ValueKind::Flag,
            name: name.to_ascii_uppercase(),
        }
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn is_flag_name(name: &str) -> bool {
    matches!(
        name,
        "CF" | "PF"
            | "AF"
            | "ZF"
            | "SF"
            | "TF"
            | "IF"
            | "DF"
            | "OF"
            | "FLAGS"
            | "EFLAGS"
            | "RFLAGS"
    )
}

/// Canonicalizes x86 register aliases to the widest register name.
fn canonical_register_name(name: &str) -> String {
    // 8/16/32-bit aliases of the 64-bit GPRs.
    const GPR: &[(&str, &[&str])] = &[
        ("RAX", &["EAX", "AX", "AL", "AH"]),
        ("RBX", &["EBX", "BX", "BL", "BH"]),
        ("RCX", &["ECX", "CX", "CL", "CH"]),
        ("RDX", &["EDX", "DX", "DL", "DH"]),
        ("RSI", &["ESI", "SI", "SIL"]),
        ("RDI", &["EDI", "DI", "DIL"]),
        ("RBP", &["EBP", "BP", "BPL"]),
        ("RSP", &["ESP", "SP", "SPL"]),
        ("RIP", &["EIP", "IP"]),
    ];
    for (wide, aliases) in GPR {
        if *wide == name || aliases.contains(&name) {
            return (*wide).to_string();
        }
    }
    // R8..R15 with D/W/B suffixes.
    if let Some(rest) = name.strip_prefix('R') {
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        if !digits.is_empty() {
            if let Ok(n) = digits.parse::<u32>() {
                if (8..=15).contains(&n) {
                    let suffix = &rest[digits.len()..];
                    if matches!(suffix, "" | "D" | "W" | "B") {
                        return format!("R{}", n);
                    }
                }
            }
        }
    }
    // Vector registers: XMM/YMM aliases fold onto ZMM.
    for prefix in ["XMM", "YMM"] {
        if let Some(n) = name.strip_prefix(prefix) {
            if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
                return format!("ZMM{}", n);
            }
        }
    }
    name.to_string()
}

/// A set of execution ports, stored as a bitmask over port indices 0..63.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PortSet(u64);

impl PortSet {
    /// Builds a port set; returns `None` if empty or a port index is 64 or larger.
    pub fn new(ports: &[u8]) -> Option<PortSet> {
        if ports.is_empty() {
            return None;
        }
        let mut mask = 0u64;
        for &p in ports {
            if p >= 64 {
                return None;
            }
            mask |= 1 << p;
        }
        Some(PortSet(mask))
    }

    pub fn len(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(&self, other: PortSet) -> PortSet {
        PortSet(self.0 | other.0)
    }

    pub fn is_subset_of(&self, other: PortSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn contains(&self, port: u8) -> bool {
        port < 64 && self.0 & (1 << port) != 0
    }

    pub fn ports(&self) -> Vec<u8> {
        (0..64).filter(|&p| self.contains(p)).collect()
    }

    /// Ordering on the sorted element sequence ({0,3} before {1,2}).
    pub fn cmp_lexicographic(&self, other: &PortSet) -> std::cmp::Ordering {
        self.ports().cmp(&other.ports())
    }
}

impl fmt::Display for PortSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.ports().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", p)?;
        }
        write!(f, "}}")
    }
}

/// One unfused-domain uop and the set of ports it may be dispatched to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortUsageEntry {
    pub port_set: PortSet,
}

impl PortUsageEntry {
    pub fn new(ports: &[u8]) -> Option<PortUsageEntry> {
        PortSet::new(ports).map(|port_set| PortUsageEntry { port_set })
    }
}

/// One annotated x86 instruction instance.
///
/// Uop counts follow the pipeline domains: `fused_domain_uops` is the count
/// as stored in the IDQ/DSB/LSD, `issue_uops` the count after unlamination
/// at the issue stage, and `dispatch_uops` the unfused-domain uops sent to
/// the scheduler with their port sets. For a macro-fused pair, the combined
/// counts are annotated on the first instruction of the pair and the second
/// contributes zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub length_bytes: u32,
    pub opcode_offset: u32,
    pub has_lcp: bool,
    pub requires_complex_decoder: bool,
    pub n_available_simple_decoders: u32,
    pub macro_fusible_with_next: bool,
    pub is_branch: bool,
    pub may_be_eliminated: bool,
    pub fused_domain_uops: u32,
    pub issue_uops: u32,
    pub dispatch_uops: Vec<PortUsageEntry>,
    pub reads: Vec<ValueId>,
    pub writes: Vec<ValueId>,
    pub latencies: BTreeMap<(ValueId, ValueId), u32>,
}

impl Instruction {
    /// A minimal valid instruction, handy as a starting point.
    pub fn simple(length_bytes: u32, fused_domain_uops: u32) -> Instruction {
        Instruction {
            length_bytes,
            opcode_offset: 0,
            has_lcp: false,
            requires_complex_decoder: false,
            n_available_simple_decoders: 3,
            macro_fusible_with_next: false,
            is_branch: false,
            may_be_eliminated: false,
            fused_domain_uops,
            issue_uops: fused_domain_uops,
            dispatch_uops: Vec::new(),
            reads: Vec::new(),
            writes: Vec::new(),
            latencies: BTreeMap::new(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.length_bytes == 0 || self.length_bytes > MAX_INSTRUCTION_BYTES {
            return Err(format!(
                "length_bytes {} outside 1..={}",
                self.length_bytes, MAX_INSTRUCTION_BYTES
            ));
        }
        if self.opcode_offset >= self.length_bytes {
            return Err(format!(
                "opcode_offset {} not below length_bytes {}",
                self.opcode_offset, self.length_bytes
            ));
        }
        for entry in &self.dispatch_uops {
            if entry.port_set.is_empty() {
                return Err("dispatch uop with empty port set".to_string());
            }
        }
        for (src, dst) in self.latencies.keys() {
            if !self.reads.contains(src) {
                return Err(format!("latency source {} not in reads", src));
            }
            if !self.writes.contains(dst) {
                return Err(format!("latency destination {} not in writes", dst));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlockError {
    #[error("basic block has no instructions")]
    EmptyBlock,
    #[error("invalid instruction at index {index}: {reason}")]
    InvalidInstruction { index: usize, reason: String },
    #[error("base address {base_address:#x} above the supported maximum 2^48")]
    BaseAddressTooLarge { base_address: u64 },
}

/// An ordered basic block with macro-fusion pairing and layout resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock {
    instructions: Vec<Instruction>,
    base_address: u64,
    fusion_pairs: Vec<(usize, usize)>,
    offsets: Vec<u64>,
    total_length: u64,
}

/// Upper bound on block base addresses; keeps all layout arithmetic far
/// from 64-bit overflow (x86-64 canonical addresses fit comfortably).
pub const MAX_BASE_ADDRESS: u64 = 1 << 48;

impl BasicBlock {
    /// Derives a block from its instructions: validates invariants, forms
    /// macro-fusion pairs greedily left to right, and caches byte offsets.
    pub fn new(
        instructions: Vec<Instruction>,
        base_address: u64,
    ) -> Result<BasicBlock, BlockError> {
        if instructions.is_empty() {
            return Err(BlockError::EmptyBlock);
        }
        if base_address > MAX_BASE_ADDRESS {
            return Err(BlockError::BaseAddressTooLarge { base_address });
        }
        for (index, instr) in instructions.iter().enumerate() {
            instr
                .validate()
                .map_err(|reason| BlockError::InvalidInstruction { index, reason })?;
        }

        let mut fusion_pairs = Vec::new();
        let mut i = 0;
        while i + 1 < instructions.len() {
            if instructions[i].macro_fusible_with_next {
                fusion_pairs.push((i, i + 1));
                i += 2;
            } else {
                i += 1;
            }
        }

        let mut offsets = Vec::with_capacity(instructions.len());
        let mut cursor = base_address;
        for instr in &instructions {
            offsets.push(cursor);
            cursor += instr.length_bytes as u64;
        }
        let total_length = cursor - base_address;

        Ok(BasicBlock {
            instructions,
            base_address,
            fusion_pairs,
            offsets,
            total_length,
        })
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn base_address(&self) -> u64 {
        self.base_address
    }

    pub fn fusion_pairs(&self) -> &[(usize, usize)] {
        &self.fusion_pairs
    }

    /// Total block length in bytes.
    pub fn total_length(&self) -> u64 {
        self.total_length
    }

    /// Absolute byte address of instruction `index`.
    pub fn offset_of(&self, index: usize) -> u64 {
        self.offsets[index]
    }

    /// True if instruction `index` is the second element of a fused pair.
    pub fn is_fusion_second(&self, index: usize) -> bool {
        self.fusion_pairs.iter().any(|&(_, second)| second == index)
    }

    /// Fused-domain uops as stored in the IDQ/DSB/LSD. Second elements of
    /// macro-fused pairs contribute nothing (the first carries the pair's
    /// combined count).
    pub fn fused_domain_uops(&self) -> u64 {
        self.instructions
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_fusion_second(*i))
            .map(|(_, instr)| instr.fused_domain_uops as u64)
            .sum()
    }

    /// Uops as counted at the issue stage (after unlamination), macro-fused
    /// pairs counted once.
    pub fn issue_uops(&self) -> u64 {
        self.instructions
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_fusion_second(*i))
            .map(|(_, instr)| instr.issue_uops as u64)
            .sum()
    }

    /// Decode units: instructions with macro-fused pairs merged into one.
    pub fn decode_units(&self) -> Vec<DecodeUnit> {
        let mut units = Vec::new();
        let mut i = 0;
        while i < self.instructions.len() {
            let fused = self.fusion_pairs.iter().any(|&(first, _)| first == i);
            let last = if fused { i + 1 } else { i };
            units.push(DecodeUnit { first: i, last });
            i = last + 1;
        }
        units
    }
}

/// A decode unit: either a single instruction or a macro-fused pair,
/// identified by the index range `first..=last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeUnit {
    pub first: usize,
    pub last: usize,
}

impl DecodeUnit {
    pub fn is_fused_pair(&self) -> bool {
        self.first != self.last
    }

    pub fn requires_complex_decoder(&self, block: &BasicBlock) -> bool {
        (self.first..=self.last).any(|i| block.instructions()[i].requires_complex_decoder)
    }

    /// Simple decoders usable after this unit occupies the complex decoder.
    pub fn available_simple_decoders(&self, block: &BasicBlock) -> u32 {
        for i in self.first..=self.last {
            if block.instructions()[i].requires_complex_decoder {
                return block.instructions()[i].n_available_simple_decoders;
            }
        }
        block.instructions()[self.first].n_available_simple_decoders
    }

    pub fn is_branch(&self, block: &BasicBlock) -> bool {
        (self.first..=self.last).any(|i| block.instructions()[i].is_branch)
    }

    pub fn is_macro_fusible(&self, block: &BasicBlock) -> bool {
        block.instructions()[self.first].macro_fusible_with_next
    }

    /// Byte span `[start, start + len)` of the unit in the block layout.
    pub fn byte_span(&self, block: &BasicBlock) -> (u64, u64) {
        let start = block.offset_of(self.first);
        let len = (self.first..=self.last)
            .map(|i| block.instructions()[i].length_bytes as u64)
            .sum();
        (start, len)
    }
}

/// Per-microarchitecture model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroArchConfig {
    pub name: String,
    /// Total number of decoders (one complex + the rest simple).
    pub n_decoders: u32,
    /// Instructions predecoded per cycle.
    pub predecode_width: u32,
    /// Uops issued by the renamer per cycle.
    pub issue_width: u32,
    /// Uops streamed from the DSB per cycle.
    pub dsb_width: u32,
    /// IDQ capacity in uops; the LSD eligibility bound.
    pub idq_width: u32,
    pub lsd_enabled: bool,
    /// Unroll factor applied by the LSD, keyed by fused-domain uop count.
    /// Counts not present use factor 1.
    pub lsd_unroll: BTreeMap<u32, u32>,
    /// Whether the microarchitecture applies the JCC-erratum mitigation.
    pub jcc_erratum: bool,
    /// Whether a macro-fusible instruction can be decoded on the last
    /// simple decoder.
    pub macro_fusible_on_last_decoder: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("configuration field {0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("n_decoders must be at least 2 (one complex + simple decoders)")]
    TooFewDecoders,
}

impl MicroArchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_decoders < 2 {
            return Err(ConfigError::TooFewDecoders);
        }
        for (field, value) in [
            ("predecode_width", self.predecode_width),
            ("issue_width", self.issue_width),
            ("dsb_width", self.dsb_width),
            ("idq_width", self.idq_width),
        ] {
            if value == 0 {
                return Err(ConfigError::NonPositive(field));
            }
        }
        if self.lsd_unroll.values().any(|&u| u == 0) {
            return Err(ConfigError::NonPositive("lsd_unroll factor"));
        }
        Ok(())
    }

    /// LSD unroll factor for a loop of `n` fused-domain uops.
    pub fn lsd_unroll_factor(&self, n: u64) -> u64 {
        u32::try_from(n)
            .ok()
            .and_then(|n| self.lsd_unroll.get(&n))
            .copied()
            .unwrap_or(1) as u64
    }
}

/// Execution mode the prediction applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// Block executed as repeated straight-line copies.
    Unroll,
    /// Block executed as a loop ending in a branch to its start.
    Loop,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Unroll => f.write_str("unroll"),
            Mode::Loop => f.write_str("loop"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unroll" => Ok(Mode::Unroll),
            "loop" => Ok(Mode::Loop),
            other => Err(format!("unknown mode '{}'", other)),
        }
    }
}

/// Pipeline component a throughput bound belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Predec,
    SimplePredec,
    Dec,
    SimpleDec,
    Dsb,
    Lsd,
    Issue,
    Ports,
    Precedence,
}

impl Component {
    /// Position in the pipeline, front end first. Used to break bottleneck
    /// ties toward the front of the pipeline.
    pub fn pipeline_order(&self) -> u8 {
        match self {
            Component::Predec => 0,
            Component::SimplePredec => 1,
            Component::Dec => 2,
            Component::SimpleDec => 3,
            Component::Dsb => 4,
            Component::Lsd => 5,
            Component::Issue => 6,
            Component::Ports => 7,
            Component::Precedence => 8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Component::Predec => "Predec",
            Component::SimplePredec => "SimplePredec",
            Component::Dec => "Dec",
            Component::SimpleDec => "SimpleDec",
            Component::Dsb => "DSB",
            Component::Lsd => "LSD",
            Component::Issue => "Issue",
            Component::Ports => "Ports",
            Component::Precedence => "Precedence",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "predec" => Ok(Component::Predec),
            "simplepredec" => Ok(Component::SimplePredec),
            "dec" => Ok(Component::Dec),
            "simpledec" => Ok(Component::SimpleDec),
            "dsb" => Ok(Component::Dsb),
            "lsd" => Ok(Component::Lsd),
            "issue" => Ok(Component::Issue),
            "ports" => Ok(Component::Ports),
            "precedence" => Ok(Component::Precedence),
            other => Err(format!("unknown component '{}'", other)),
        }
    }
}

/// Per-16-byte-block predecode statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredecodeBlockStats {
    pub block_index: usize,
    /// Instruction instances whose last byte is in this block.
    pub last_byte_count: u32,
    /// Instances whose first nominal-opcode byte is in this block but whose
    /// last byte is not.
    pub opcode_only_count: u32,
    /// Instances with a length-changing prefix whose first nominal-opcode
    /// byte is in this block.
    pub lcp_count: u32,
    pub cycles_nlcp: u32,
    pub cycles_lcp: u32,
}

/// Reference to a node of the dependence graph, for interpretability output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNodeRef {
    pub instruction: usize,
    pub role: ValueRole,
    pub value: ValueId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRole {
    Consumed,
    Produced,
}

impl fmt::Display for ValueRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueRole::Consumed => f.write_str("consumed"),
            ValueRole::Produced => f.write_str("produced"),
        }
    }
}

impl fmt::Display for GraphNodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "instr#{}:{}:{}", self.instruction, self.role, self.value)
    }
}

/// Component-specific interpretability payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Detail {
    None,
    /// Per-16-byte-block predecode breakdown.
    Predecode {
        blocks: Vec<PredecodeBlockStats>,
    },
    /// Complex-decoder activations per iteration over the steady-state
    /// window of the decoder simulation.
    Decode {
        window_start_iteration: u32,
        complex_per_iteration: Vec<u32>,
    },
    /// The limiting port combination and the instructions contributing to it.
    Ports {
        limiting: PortSet,
        uop_count: u64,
        instructions: Vec<usize>,
    },
    /// The critical dependence cycle and any latency entries that had to be
    /// defaulted because the instruction data lacked them.
    Precedence {
        cycle: Vec<GraphNodeRef>,
        defaulted_latencies: Vec<String>,
    },
}

/// One component's throughput bound plus its interpretability payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub component: Component,
    /// Bound in cycles per iteration.
    pub bound: Rat,
    pub detail: Detail,
}

impl ComponentResult {
    pub fn new(component: Component, bound: Rat) -> ComponentResult {
        ComponentResult {
            component,
            bound,
            detail: Detail::None,
        }
    }
}

/// Combined throughput prediction for one basic block.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mode: Mode,
    /// Predicted reciprocal throughput in cycles per iteration: the exact
    /// maximum of the component bounds.
    pub throughput: Rat,
    pub components: BTreeMap<Component, ComponentResult>,
    /// Components whose bound equals the throughput.
    pub bottlenecks: Vec<Component>,
    /// Front-end-most bottleneck.
    pub primary_bottleneck: Component,
    pub warnings: Vec<String>,
}
