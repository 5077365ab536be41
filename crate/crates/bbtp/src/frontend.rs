//! Front-end throughput bounds: predecoder, decoder, DSB, and LSD.

use num_integer::Integer;
use thiserror::Error;

use crate::model::{
    BasicBlock, Component, ComponentResult, Detail, MicroArchConfig, Mode, PredecodeBlockStats,
};
use crate::rational::{rat_int, Rat};

/// Size of the aligned fetch blocks the predecoder works on.
const FETCH_BLOCK_BYTES: u64 = 16;

/// Extra predecode cycles for an instruction with a length-changing prefix.
const LCP_PENALTY_CYCLES: i64 = 3;

/// Throughput bound of the predecoder.
///
/// Instructions are fetched in aligned 16-byte blocks and up to
/// `predecode_width` instructions are predecoded per cycle. An instruction
/// whose last byte and nominal opcode byte fall into different blocks costs
/// one extra cycle, and an instruction with a length-changing prefix forces
/// a three-cycle penalty that overlaps with the predecode of the previous
/// block. In unroll mode the layout repeats after `lcm(l, 16) / l` copies;
/// the returned bound is the per-copy average over one such period. In loop
/// mode a single copy is analyzed.
pub fn predec(block: &BasicBlock, cfg: &MicroArchConfig, mode: Mode) -> ComponentResult {
    let copies = match mode {
        Mode::Unroll => unroll_period(block),
        Mode::Loop => 1,
    };
    let stats = predecode_blocks(block, cfg, mode, copies);
    let total: u64 = stats
        .iter()
        .map(|b| (b.cycles_nlcp + b.cycles_lcp) as u64)
        .sum();
    ComponentResult {
        component: Component::Predec,
        bound: rat_int(total) / rat_int(copies),
        detail: Detail::Predecode { blocks: stats },
    }
}

/// Number of copies after which the unrolled layout repeats relative to the
/// 16-byte fetch grid.
pub fn unroll_period(block: &BasicBlock) -> u64 {
    let l = block.total_length();
    l.lcm(&FETCH_BLOCK_BYTES) / l
}

/// Predecoder bound over an explicit number of unrolled copies.
///
/// `copies` must complete whole 16-byte periods (`copies * length` divisible
/// by 16), e.g. any multiple of [`unroll_period`]. Exposed so the
/// periodicity of the steady state can be checked directly.
pub fn predec_unroll_bound_with_copies(
    block: &BasicBlock,
    cfg: &MicroArchConfig,
    copies: u64,
) -> Rat {
    assert!(copies >= 1, "at least one copy required");
    let total = copies
        .checked_mul(block.total_length())
        .expect("copy count overflows the layout");
    assert_eq!(
        total % FETCH_BLOCK_BYTES,
        0,
        "copies must complete whole 16-byte periods"
    );
    let stats = predecode_blocks(block, cfg, Mode::Unroll, copies);
    let total: u64 = stats
        .iter()
        .map(|b| (b.cycles_nlcp + b.cycles_lcp) as u64)
        .sum();
    rat_int(total) / rat_int(copies)
}

fn predecode_blocks(
    block: &BasicBlock,
    cfg: &MicroArchConfig,
    mode: Mode,
    copies: u64,
) -> Vec<PredecodeBlockStats> {
    let base = block.base_address();
    let length = block.total_length();
    let grid_origin = base / FETCH_BLOCK_BYTES;

    // In unroll mode the stream of copies is periodic with period
    // `copies * length` bytes (a multiple of 16), so the first and last
    // partially covered fetch blocks are the same steady-state block and are
    // folded together. In loop mode execution restarts at the base address
    // each iteration, so every touched block is counted separately.
    let n_blocks = match mode {
        Mode::Unroll => {
            debug_assert_eq!((copies * length) % FETCH_BLOCK_BYTES, 0);
            ((copies * length) / FETCH_BLOCK_BYTES) as usize
        }
        Mode::Loop => ((base + length - 1) / FETCH_BLOCK_BYTES - grid_origin + 1) as usize,
    };
    let block_of = |addr: u64| -> usize {
        let idx = (addr / FETCH_BLOCK_BYTES - grid_origin) as usize;
        match mode {
            Mode::Unroll => idx % n_blocks,
            Mode::Loop => idx,
        }
    };

    let mut last_counts = vec![0u32; n_blocks];
    let mut opcode_counts = vec![0u32; n_blocks];
    let mut lcp_counts = vec![0u32; n_blocks];

    for copy in 0..copies {
        for (i, instr) in block.instructions().iter().enumerate() {
            let start = block.offset_of(i) + copy * length;
            let last = start + instr.length_bytes as u64 - 1;
            let opcode = start + instr.opcode_offset as u64;
            let b_last = block_of(last);
            let b_opcode = block_of(opcode);
            last_counts[b_last] += 1;
            if b_opcode != b_last {
                opcode_counts[b_opcode] += 1;
            }
            if instr.has_lcp {
                lcp_counts[b_opcode] += 1;
            }
        }
    }

    let width = cfg.predecode_width as u64;
    let cycles_nlcp: Vec<u32> = (0..n_blocks)
        .map(|b| ((last_counts[b] + opcode_counts[b]) as u64).div_ceil(width) as u32)
        .collect();

    (0..n_blocks)
        .map(|b| {
            let prev = cycles_nlcp[(b + n_blocks - 1) % n_blocks] as i64;
            let lcp_cycles = (LCP_PENALTY_CYCLES * lcp_counts[b] as i64 - (prev - 1)).max(0) as u32;
            PredecodeBlockStats {
                block_index: b,
                last_byte_count: last_counts[b],
                opcode_only_count: opcode_counts[b],
                lcp_count: lcp_counts[b],
                cycles_nlcp: cycles_nlcp[b],
                cycles_lcp: lcp_cycles,
            }
        })
        .collect()
}

/// Simplified predecoder bound: one 16-byte block per cycle.
pub fn simple_predec(block: &BasicBlock) -> ComponentResult {
    let bound = rat_int(block.total_length()) / rat_int(FETCH_BLOCK_BYTES);
    ComponentResult::new(Component::SimplePredec, bound)
}

/// Throughput bound of the decoding unit.
///
/// Simulates the allocation of decode units (macro-fused pairs count as one)
/// to the one complex and several simple decoders until the first unit lands
/// on the same decoder a second time; the steady state then repeats. The
/// complex decoder handles multi-uop instructions and always takes the first
/// unit of a decode group, so the number of complex-decoder activations per
/// iteration equals the decode cycles spent on that iteration.
pub fn dec(block: &BasicBlock, cfg: &MicroArchConfig) -> ComponentResult {
    let units = block.decode_units();
    let d = cfg.n_decoders as usize;

    let mut cur_dec = d - 1;
    let mut n_avail: u32 = 0;
    // Index 0 unused; iterations are 1-based.
    let mut complex_per_iteration: Vec<u32> = vec![0];
    let mut first_on_dec: Vec<i64> = vec![-1; d];

    for iteration in 1..=(d + 1) {
        complex_per_iteration.push(0);
        for (pos, unit) in units.iter().enumerate() {
            if unit.requires_complex_decoder(block) {
                cur_dec = 0;
                n_avail = unit.available_simple_decoders(block);
            } else if n_avail == 0
                || cur_dec + 1 >= d
                || (cur_dec + 1 == d - 1
                    && unit.is_macro_fusible(block)
                    && !cfg.macro_fusible_on_last_decoder)
            {
                cur_dec = 0;
                n_avail = cfg.n_decoders - 1;
            } else {
                cur_dec += 1;
                n_avail -= 1;
            }
            if unit.is_branch(block) {
                n_avail = 0;
            }
            if cur_dec == 0 {
                complex_per_iteration[iteration] += 1;
            }
            if pos == 0 {
                let f = first_on_dec[cur_dec];
                if f >= 0 {
                    let f = f as usize;
                    let period = (iteration - f) as u64;
                    let window = complex_per_iteration[f..iteration].to_vec();
                    let cycles: u64 = window.iter().map(|&c| c as u64).sum();
                    return ComponentResult {
                        component: Component::Dec,
                        bound: rat_int(cycles) / rat_int(period),
                        detail: Detail::Decode {
                            window_start_iteration: f as u32,
                            complex_per_iteration: window,
                        },
                    };
                }
                first_on_dec[cur_dec] = iteration as i64;
            }
        }
    }
    unreachable!(
        "first unit revisits one of {} decoders within {} iterations",
        d,
        d + 1
    )
}

/// Simplified decoder bound: `n` decode units over `d` decoders, floored by
/// the number of units that need the complex decoder.
pub fn simple_dec(block: &BasicBlock, cfg: &MicroArchConfig) -> ComponentResult {
    let units = block.decode_units();
    let n = units.len() as u64;
    let c = units
        .iter()
        .filter(|u| u.requires_complex_decoder(block))
        .count() as u64;
    let bound = (rat_int(n) / rat_int(cfg.n_decoders as u64)).max(rat_int(c));
    ComponentResult::new(Component::SimpleDec, bound)
}

/// Byte length below which a looping block pays the DSB branch-cutoff: uops
/// in the same 32-byte block as the branch cannot be streamed in the cycle
/// after it.
const DSB_BRANCH_WINDOW_BYTES: u64 = 32;

/// Throughput bound of the decoded stream buffer.
pub fn dsb(block: &BasicBlock, cfg: &MicroArchConfig) -> ComponentResult {
    let n = block.fused_domain_uops();
    let w = cfg.dsb_width as u64;
    let bound = if block.total_length() < DSB_BRANCH_WINDOW_BYTES {
        rat_int(n.div_ceil(w))
    } else {
        rat_int(n) / rat_int(w)
    };
    ComponentResult::new(Component::Dsb, bound)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LsdError {
    #[error("LSD is disabled on {arch}")]
    Disabled { arch: String },
    #[error("block has {uops} fused-domain uops, above the IDQ capacity {idq_width}")]
    TooManyUops { uops: u64, idq_width: u32 },
}

/// Throughput bound of the loop stream detector.
///
/// The last uop of an iteration and the first uop of the next cannot be
/// streamed in the same cycle, so small loops are unrolled by a
/// configuration-provided factor before streaming. Only applicable when the
/// LSD is enabled and the loop fits into the IDQ; the prediction combiner
/// guards this.
pub fn lsd(block: &BasicBlock, cfg: &MicroArchConfig) -> Result<ComponentResult, LsdError> {
    if !cfg.lsd_enabled {
        return Err(LsdError::Disabled {
            arch: cfg.name.clone(),
        });
    }
    let n = block.fused_domain_uops();
    if n > cfg.idq_width as u64 {
        return Err(LsdError::TooManyUops {
            uops: n,
            idq_width: cfg.idq_width,
        });
    }
    let unroll = cfg.lsd_unroll_factor(n);
    let width = cfg.issue_width as i128;
    let streamed_cycles = Integer::div_ceil(&(n as i128 * unroll as i128), &width);
    let bound = Rat::new(streamed_cycles, unroll as i128);
    Ok(ComponentResult::new(Component::Lsd, bound))
}
