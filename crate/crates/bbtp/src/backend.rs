//! Back-end throughput bounds: issue width and execution-port contention.

use thiserror::Error;

use crate::model::{
    BasicBlock, Component, ComponentResult, Detail, MicroArchConfig, PortSet, PortUsageEntry,
};
use crate::rational::{rat, rat_int, Rat};

/// Throughput bound of the issue stage: uops issued by the renamer (after
/// unlamination, macro-fused pairs counted once) over the issue width.
pub fn issue(block: &BasicBlock, cfg: &MicroArchConfig) -> ComponentResult {
    let n = block.issue_uops();
    let bound = rat_int(n) / rat_int(cfg.issue_width as u64);
    ComponentResult::new(Component::Issue, bound)
}

/// Dispatch uops that participate in port contention, with the index of the
/// owning instruction. Uops from instructions that may be eliminated or that
/// are macro-fused with the preceding instruction are excluded.
fn contention_uops(block: &BasicBlock) -> Vec<(PortSet, usize)> {
    let mut uops = Vec::new();
    for (index, instr) in block.instructions().iter().enumerate() {
        if instr.may_be_eliminated || block.is_fusion_second(index) {
            continue;
        }
        for entry in &instr.dispatch_uops {
            uops.push((entry.port_set, index));
        }
    }
    uops
}

/// Throughput bound due to execution-port contention.
///
/// If `u` uops can collectively only be dispatched to the port combination
/// `pc`, the block cannot run faster than `u / |pc|` cycles per iteration.
/// Instead of checking every subset of ports, only the port combinations of
/// single uops and of pairs of uops are considered.
pub fn ports(block: &BasicBlock) -> ComponentResult {
    let uops = contention_uops(block);
    if uops.is_empty() {
        return ComponentResult::new(Component::Ports, rat(0, 1));
    }

    let mut distinct: Vec<PortSet> = Vec::new();
    for (ps, _) in &uops {
        if !distinct.contains(ps) {
            distinct.push(*ps);
        }
    }

    let mut candidates: Vec<PortSet> = Vec::new();
    for a in &distinct {
        for b in &distinct {
            let pc = a.union(*b);
            if !candidates.contains(&pc) {
                candidates.push(pc);
            }
        }
    }

    let mut best: Option<(Rat, PortSet, u64)> = None;
    for pc in candidates {
        let count = uops.iter().filter(|(ps, _)| ps.is_subset_of(pc)).count() as u64;
        let bound = rat_int(count) / rat_int(pc.len() as u64);
        let better = match &best {
            None => true,
            Some((b, bpc, _)) => {
                bound > *b
                    || (bound == *b
                        && (pc.len() < bpc.len()
                            || (pc.len() == bpc.len()
                                && pc.cmp_lexicographic(bpc) == std::cmp::Ordering::Less)))
            }
        };
        if better {
            best = Some((bound, pc, count));
        }
    }

    let (bound, limiting, uop_count) = best.expect("non-empty uop list yields a candidate");
    let mut contributors: Vec<usize> = uops
        .iter()
        .filter(|(ps, _)| ps.is_subset_of(limiting))
        .map(|(_, idx)| *idx)
        .collect();
    contributors.dedup();

    ComponentResult {
        component: Component::Ports,
        bound,
        detail: Detail::Ports {
            limiting,
            uop_count,
            instructions: contributors,
        },
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PortsOracleError {
    #[error("port oracle limits exceeded: {uops} uops over {ports} ports (max 12 uops, 8 ports)")]
    TooLarge { uops: usize, ports: u32 },
}

/// Exact port-contention bound by exhaustive subset enumeration.
///
/// Maximizes `u(S) / |S|` over every subset `S` of the ports in use, where
/// `u(S)` counts the uops whose port set is contained in `S`. Equals the
/// optimal fractional port assignment bound. Intended for testing at desk
/// scale; sizes are capped.
pub fn ports_oracle(uops: &[PortUsageEntry]) -> Result<Rat, PortsOracleError> {
    if uops.is_empty() {
        return Ok(rat(0, 1));
    }
    let all_ports = uops
        .iter()
        .fold(PortSet::default(), |acc, u| acc.union(u.port_set));
    if uops.len() > 12 || all_ports.len() > 8 {
        return Err(PortsOracleError::TooLarge {
            uops: uops.len(),
            ports: all_ports.len(),
        });
    }

    let ports: Vec<u8> = all_ports.ports();
    let mut best = rat(0, 1);
    for mask in 1u32..(1 << ports.len()) {
        let members: Vec<u8> = ports
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, &p)| p)
            .collect();
        let subset = PortSet::new(&members).expect("non-empty subset");
        let count = uops
            .iter()
            .filter(|u| u.port_set.is_subset_of(subset))
            .count() as u64;
        let ratio = rat_int(count) / rat_int(subset.len() as u64);
        if ratio > best {
            best = ratio;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Instruction;

    fn uop(ports: &[u8]) -> PortUsageEntry {
        PortUsageEntry::new(ports).unwrap()
    }

    fn block_with_uops(uop_sets: &[&[u8]]) -> BasicBlock {
        let instructions = uop_sets
            .iter()
            .map(|ports| {
                let mut i = Instruction::simple(4, 1);
                i.dispatch_uops = vec![uop(ports)];
                i
            })
            .collect();
        BasicBlock::new(instructions, 0).unwrap()
    }

    fn cfg(issue_width: u32) -> MicroArchConfig {
        MicroArchConfig {
            name: "TEST".into(),
            n_decoders: 4,
            predecode_width: 5,
            issue_width,
            dsb_width: 6,
            idq_width: 64,
            lsd_enabled: true,
            lsd_unroll: Default::default(),
            jcc_erratum: false,
            macro_fusible_on_last_decoder: false,
        }
    }

    // Oracle first: the exhaustive bound pins down the expected values the
    // pairwise heuristic is checked against.

    #[test]
    fn oracle_two_shared_one_single() {
        let uops = vec![uop(&[0, 1]), uop(&[0, 1]), uop(&[0])];
        assert_eq!(ports_oracle(&uops), Ok(rat(3, 2)));
    }

    #[test]
    fn oracle_empty_list() {
        assert_eq!(ports_oracle(&[]), Ok(rat(0, 1)));
    }

    #[test]
    fn oracle_single_port_binds() {
        let uops = vec![uop(&[0]), uop(&[0]), uop(&[1])];
        assert_eq!(ports_oracle(&uops), Ok(rat(2, 1)));
    }

    #[test]
    fn oracle_rejects_oversized_inputs() {
        let uops = vec![uop(&[0]); 13];
        assert!(matches!(
            ports_oracle(&uops),
            Err(PortsOracleError::TooLarge { .. })
        ));
        let wide = vec![uop(&[0, 1, 2, 3, 4, 5, 6, 7, 8])];
        assert!(matches!(
            ports_oracle(&wide),
            Err(PortsOracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn heuristic_two_shared_one_single() {
        let block = block_with_uops(&[&[0, 1], &[0, 1], &[0]]);
        let result = ports(&block);
        assert_eq!(result.bound, rat(3, 2));
        match result.detail {
            Detail::Ports {
                limiting,
                uop_count,
                ref instructions,
            } => {
                assert_eq!(limiting, PortSet::new(&[0, 1]).unwrap());
                assert_eq!(uop_count, 3);
                assert_eq!(instructions, &[0, 1, 2]);
            }
            ref other => panic!("unexpected detail {:?}", other),
        }
    }

    #[test]
    fn heuristic_serialized_on_one_port() {
        let block = block_with_uops(&[&[0], &[0], &[0]]);
        assert_eq!(ports(&block).bound, rat(3, 1));
    }

    #[test]
    fn heuristic_distinct_singletons() {
        let block = block_with_uops(&[&[0], &[1], &[2], &[3]]);
        assert_eq!(ports(&block).bound, rat(1, 1));
    }

    #[test]
    fn heuristic_matches_oracle_on_worked_cases() {
        for sets in [
            vec![vec![0u8, 1], vec![0, 1], vec![0]],
            vec![vec![0], vec![0], vec![0]],
            vec![vec![0], vec![1], vec![2], vec![3]],
        ] {
            let refs: Vec<&[u8]> = sets.iter().map(|s| s.as_slice()).collect();
            let block = block_with_uops(&refs);
            let uops: Vec<PortUsageEntry> = sets.iter().map(|s| uop(s)).collect();
            assert_eq!(ports(&block).bound, ports_oracle(&uops).unwrap());
        }
    }

    #[test]
    fn heuristic_is_exact_when_port_sets_form_a_chain() {
        // Nested port sets: the optimal subset is always one of the chain
        // elements, all of which the pairwise heuristic considers.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let depth = rng.gen_range(1..=4usize);
            let mut chain: Vec<Vec<u8>> = Vec::new();
            let mut current: Vec<u8> = Vec::new();
            for _ in 0..depth {
                loop {
                    let p = rng.gen_range(0..8u8);
                    if !current.contains(&p) {
                        current.push(p);
                        break;
                    }
                }
                chain.push(current.clone());
            }
            let uops: Vec<PortUsageEntry> = (0..rng.gen_range(1..=8usize))
                .map(|_| uop(&chain[rng.gen_range(0..chain.len())]))
                .collect();
            let instructions: Vec<Instruction> = uops
                .iter()
                .map(|u| {
                    let mut i = Instruction::simple(4, 1);
                    i.dispatch_uops = vec![*u];
                    i
                })
                .collect();
            let block = BasicBlock::new(instructions, 0).unwrap();
            assert_eq!(ports(&block).bound, ports_oracle(&uops).unwrap());
        }
    }

    #[test]
    fn eliminated_and_fused_second_uops_excluded() {
        let mut mov = Instruction::simple(3, 1);
        mov.may_be_eliminated = true;
        mov.dispatch_uops = vec![uop(&[0])];
        let mut cmp = Instruction::simple(3, 1);
        cmp.macro_fusible_with_next = true;
        cmp.dispatch_uops = vec![uop(&[0])];
        let mut jcc = Instruction::simple(2, 1);
        jcc.is_branch = true;
        jcc.dispatch_uops = vec![uop(&[0])];
        let block = BasicBlock::new(vec![mov, cmp, jcc], 0).unwrap();
        // Only the cmp (pair head) contributes: 1 uop on port 0.
        assert_eq!(ports(&block).bound, rat(1, 1));
    }

    #[test]
    fn zero_dispatch_uops_means_no_contention() {
        let block = BasicBlock::new(vec![Instruction::simple(4, 1)], 0).unwrap();
        let result = ports(&block);
        assert_eq!(result.bound, rat(0, 1));
        assert_eq!(result.detail, Detail::None);
    }

    #[test]
    fn tie_break_prefers_smaller_then_lexicographic_combination() {
        // {0} and {1} both give 1/1; the reported combination is {0}.
        let block = block_with_uops(&[&[0], &[1]]);
        let result = ports(&block);
        assert_eq!(result.bound, rat(1, 1));
        match result.detail {
            Detail::Ports { limiting, .. } => {
                assert_eq!(limiting, PortSet::new(&[0]).unwrap());
            }
            ref other => panic!("unexpected detail {:?}", other),
        }
    }

    #[test]
    fn issue_examples() {
        // 8 issue uops over width 4.
        let block = BasicBlock::new(vec![Instruction::simple(4, 2); 4], 0).unwrap();
        assert_eq!(issue(&block, &cfg(4)).bound, rat(2, 1));

        // n = issue width.
        let block = BasicBlock::new(vec![Instruction::simple(4, 1); 4], 0).unwrap();
        assert_eq!(issue(&block, &cfg(4)).bound, rat(1, 1));

        // One micro-fused uop unlaminates: raw fused count 4, issue count 5.
        let mut unlaminated = Instruction::simple(4, 1);
        unlaminated.issue_uops = 2;
        let block = BasicBlock::new(
            vec![
                unlaminated,
                Instruction::simple(4, 1),
                Instruction::simple(4, 1),
                Instruction::simple(4, 1),
            ],
            0,
        )
        .unwrap();
        assert_eq!(block.fused_domain_uops(), 4);
        assert_eq!(issue(&block, &cfg(4)).bound, rat(5, 4));
    }

    #[test]
    fn issue_scales_linearly_under_duplication() {
        let instrs = vec![Instruction::simple(4, 2), Instruction::simple(4, 1)];
        let block = BasicBlock::new(instrs.clone(), 0).unwrap();
        let doubled =
            BasicBlock::new(instrs.iter().cloned().chain(instrs.clone()).collect(), 0).unwrap();
        let c = cfg(4);
        assert_eq!(
            issue(&doubled, &c).bound,
            issue(&block, &c).bound * rat(2, 1)
        );
    }
}
