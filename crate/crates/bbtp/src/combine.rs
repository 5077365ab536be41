//! Combines per-component bounds into a throughput prediction, identifies
//! bottlenecks, and answers counterfactual idealization queries.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::backend;
use crate::frontend;
use crate::model::{BasicBlock, Component, ComponentResult, MicroArchConfig, Mode, Prediction};
use crate::precedence;
use crate::rational::{rat, Rat};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PredictError {
    #[error(transparent)]
    Graph(#[from] precedence::GraphError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CounterfactualError {
    #[error("component {0} is not part of this prediction mode")]
    NotApplicable(Component),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Bytes per aligned block relevant to the JCC-erratum mitigation.
const JCC_BLOCK_BYTES: u64 = 32;

/// Builds a prediction from already-computed component bounds: the
/// throughput is the exact maximum of the bounds, every component whose
/// bound equals it is a bottleneck, and the primary bottleneck is the one
/// closest to the front end.
pub fn combine(mode: Mode, results: Vec<ComponentResult>, warnings: Vec<String>) -> Prediction {
    assert!(!results.is_empty(), "at least one component bound required");
    let throughput = results
        .iter()
        .map(|r| r.bound)
        .max()
        .expect("non-empty results");
    let mut bottlenecks: Vec<Component> = results
        .iter()
        .filter(|r| r.bound == throughput)
        .map(|r| r.component)
        .collect();
    bottlenecks.sort_by_key(|c| c.pipeline_order());
    let primary_bottleneck = bottlenecks[0];
    let mut components = BTreeMap::new();
    for r in results {
        components.insert(r.component, r);
    }
    Prediction {
        mode,
        throughput,
        components,
        bottlenecks,
        primary_bottleneck,
        warnings,
    }
}

/// Predicts the throughput of a block executed as repeated straight-line
/// copies: the maximum over predecoder, decoder, issue, ports, and
/// precedence bounds.
pub fn predict_unroll(
    block: &BasicBlock,
    cfg: &MicroArchConfig,
) -> Result<Prediction, PredictError> {
    let graph = precedence::build_graph(block);
    let results = vec![
        frontend::predec(block, cfg, Mode::Unroll),
        frontend::dec(block, cfg),
        backend::issue(block, cfg),
        backend::ports(block),
        precedence::max_cycle_ratio(&graph)?,
    ];
    Ok(combine(Mode::Unroll, results, Vec::new()))
}

/// Predicts the throughput of a block executed as a loop.
///
/// The front-end bound depends on how the loop is served: blocks affected
/// by the JCC-erratum mitigation go through the legacy predecode/decode
/// path, loops that fit into the IDQ are streamed by the LSD when it is
/// enabled, and everything else comes from the DSB.
pub fn predict_loop(block: &BasicBlock, cfg: &MicroArchConfig) -> Result<Prediction, PredictError> {
    let mut warnings = Vec::new();
    let last_unit_is_branch = block
        .decode_units()
        .last()
        .map(|u| u.is_branch(block))
        .unwrap_or(false);
    if !last_unit_is_branch {
        warnings.push(
            "block does not end in a branch; loop-mode prediction may not be meaningful"
                .to_string(),
        );
    }

    let mut results = Vec::new();
    if jcc_affected(block, cfg) {
        results.push(frontend::predec(block, cfg, Mode::Loop));
        results.push(frontend::dec(block, cfg));
    } else if cfg.lsd_enabled && block.fused_domain_uops() <= cfg.idq_width as u64 {
        results.push(frontend::lsd(block, cfg).expect("eligibility checked"));
    } else {
        results.push(frontend::dsb(block, cfg));
    }
    results.push(backend::issue(block, cfg));
    results.push(backend::ports(block));
    let graph = precedence::build_graph(block);
    results.push(precedence::max_cycle_ratio(&graph)?);
    Ok(combine(Mode::Loop, results, warnings))
}

/// Predicts under the given mode.
pub fn predict(
    block: &BasicBlock,
    cfg: &MicroArchConfig,
    mode: Mode,
) -> Result<Prediction, PredictError> {
    match mode {
        Mode::Unroll => predict_unroll(block, cfg),
        Mode::Loop => predict_loop(block, cfg),
    }
}

/// True if the block is affected by the JCC-erratum mitigation: the
/// microarchitecture applies it and some jump unit (a macro-fused pair
/// counts as one unit spanning both instructions) crosses or ends on a
/// 32-byte boundary.
pub fn jcc_affected(block: &BasicBlock, cfg: &MicroArchConfig) -> bool {
    if !cfg.jcc_erratum {
        return false;
    }
    block.decode_units().iter().any(|unit| {
        if !unit.is_branch(block) {
            return false;
        }
        let (start, len) = unit.byte_span(block);
        let end_inclusive = start + len - 1;
        start / JCC_BLOCK_BYTES != end_inclusive / JCC_BLOCK_BYTES
            || (start + len) % JCC_BLOCK_BYTES == 0
    })
}

/// Recomputes the prediction with one component idealized (its bound set to
/// zero) and reports the resulting speedup (baseline throughput divided by
/// idealized throughput).
///
/// The speedup is `None` in the degenerate case where the idealized
/// throughput is zero while the baseline was positive (unbounded speedup).
pub fn counterfactual(
    block: &BasicBlock,
    cfg: &MicroArchConfig,
    mode: Mode,
    idealized: Component,
) -> Result<(Prediction, Option<Rat>), CounterfactualError> {
    let baseline = predict(block, cfg, mode)?;
    counterfactual_of(&baseline, idealized)
}

/// Counterfactual against an existing prediction.
pub fn counterfactual_of(
    baseline: &Prediction,
    idealized: Component,
) -> Result<(Prediction, Option<Rat>), CounterfactualError> {
    if !baseline.components.contains_key(&idealized) {
        return Err(CounterfactualError::NotApplicable(idealized));
    }
    let results: Vec<ComponentResult> = baseline
        .components
        .values()
        .map(|r| {
            let mut r = r.clone();
            if r.component == idealized {
                r.bound = rat(0, 1);
            }
            r
        })
        .collect();
    let ideal = combine(baseline.mode, results, baseline.warnings.clone());
    let speedup = if ideal.throughput == rat(0, 1) {
        if baseline.throughput == rat(0, 1) {
            Some(rat(1, 1))
        } else {
            None
        }
    } else {
        Some(baseline.throughput / ideal.throughput)
    };
    Ok((ideal, speedup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Instruction, PortUsageEntry};
    use crate::rational::rat_int;

    fn cfg() -> MicroArchConfig {
        MicroArchConfig {
            name: "TEST".into(),
            n_decoders: 4,
            predecode_width: 5,
            issue_width: 4,
            dsb_width: 6,
            idq_width: 64,
            lsd_enabled: true,
            lsd_unroll: Default::default(),
            jcc_erratum: false,
            macro_fusible_on_last_decoder: false,
        }
    }

    fn results_from(bounds: &[(Component, i128, i128)]) -> Vec<ComponentResult> {
        bounds
            .iter()
            .map(|&(c, n, d)| ComponentResult::new(c, rat(n, d)))
            .collect()
    }

    #[test]
    fn combine_takes_max_and_singles_out_bottleneck() {
        let p = combine(
            Mode::Unroll,
            results_from(&[
                (Component::Predec, 3, 2),
                (Component::Dec, 5, 4),
                (Component::Issue, 5, 4),
                (Component::Ports, 3, 2),
                (Component::Precedence, 5, 1),
            ]),
            Vec::new(),
        );
        assert_eq!(p.throughput, rat(5, 1));
        assert_eq!(p.bottlenecks, vec![Component::Precedence]);
        assert_eq!(p.primary_bottleneck, Component::Precedence);
    }

    #[test]
    fn combine_breaks_ties_toward_front_end() {
        let p = combine(
            Mode::Unroll,
            results_from(&[
                (Component::Predec, 2, 1),
                (Component::Dec, 1, 1),
                (Component::Issue, 1, 1),
                (Component::Ports, 2, 1),
                (Component::Precedence, 1, 1),
            ]),
            Vec::new(),
        );
        assert_eq!(p.throughput, rat(2, 1));
        assert_eq!(p.bottlenecks, vec![Component::Predec, Component::Ports]);
        assert_eq!(p.primary_bottleneck, Component::Predec);
    }

    #[test]
    fn predict_unroll_minimal_block() {
        // One 4-byte single-uop instruction that needs the complex decoder,
        // dispatching one uop to port 0, with no self-dependence.
        let mut i = Instruction::simple(4, 1);
        i.requires_complex_decoder = true;
        i.n_available_simple_decoders = 3;
        i.dispatch_uops = vec![PortUsageEntry::new(&[0]).unwrap()];
        let block = BasicBlock::new(vec![i], 0).unwrap();
        let p = predict_unroll(&block, &cfg()).unwrap();

        assert_eq!(p.components[&Component::Predec].bound, rat(1, 4));
        assert_eq!(p.components[&Component::Dec].bound, rat(1, 1));
        assert_eq!(p.components[&Component::Issue].bound, rat(1, 4));
        assert_eq!(p.components[&Component::Ports].bound, rat(1, 1));
        assert_eq!(p.components[&Component::Precedence].bound, rat(0, 1));
        assert_eq!(p.throughput, rat(1, 1));
        assert_eq!(p.bottlenecks, vec![Component::Dec, Component::Ports]);
        assert_eq!(p.primary_bottleneck, Component::Dec);
    }

    fn loop_block(uops: usize, instr_len: u32) -> BasicBlock {
        let mut instrs: Vec<Instruction> = (0..uops - 1)
            .map(|_| Instruction::simple(instr_len, 1))
            .collect();
        let mut branch = Instruction::simple(instr_len, 1);
        branch.is_branch = true;
        instrs.push(branch);
        BasicBlock::new(instrs, 0).unwrap()
    }

    #[test]
    fn predict_loop_uses_lsd_when_eligible() {
        let mut c = cfg();
        c.lsd_unroll.insert(3, 8);
        let block = loop_block(3, 4);
        let p = predict_loop(&block, &c).unwrap();
        assert!(p.components.contains_key(&Component::Lsd));
        assert_eq!(p.components[&Component::Lsd].bound, rat(3, 4));
        assert!(!p.components.contains_key(&Component::Dsb));
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn predict_loop_jcc_forces_legacy_decode_path() {
        let mut c = cfg();
        c.jcc_erratum = true;
        // Jump occupying bytes [28, 32) ends on a 32-byte boundary.
        let mut instrs: Vec<Instruction> = (0..7).map(|_| Instruction::simple(4, 1)).collect();
        let mut branch = Instruction::simple(4, 1);
        branch.is_branch = true;
        instrs.push(branch);
        let block = BasicBlock::new(instrs, 0).unwrap();
        assert!(jcc_affected(&block, &c));
        let p = predict_loop(&block, &c).unwrap();
        assert!(p.components.contains_key(&Component::Predec));
        assert!(p.components.contains_key(&Component::Dec));
        assert!(!p.components.contains_key(&Component::Lsd));
        assert!(!p.components.contains_key(&Component::Dsb));
    }

    #[test]
    fn predict_loop_falls_back_to_dsb() {
        let mut c = cfg();
        c.lsd_enabled = false;
        c.dsb_width = 6;
        // Six uops, 36 bytes: DSB streams n/w = 1.0 per iteration.
        let block = loop_block(6, 6);
        let p = predict_loop(&block, &c).unwrap();
        assert_eq!(p.components[&Component::Dsb].bound, rat(1, 1));
        assert!(p.components.contains_key(&Component::Issue));
    }

    #[test]
    fn predict_loop_warns_without_trailing_branch() {
        let block = BasicBlock::new(vec![Instruction::simple(4, 1)], 0).unwrap();
        let p = predict_loop(&block, &cfg()).unwrap();
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn jcc_boundary_cases() {
        let mut c = cfg();
        c.jcc_erratum = true;

        let jump_at = |base: u64| {
            let mut branch = Instruction::simple(4, 1);
            branch.is_branch = true;
            BasicBlock::new(vec![branch], base).unwrap()
        };
        // Crossing byte 32.
        assert!(jcc_affected(&jump_at(30), &c));
        // Ending exactly on the boundary.
        assert!(jcc_affected(&jump_at(28), &c));
        // Well inside the first 32-byte block.
        assert!(!jcc_affected(&jump_at(0), &c));
        // Mitigation absent: never affected.
        assert!(!jcc_affected(&jump_at(30), &cfg()));
    }

    #[test]
    fn jcc_span_includes_fused_pair() {
        let mut c = cfg();
        c.jcc_erratum = true;
        // cmp at [30, 34) fused with jcc at [34, 36): the jump instruction
        // alone stays inside the second 32-byte block, but the fused unit
        // starts in the first one and therefore crosses.
        let pad = Instruction::simple(15, 1);
        let mut cmp = Instruction::simple(4, 1);
        cmp.macro_fusible_with_next = true;
        let mut jcc = Instruction::simple(2, 1);
        jcc.is_branch = true;
        let block = BasicBlock::new(vec![pad.clone(), pad, cmp, jcc.clone()], 0).unwrap();
        assert_eq!(block.offset_of(2), 30);
        assert!(jcc_affected(&block, &c));

        // The same jump without fusion is unaffected.
        let pad = Instruction::simple(15, 1);
        let unfused =
            BasicBlock::new(vec![pad.clone(), pad, Instruction::simple(4, 1), jcc], 0).unwrap();
        assert!(!jcc_affected(&unfused, &c));
    }

    #[test]
    fn counterfactual_tied_bottleneck_absorbs_gain() {
        let baseline = combine(
            Mode::Unroll,
            results_from(&[
                (Component::Predec, 2, 1),
                (Component::Dec, 1, 1),
                (Component::Issue, 1, 1),
                (Component::Ports, 2, 1),
                (Component::Precedence, 1, 1),
            ]),
            Vec::new(),
        );
        let (ideal, speedup) = counterfactual_of(&baseline, Component::Predec).unwrap();
        assert_eq!(ideal.throughput, rat(2, 1));
        assert_eq!(speedup, Some(rat(1, 1)));
        assert_eq!(ideal.primary_bottleneck, Component::Ports);
    }

    #[test]
    fn counterfactual_removing_sole_bottleneck() {
        let baseline = combine(
            Mode::Unroll,
            results_from(&[
                (Component::Predec, 3, 2),
                (Component::Dec, 1, 1),
                (Component::Issue, 1, 1),
                (Component::Ports, 3, 2),
                (Component::Precedence, 5, 1),
            ]),
            Vec::new(),
        );
        let (ideal, speedup) = counterfactual_of(&baseline, Component::Precedence).unwrap();
        assert_eq!(ideal.throughput, rat(3, 2));
        assert_eq!(speedup, Some(rat(10, 3)));
    }

    #[test]
    fn counterfactual_non_bottleneck_changes_nothing() {
        let baseline = combine(
            Mode::Unroll,
            results_from(&[
                (Component::Predec, 1, 2),
                (Component::Dec, 1, 1),
                (Component::Issue, 1, 4),
                (Component::Ports, 1, 1),
                (Component::Precedence, 3, 1),
            ]),
            Vec::new(),
        );
        let (ideal, speedup) = counterfactual_of(&baseline, Component::Issue).unwrap();
        assert_eq!(ideal.throughput, baseline.throughput);
        assert_eq!(speedup, Some(rat(1, 1)));
    }

    #[test]
    fn counterfactual_requires_relevant_component() {
        let mut c = cfg();
        c.lsd_unroll.insert(3, 8);
        let block = loop_block(3, 4);
        let err = counterfactual(&block, &c, Mode::Loop, Component::Dsb).unwrap_err();
        assert_eq!(err, CounterfactualError::NotApplicable(Component::Dsb));
    }

    #[test]
    fn loop_front_end_ignores_lengths_when_streaming() {
        // With no JCC mitigation and LSD eligibility, instruction lengths
        // only matter through the DSB length test, which the LSD path does
        // not take.
        let c = cfg();
        let short = loop_block(4, 2);
        let long = loop_block(4, 8);
        let p_short = predict_loop(&short, &c).unwrap();
        let p_long = predict_loop(&long, &c).unwrap();
        assert_eq!(
            p_short.components[&Component::Lsd].bound,
            p_long.components[&Component::Lsd].bound
        );
        assert_eq!(p_short.throughput, p_long.throughput);
    }

    #[test]
    fn unroll_duplication_keeps_primary_bottleneck_for_linear_components() {
        // Issue-bound block: duplication scales Issue and Ports linearly per
        // copy, so per-iteration bounds and the primary bottleneck persist.
        let mut i = Instruction::simple(4, 3);
        i.dispatch_uops = vec![PortUsageEntry::new(&[0, 1, 2, 3]).unwrap()];
        let block = BasicBlock::new(vec![i.clone(), i.clone()], 0).unwrap();
        let doubled = BasicBlock::new(vec![i.clone(), i.clone(), i.clone(), i], 0).unwrap();
        let p = predict_unroll(&block, &cfg()).unwrap();
        let p2 = predict_unroll(&doubled, &cfg()).unwrap();
        assert_eq!(p.primary_bottleneck, Component::Issue);
        assert_eq!(p2.primary_bottleneck, Component::Issue);
        assert_eq!(
            p2.components[&Component::Issue].bound,
            p.components[&Component::Issue].bound * rat_int(2)
        );
    }
}
