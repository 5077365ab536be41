#![no_main]

use libfuzzer_sys::fuzz_target;

use bbtp::combine::{predict_loop, predict_unroll};
use bbtp::io::{load_block_from_str, parse_instruction_db, InstructionDb};
use bbtp::model::MicroArchConfig;

fn demo_db() -> InstructionDb {
    parse_instruction_db(
        r#"{
            "NOP": {"fused_domain_uops": 1},
            "ADD_RAX_RBX": {
                "fused_domain_uops": 1,
                "dispatch_uops": [[0, 1, 5, 6]],
                "reads": ["RAX", "RBX"],
                "writes": ["RAX", "FLAGS"],
                "latencies": {"RAX->RAX": 1, "RBX->RAX": 1}
            },
            "JNZ_REL8": {"is_branch": true, "fused_domain_uops": 1, "reads": ["FLAGS"]}
        }"#,
    )
    .expect("static database parses")
}

fn config() -> MicroArchConfig {
    MicroArchConfig {
        name: "FUZZ".into(),
        n_decoders: 4,
        predecode_width: 5,
        issue_width: 4,
        dsb_width: 6,
        idq_width: 64,
        lsd_enabled: true,
        lsd_unroll: [(2, 8), (3, 8), (4, 4)].into_iter().collect(),
        jcc_erratum: true,
        macro_fusible_on_last_decoder: false,
    }
}

fuzz_target!(|data: &[u8]| {
    if data.len() > 64 * 1024 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let db = demo_db();
    let cfg = config();
    // Parsing may fail; a successfully resolved block must be analyzable
    // by both predictors without panicking.
    if let Ok(block) = load_block_from_str(text, &db, &cfg) {
        let _ = predict_unroll(&block, &cfg);
        let _ = predict_loop(&block, &cfg);
    }
});
