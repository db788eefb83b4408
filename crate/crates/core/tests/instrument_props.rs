mod common;

use proptest::prelude::*;

use common::{generate, instrumented, outcome, tape, traced, Shape};
use tsvm_core::instrument::{instrument, verify_instrumentation, InstrumentError};
use tsvm_core::isa::{serialize, INCTS_ENCODED_SIZE};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn instrumented_programs_verify(seed in any::<u64>()) {
        let p = generate(seed, Shape::Mixed);
        let (q, report) = instrument(&p, None).unwrap();
        let v = verify_instrumentation(&p, &q, None);
        prop_assert!(v.is_ok(), "{:?}", v.violations);
        prop_assert_eq!(serialize(&q).len() - serialize(&p).len(), report.inserted_count * INCTS_ENCODED_SIZE);
        prop_assert_eq!(report.size_after - report.size_before, report.inserted_count * INCTS_ENCODED_SIZE);
    }

    #[test]
    fn second_pass_is_rejected(seed in any::<u64>()) {
        let q = instrumented(&generate(seed, Shape::Mixed));
        prop_assert_eq!(instrument(&q, None).unwrap_err(), InstrumentError::AlreadyInstrumented);
        let only = vec!["rec".to_string()];
        prop_assert_eq!(instrument(&q, Some(&only)).unwrap_err(), InstrumentError::AlreadyInstrumented);
    }

    #[test]
    fn unselected_functions_add_no_increments(seed in any::<u64>()) {
        let p = generate(seed, Shape::Mixed);
        let only = vec!["main".to_string()];
        let (q, report) = instrument(&p, Some(&only)).unwrap();
        prop_assert!(report.sites.iter().all(|s| s.function == "main"));
        prop_assert!(verify_instrumentation(&p, &q, Some(&only)).is_ok());
        for (name, f) in &q.functions {
            if name != "main" {
                prop_assert_eq!(f, p.function(name).unwrap());
            }
        }
        let ex = traced(&q, &tape(seed));
        let trace = ex.trace.as_deref().unwrap();
        prop_assert!(trace.iter().filter(|e| e.incts).all(|e| e.function == "main"));
        prop_assert_eq!(outcome(&ex), outcome(&traced(&p, &tape(seed))));
    }
}
