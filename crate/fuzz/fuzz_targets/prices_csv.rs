#![no_main]

use assetgraph::ingest::{read_panel, CsvSchema, GapPolicy};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = CsvSchema::default();
    for policy in [GapPolicy::DropIncomplete, GapPolicy::ForwardFill { max_days: 3 }] {
        if let Ok(load) = read_panel(data, "fuzz", &schema, policy) {
            let panel = &load.panel;
            assert!(panel.prices().iter().flatten().all(|p| p.is_finite() && *p > 0.0));
            assert!(panel.calendar().dates().windows(2).all(|w| w[0] < w[1]));
        }
    }
});
