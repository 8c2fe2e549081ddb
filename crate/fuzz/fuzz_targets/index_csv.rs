#![no_main]

use assetgraph::ingest::read_index;
use assetgraph::returns::ExternalReturnSeries;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = read_index(data, "fuzz") {
        assert_eq!(index.values().len(), index.calendar().len());
        let _ = ExternalReturnSeries::from_levels(&index);
    }
});
