#![no_main]

use assetgraph::ingest::read_categories;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = read_categories(data, "fuzz") {
        for (ticker, category) in map.iter() {
            assert_eq!(map.get(ticker), Some(category));
        }
    }
});
