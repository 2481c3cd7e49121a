#![no_main]

use libfuzzer_sys::fuzz_target;
use rdlocal::io::read_cutoffs_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(cutoffs) = read_cutoffs_csv(data) {
        assert!(!cutoffs.is_empty());
    }
});
