#![no_main]

use libfuzzer_sys::fuzz_target;
use rdlocal::io::{parse_grid, parse_list, parse_map_entry, parse_point};

// Command-line value parsers; the first byte picks the parser.
fuzz_target!(|data: &[u8]| {
    let Some((&which, body)) = data.split_first() else {
        return;
    };
    let Ok(spec) = std::str::from_utf8(body) else {
        return;
    };
    match which % 4 {
        0 => {
            if let Ok(g) = parse_grid(spec) {
                assert!(!g.is_empty());
                assert!(g.windows(2).all(|w| w[0] <= w[1]));
            }
        }
        1 => {
            if let Ok(p) = parse_point(spec) {
                assert!(p.iter().all(|v| v.is_finite()));
            }
        }
        2 => {
            if let Ok(v) = parse_list(spec) {
                assert!(v.iter().all(|x| x.is_finite()));
            }
        }
        _ => {
            if let Ok((col, _)) = parse_map_entry(spec) {
                assert!(!col.is_empty());
            }
        }
    }
});
