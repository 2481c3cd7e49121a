#![no_main]

use libfuzzer_sys::fuzz_target;
use rdlocal::io::{read_csv, ColumnMap, CsvOptions, Role};

// First byte picks the options and which optional roles are mapped.
fuzz_target!(|data: &[u8]| {
    let Some((&flags, body)) = data.split_first() else {
        return;
    };
    let mut map = ColumnMap::new();
    if flags & 1 != 0 {
        map.insert("treatment", Role::Treatment);
    }
    if flags & 2 != 0 {
        map.insert("cutoff", Role::Cutoff);
    }
    if flags & 4 != 0 {
        map.insert("score2", Role::Score2);
    }
    if flags & 8 != 0 {
        map.insert("z", Role::Covariate);
    }
    let opts = CsvOptions {
        delimiter: if flags & 16 != 0 { b';' } else { b',' },
        outcome_optional: flags & 32 != 0,
        ..CsvOptions::default()
    };
    if let Ok(s) = read_csv(body, &map, &opts) {
        let n = s.len();
        assert!(n > 0);
        assert_eq!(s.outcome().len(), n);
        assert_eq!(s.assignment().len(), n);
        if let Some(d) = s.received() {
            assert_eq!(d.len(), n);
            assert!(d.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        if let Some(z) = s.score2() {
            assert_eq!(z.len(), n);
        }
        for c in s.covariates() {
            assert_eq!(c.values.len(), n);
        }
        let _ = s.mass_point_summary();
    }
});
