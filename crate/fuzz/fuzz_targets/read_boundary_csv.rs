#![no_main]

use libfuzzer_sys::fuzz_target;
use rdlocal::io::read_boundary_csv;
use rdlocal::multiscore::{BoundarySpec, Metric};

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = read_boundary_csv(data) {
        assert!(!points.is_empty());
        if let Ok(b) = BoundarySpec::new(points, Metric::Euclidean) {
            let d = b.distance_to([0.0, 0.0]);
            assert!(d >= 0.0 || d.is_nan());
        }
    }
});
