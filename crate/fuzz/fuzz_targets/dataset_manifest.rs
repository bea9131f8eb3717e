#![no_main]

use ego3dpose_core::dataset::{Manifest, Split};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::from_json(text) {
        assert_eq!(m.indices(Split::Train).len(), m.n_train);
        assert_eq!(m.indices(Split::Test).len(), m.n_test);
        for e in &m.samples {
            assert!(!e.dir.contains(".."));
        }
    }
});
