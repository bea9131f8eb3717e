#![no_main]

use ego3dpose_nn::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        assert!((1..=2).contains(&ck.meta.stage));
        let bytes = ck.to_bytes().expect("re-encode");
        let again = Checkpoint::from_bytes(&bytes).expect("re-decode");
        assert_eq!(again.meta, ck.meta);
        assert_eq!(again.tensors.len(), ck.tensors.len());
    }
});
