#![no_main]

use ego3dpose_core::Skeleton;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sk) = Skeleton::from_json(text) {
        // Anything accepted must survive a round trip and index safely.
        let again = Skeleton::from_json(&sk.to_json()).expect("re-parse");
        assert_eq!(again, sk);
        for l in sk.all_limbs.iter().chain(&sk.peh_limbs) {
            assert!(l.parent < sk.n_joints() && l.child < sk.n_joints());
            let _ = sk.limb_name(*l);
        }
    }
});
