#![no_main]

use ego3dpose_core::dataset::decode_f64;
use ego3dpose_core::heatmap::decode_f32;
use libfuzzer_sys::fuzz_target;

// First byte picks the claimed shape, the rest is the raw tensor.
fuzz_target!(|data: &[u8]| {
    let Some((&k, raw)) = data.split_first() else { return };
    let len = (k as usize % 32) * 3;
    if let Ok(v) = decode_f64(raw, len, "fuzz") {
        assert_eq!(v.len(), len);
        assert!(v.iter().all(|x| x.is_finite()));
    }
    let shape = [1 + (k as usize & 3), 1 + (k as usize >> 2 & 7), 1 + (k as usize >> 5)];
    if let Ok(v) = decode_f32(raw, &shape, "fuzz") {
        assert_eq!(v.len(), shape.iter().product::<usize>());
        assert!(v.iter().all(|x| x.is_finite()));
    }
});
