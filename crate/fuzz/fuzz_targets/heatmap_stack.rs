#![no_main]

use ego3dpose_core::HeatmapStack;
use libfuzzer_sys::fuzz_target;

// Layout: u16 LE sidecar length, sidecar JSON, raw f32 tensor bytes.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    if n > rest.len() {
        return;
    }
    let Ok(side) = std::str::from_utf8(&rest[..n]) else { return };
    if let Ok(stack) = HeatmapStack::decode(side, &rest[n..]) {
        assert_eq!(stack.data.len(), stack.n_channels() * stack.height * stack.width);
        assert!(stack.data.iter().all(|v| v.is_finite()));
        for c in 0..stack.n_channels() {
            let _ = stack.heatmap(c);
        }
        if stack.n_channels() >= 2 {
            let _ = stack.decode_angle(0, 1);
        }
    }
});
