#![no_main]
use cutlayer::partition::compare_with_hungarian;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(cost) = serde_json::from_slice::<Vec<Vec<f64>>>(data) else { return };
    if cost.len() > 6 {
        return;
    }
    if let Ok(cmp) = compare_with_hungarian(&cost, 0.1, 0.1) {
        let mut seen = cmp.hungarian.clone();
        seen.sort_unstable();
        assert!(seen.iter().copied().eq(0..cost.len()));
    }
});
