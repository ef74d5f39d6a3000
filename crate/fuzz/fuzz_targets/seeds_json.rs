#![no_main]
use cutlayer::formats::GrayImage;
use cutlayer::segment::{seeded_weights, SeedSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = SeedSpec::from_json(text) else { return };
    let img = GrayImage::new(4, 4, (0..16).map(|i| i * 16).collect()).unwrap();
    if let Ok(w) = seeded_weights(&img, &spec) {
        assert!(w.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
});
